#pragma once
// Checkpoint persistence: text metadata header plus per-parameter
// records with float32 little-endian payloads. Parameters are kept
// float32-representable, so save -> load -> save is byte-identical.

#include <map>
#include <string>

#include "maskstream/nn.hpp"

namespace maskstream::pipeline {

struct Checkpoint {
  nn::ParameterSet params;
  std::map<std::string, std::string> metadata;  // stage, epoch, ...
};

// Writes to a temp file and renames, so failures leave no partial file.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Elementwise mean over checkpoints with identical names/shapes.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& ckpts);

struct TransplantReport {
  std::vector<std::string> copied;
  std::vector<std::string> kept;
};

// Copy every source parameter whose name starts with one of the mapped
// prefixes into target. Verifies names and shapes before any mutation.
TransplantReport transplant(nn::ParameterSet& target,
                            const nn::ParameterSet& source,
                            const std::vector<std::string>& prefixes);

}  // namespace maskstream::pipeline
