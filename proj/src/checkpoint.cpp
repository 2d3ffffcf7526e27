#include "maskstream/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace maskstream::pipeline {

namespace {

constexpr char kMagic[] = "MSCKPT1\n";

void put_u32(std::ostream& os, std::uint32_t x) {
  unsigned char b[4] = {(unsigned char)(x & 0xff), (unsigned char)(x >> 8),
                        (unsigned char)(x >> 16), (unsigned char)(x >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + tmp);
    os.write(kMagic, sizeof(kMagic) - 1);
    std::ostringstream meta;
    for (const auto& [k, v] : ckpt.metadata) meta << k << "=" << v << "\n";
    std::string m = meta.str();
    put_u32(os, std::uint32_t(m.size()));
    os.write(m.data(), std::streamsize(m.size()));
    put_u32(os, std::uint32_t(ckpt.params.names().size()));
    for (const auto& name : ckpt.params.names()) {
      const Tensor& t = ckpt.params.get(name);
      put_u32(os, std::uint32_t(name.size()));
      os.write(name.data(), std::streamsize(name.size()));
      put_u32(os, std::uint32_t(t.rows));
      put_u32(os, std::uint32_t(t.cols));
      std::vector<float> buf(t.size());
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = float(t.v[i]);
      os.write(reinterpret_cast<const char*>(buf.data()),
               std::streamsize(buf.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[sizeof(kMagic) - 1];
  is.read(magic, sizeof(magic));
  if (!is || std::string(magic, sizeof(magic)) != kMagic)
    throw std::runtime_error("not a checkpoint file: " + path);
  Checkpoint ckpt;
  std::uint32_t meta_len = get_u32(is);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), meta_len);
  if (!is) throw std::runtime_error("checkpoint: truncated metadata");
  std::istringstream ms(meta);
  std::string line;
  while (std::getline(ms, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  std::uint32_t n = get_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint32_t rows = get_u32(is);
    std::uint32_t cols = get_u32(is);
    Tensor& t = ckpt.params.create(name, int(rows), int(cols));
    std::vector<float> buf(t.size());
    is.read(reinterpret_cast<char*>(buf.data()),
            std::streamsize(buf.size() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint: truncated payload");
    for (std::size_t j = 0; j < buf.size(); ++j) t.v[j] = double(buf[j]);
  }
  return ckpt;
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& ckpts) {
  if (ckpts.empty())
    throw std::invalid_argument("average_checkpoints: empty list");
  Checkpoint out;
  out.metadata = ckpts.front().metadata;
  const auto& names = ckpts.front().params.names();
  for (const auto& c : ckpts) {
    if (c.params.names() != names)
      throw std::invalid_argument("average_checkpoints: name mismatch");
  }
  for (const auto& name : names) {
    const Tensor& first = ckpts.front().params.get(name);
    Tensor& t = out.params.create(name, first.rows, first.cols);
    for (const auto& c : ckpts) {
      const Tensor& src = c.params.get(name);
      if (!src.same_shape(first))
        throw std::invalid_argument("average_checkpoints: shape mismatch on " +
                                    name);
      add_inplace(t, src, 1.0 / double(ckpts.size()));
    }
    for (auto& e : t.v) e = nn::round_f32(e);
  }
  return out;
}

TransplantReport transplant(nn::ParameterSet& target,
                            const nn::ParameterSet& source,
                            const std::vector<std::string>& prefixes) {
  std::vector<std::string> to_copy;
  for (const auto& name : source.names()) {
    bool mapped = false;
    for (const auto& p : prefixes)
      if (name.rfind(p, 0) == 0) mapped = true;
    if (!mapped) continue;
    if (!target.has(name))
      throw std::invalid_argument("transplant: target lacks " + name);
    if (!target.get(name).same_shape(source.get(name)))
      throw std::invalid_argument("transplant: shape mismatch on " + name);
    to_copy.push_back(name);
  }
  TransplantReport report;
  for (const auto& name : to_copy) {
    target.get(name) = source.get(name);
    report.copied.push_back(name);
  }
  for (const auto& name : target.names())
    if (std::find(to_copy.begin(), to_copy.end(), name) == to_copy.end())
      report.kept.push_back(name);
  return report;
}

}  // namespace maskstream::pipeline
