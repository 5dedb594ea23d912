#include "atv/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace atv {

namespace {

constexpr char kMagic[4] = {'A', 'T', 'V', 'S'};
constexpr uint32_t kVersion = 1;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error("checkpoint: " + what + " in " + path);
}

void put_u32(std::ostream& out, uint32_t v) {
  const uint8_t bytes[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                            static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  uint8_t bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (in.gcount() != 4) fail(path, "truncated file");
  return static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
         (static_cast<uint32_t>(bytes[2]) << 16) | (static_cast<uint32_t>(bytes[3]) << 24);
}

void put_f32_block(std::ostream& out, const float* data, size_t n) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

void get_f32_block(std::istream& in, float* data, size_t n, const std::string& path) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4));
  if (in.gcount() != static_cast<std::streamsize>(n * 4)) fail(path, "truncated tensor data");
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const CheckpointRecord& r : records) {
    if (r.name == name) return &r.tensor;
  }
  return nullptr;
}

void checkpoint_save(const std::string& path, const std::string& config_json,
                     const std::vector<CheckpointRecord>& records) {
  std::unordered_set<std::string> seen;
  for (const CheckpointRecord& r : records) {
    if (!seen.insert(r.name).second) fail(path, "duplicate record name " + r.name);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(config_json.size()));
  out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  put_u32(out, static_cast<uint32_t>(records.size()));
  for (const CheckpointRecord& r : records) {
    put_u32(out, static_cast<uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put_u32(out, static_cast<uint32_t>(r.tensor.rank()));
    for (int d = 0; d < r.tensor.rank(); ++d) put_u32(out, static_cast<uint32_t>(r.tensor.dim(d)));
    put_f32_block(out, r.tensor.data(), static_cast<size_t>(r.tensor.size()));
  }
  if (!out) fail(path, "short write");
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) fail(path, "bad magic");
  const uint32_t version = get_u32(in, path);
  if (version != kVersion) {
    fail(path, "unsupported format version " + std::to_string(version));
  }
  Checkpoint ck;
  const uint32_t config_len = get_u32(in, path);
  ck.config_json.resize(config_len);
  in.read(ck.config_json.data(), config_len);
  if (in.gcount() != static_cast<std::streamsize>(config_len)) fail(path, "truncated config");
  const uint32_t count = get_u32(in, path);
  std::unordered_set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    const uint32_t name_len = get_u32(in, path);
    if (name_len == 0 || name_len > 4096) fail(path, "bad record name length");
    r.name.resize(name_len);
    in.read(r.name.data(), name_len);
    if (in.gcount() != static_cast<std::streamsize>(name_len)) fail(path, "truncated record name");
    if (!seen.insert(r.name).second) fail(path, "duplicate record name " + r.name);
    const uint32_t rank = get_u32(in, path);
    if (rank < 1 || rank > 4) fail(path, "bad tensor rank in record " + r.name);
    std::vector<int64_t> dims(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      dims[d] = static_cast<int64_t>(get_u32(in, path));
      if (dims[d] < 1) fail(path, "bad extent in record " + r.name);
    }
    r.tensor = Tensor<float>(Shape(dims));
    get_f32_block(in, r.tensor.data(), static_cast<size_t>(r.tensor.size()), path);
    ck.records.push_back(std::move(r));
  }
  return ck;
}

}  // namespace atv
