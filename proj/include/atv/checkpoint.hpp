#pragma once

#include <string>
#include <vector>

#include "atv/tensor.hpp"

namespace atv {

struct CheckpointRecord {
  std::string name;
  Tensor<float> tensor;
};

struct Checkpoint {
  std::string config_json;
  std::vector<CheckpointRecord> records;

  const Tensor<float>* find(const std::string& name) const;
};

// Binary format, all integers little-endian 32-bit:
//   "ATVS" | version | config_len, config bytes | record_count |
//   per record: name_len, name, rank, dims[rank], f32 data
// Round trips are bit-exact; unknown versions, bad magic, truncation and
// duplicate record names are rejected.
void checkpoint_save(const std::string& path, const std::string& config_json,
                     const std::vector<CheckpointRecord>& records);
Checkpoint checkpoint_load(const std::string& path);

}  // namespace atv
