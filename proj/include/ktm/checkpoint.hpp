#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ktm/model.hpp"

namespace ktm {

// Binary checkpoint, little-endian:
//   "KTMCKPT\0"  u32 version(=1)
//   u64 config_len, config JSON bytes (model config, informational)
//   u64 count, then per tensor: u32 name_len, name, u32 rank, u64 dims[rank],
//       f64 values[prod(dims)]
//   u64 FNV-1a-64 of every preceding byte
class CheckpointCorrupt : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string config_json;
  std::vector<NamedArray> tensors;
};

std::string model_config_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

Checkpoint snapshot(const KnowledgeTracingModel& model);
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const KnowledgeTracingModel& model, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

// Copies values into the model; names and shapes must match exactly.
void restore(KnowledgeTracingModel& model, const Checkpoint& ckpt);

std::uint64_t fnv1a64(const std::string& bytes);
// Hash of the encoded parameter state, for read-only checks.
std::uint64_t parameter_hash(const KnowledgeTracingModel& model);

}  // namespace ktm
