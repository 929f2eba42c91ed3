#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stlkit/config.hpp"
#include "stlkit/model.hpp"

namespace stlkit {

// Checkpoint file layout (all little-endian):
//   magic "STLW", u32 version
//   u32 tensor count
//   per tensor: u16 name length, name bytes, u8 ndim (= 4), u32 dims[4],
//               raw f32 data
//   footer: u32 epoch, f64 validation accuracy,
//           u32 rng count, per rng: u16 name length, name, u64 state[4],
//           u32 config text length, config text (the plain-text schema)
struct CheckpointTensor {
  std::string name;
  Dims4 dims;
  std::vector<float> data;
};

struct RngStateEntry {
  std::string name;
  std::array<std::uint64_t, 4> state{};
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::vector<CheckpointTensor> tensors;
  std::uint32_t epoch = 0;
  double val_accuracy = 0.0;
  std::vector<RngStateEntry> rng_states;
  std::string config_text;
};

Checkpoint make_checkpoint(const NetworkConfig& config,
                           const ModelParams<float>& params,
                           std::uint32_t epoch, double val_accuracy,
                           std::vector<RngStateEntry> rng_states);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds parameters against an expected config; a dimension mismatch or
// missing tensor raises LoadError naming the first offending tensor.
ModelParams<float> params_from_checkpoint(const Checkpoint& ckpt,
                                          const NetworkConfig& config);

// The config echoed inside the checkpoint.
NetworkConfig config_from_checkpoint(const Checkpoint& ckpt);

}  // namespace stlkit
