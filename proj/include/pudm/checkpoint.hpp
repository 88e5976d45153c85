#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "pudm/tensor_nn.hpp"

namespace pudm {

// Binary checkpoint, all integers/floats little-endian:
//
//   "PUDM"                      4 bytes
//   version                     u32 (currently 1)
//   layer_count                 u32
//   per layer:  rows u32, cols u32, weight f64[rows*cols] row-major, bias f64[rows]
//   data_dim, time_dim, cond_classes          u32 each
//   cond table: rows u32, cols u32, f64[rows*cols] row-major
//   has_optimizer               u8
//   if has_optimizer:
//     step u64, beta1 f64, beta2 f64, eps f64, weight_decay f64
//     first moments   (same per-layer block + cond table block as above)
//     second moments  (same)
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DenoiserParams params;
  std::optional<AdamWState> optimizer;
};

void write_checkpoint(std::ostream& os, const DenoiserParams& params,
                      const AdamWState* optimizer);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::string& path, const DenoiserParams& params,
                     const AdamWState* optimizer);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pudm
