#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bnpp/toynet.hpp"

namespace bnpp::model_io {

// Binary model container, little-endian throughout:
//
//   "BNPPMDL1"                                   8-byte magic
//   u32 version (currently 1)
//   u32 in_c, img_h, img_w, num_classes, n_blocks
//   stem record     u32 kind=1, conv spec (8 u32), f32 weights, f32 bias
//   block record    u32 kind=2, conv spec (8 u32),
//                   f32 run_mean/run_var/scale/shift (c each),
//                   u64 packed sign weights (o rows, pad bits zero),
//                   u32 scale case tag, f32 factors
//   head record     u32 kind=3, u32 channels, f32 run_mean/run_var/scale/shift
//   classifier      u32 kind=4, u32 in, u32 out, f32 weights, f32 bias
//
// Real tensors are stored as 32-bit floats; finalize() keeps in-memory
// models at exactly those values, so a load reproduces forward passes
// bit-exactly. Loading validates everything and never returns a
// partially constructed model.

std::vector<std::uint8_t> serialize(const toynet::InferenceModel& model);

toynet::InferenceModel deserialize(std::span<const std::uint8_t> bytes);

void save(const toynet::InferenceModel& model, const std::string& path);

toynet::InferenceModel load(const std::string& path);

}  // namespace bnpp::model_io
