#pragma once

#include "bnpp/bitpack.hpp"
#include "bnpp/conv_spec.hpp"
#include "bnpp/scaling.hpp"
#include "bnpp/tensor.hpp"

namespace bnpp {

// Dense cross-correlation (no kernel flip), OpenMP-parallel over output
// elements. Accumulation is double precision with a fixed per-output
// summation order, so results are bit-identical for any thread count.
//
// Out-of-bounds positions contribute `pad_value`. The default 0 is the
// usual zero padding; equivalence tests against the binary kernel pass
// -1 so that padding matches sign(0) = -1 on the binary side.
DenseTensor conv_real(const DenseTensor& input, const DenseTensor& weights,
                      const ConvSpec& spec, double pad_value = 0.0);

// Binary convolution over packed sign tensors. Each output element is
// one xnor_dot over the flattened receptive field; results are exact
// integers (stored as doubles). Padded positions contribute -1.
//
// `input` is the packed {c, h_in, w_in} feature map and `weights` the
// packed {o, c, kh, kw} kernel (one row per output channel).
DenseTensor conv_binary(const PackedTensor& input, const PackedTensor& weights,
                        const ConvSpec& spec);

// Receptive-field reorganization of a packed feature map: one row of
// c*kh*kw bits per output position, so the convolution becomes a row-row
// dot product. Exposed for tests and benchmarks.
PackedTensor pack_receptive_fields(const PackedTensor& input, const ConvSpec& spec);

// Element-wise product of a conv output with the materialized scale,
// broadcasting per the factor's structure.
DenseTensor rescale(const DenseTensor& conv_out, const ScaleFactor& scale,
                    const ConvSpec& spec);

}  // namespace bnpp
