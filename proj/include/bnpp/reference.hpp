#pragma once

#include "bnpp/conv_spec.hpp"
#include "bnpp/tensor.hpp"

// Serial reference kernels: straightforward nested loops with no packing,
// no im2col and no threading. They are the ground truth the parallel
// kernels are tested against and the baseline the benchmark compares
// with. Keep them dumb.
namespace bnpp::reference {

// Plain 6-nested-loop cross-correlation.
DenseTensor conv_real_serial(const DenseTensor& input, const DenseTensor& weights,
                             const ConvSpec& spec, double pad_value = 0.0);

// Sign-domain convolution computed as a naive +-1 loop on the dense
// inputs (binarization applied on the fly). Padded positions are -1.
DenseTensor conv_binary_serial(const DenseTensor& input, const DenseTensor& weights,
                               const ConvSpec& spec);

// Naive +-1 dot product of two sign-binarized vectors.
long long sign_dot_serial(std::span<const double> a, std::span<const double> b);

}  // namespace bnpp::reference
