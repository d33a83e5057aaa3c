#pragma once

#include <cstddef>

#include "bnpp/errors.hpp"

namespace bnpp {

// Convolution geometry. Output extents are derived, never stored.
struct ConvSpec {
    std::size_t o = 1;        // output channels
    std::size_t c = 1;        // input channels
    std::size_t kh = 1;       // kernel height
    std::size_t kw = 1;       // kernel width
    std::size_t h_in = 1;     // input spatial extents
    std::size_t w_in = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t h_out() const { return (h_in + 2 * padding - kh) / stride + 1; }
    std::size_t w_out() const { return (w_in + 2 * padding - kw) / stride + 1; }

    // Flattened receptive-field length: one binary dot product per output element.
    std::size_t field() const { return c * kh * kw; }

    void validate() const {
        if (o == 0 || c == 0 || kh == 0 || kw == 0 || h_in == 0 || w_in == 0 || stride == 0) {
            throw ShapeError("conv spec extents and stride must be >= 1");
        }
        if (padding == 0 && (h_in < kh || w_in < kw)) {
            throw ShapeError("unpadded input smaller than kernel");
        }
        if (h_in + 2 * padding < kh || w_in + 2 * padding < kw) {
            throw ShapeError("padded input smaller than kernel");
        }
        if (h_out() < 1 || w_out() < 1) {
            throw ShapeError("conv spec yields empty output");
        }
    }
};

}  // namespace bnpp
