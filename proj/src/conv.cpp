#include "bnpp/conv.hpp"

#include <string>

namespace bnpp {

namespace {

void check_conv_shapes(const std::vector<std::size_t>& input,
                       const std::vector<std::size_t>& weights, const ConvSpec& spec) {
    spec.validate();
    if (input != std::vector<std::size_t>{spec.c, spec.h_in, spec.w_in}) {
        throw ShapeError("conv input shape does not match spec");
    }
    if (weights != std::vector<std::size_t>{spec.o, spec.c, spec.kh, spec.kw}) {
        throw ShapeError("conv weight shape does not match spec");
    }
}

}  // namespace

DenseTensor conv_real(const DenseTensor& input, const DenseTensor& weights,
                      const ConvSpec& spec, double pad_value) {
    check_conv_shapes(input.shape(), weights.shape(), spec);

    const std::size_t ho = spec.h_out(), wo = spec.w_out();
    const std::size_t plane = spec.h_in * spec.w_in;
    const std::size_t ksize = spec.kh * spec.kw;
    DenseTensor out({spec.o, ho, wo});
    std::span<const double> iv = input.data();
    std::span<const double> wv = weights.data();
    std::span<double> ov = out.data();
    const long total = static_cast<long>(spec.o * ho * wo);

#pragma omp parallel for schedule(static)
    for (long flat = 0; flat < total; ++flat) {
        const std::size_t oc = static_cast<std::size_t>(flat) / (ho * wo);
        const std::size_t oy = (static_cast<std::size_t>(flat) / wo) % ho;
        const std::size_t ox = static_cast<std::size_t>(flat) % wo;
        const long base_y = static_cast<long>(oy * spec.stride) - static_cast<long>(spec.padding);
        const long base_x = static_cast<long>(ox * spec.stride) - static_cast<long>(spec.padding);
        double acc = 0.0;
        for (std::size_t ch = 0; ch < spec.c; ++ch) {
            const double* wrow = wv.data() + (oc * spec.c + ch) * ksize;
            for (std::size_t ky = 0; ky < spec.kh; ++ky) {
                const long iy = base_y + static_cast<long>(ky);
                for (std::size_t kx = 0; kx < spec.kw; ++kx) {
                    const long ix = base_x + static_cast<long>(kx);
                    const bool inside = iy >= 0 && iy < static_cast<long>(spec.h_in) &&
                                        ix >= 0 && ix < static_cast<long>(spec.w_in);
                    const double x = inside ? iv[ch * plane + iy * spec.w_in + ix] : pad_value;
                    acc += x * wrow[ky * spec.kw + kx];
                }
            }
        }
        ov[flat] = acc;
    }
    return out;
}

PackedTensor pack_receptive_fields(const PackedTensor& input, const ConvSpec& spec) {
    spec.validate();
    if (input.logical_shape() != std::vector<std::size_t>{spec.c, spec.h_in, spec.w_in}) {
        throw ShapeError("packed input shape does not match spec");
    }
    const std::size_t ho = spec.h_out(), wo = spec.w_out();
    PackedTensor fields = PackedTensor::zeros({ho * wo, spec.field()});
    for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::size_t row = oy * wo + ox;
            const long base_y = static_cast<long>(oy * spec.stride) - static_cast<long>(spec.padding);
            const long base_x = static_cast<long>(ox * spec.stride) - static_cast<long>(spec.padding);
            std::size_t col = 0;
            for (std::size_t ch = 0; ch < spec.c; ++ch) {
                for (std::size_t ky = 0; ky < spec.kh; ++ky) {
                    const long iy = base_y + static_cast<long>(ky);
                    for (std::size_t kx = 0; kx < spec.kw; ++kx, ++col) {
                        const long ix = base_x + static_cast<long>(kx);
                        const bool inside = iy >= 0 && iy < static_cast<long>(spec.h_in) &&
                                            ix >= 0 && ix < static_cast<long>(spec.w_in);
                        // Out-of-bounds keeps the 0 bit: the -1 encoding.
                        if (inside && input.bit(ch, iy * spec.w_in + ix)) {
                            fields.set_bit(row, col);
                        }
                    }
                }
            }
        }
    }
    return fields;
}

DenseTensor conv_binary(const PackedTensor& input, const PackedTensor& weights,
                        const ConvSpec& spec) {
    spec.validate();
    if (weights.logical_shape() != std::vector<std::size_t>{spec.o, spec.c, spec.kh, spec.kw}) {
        throw ShapeError("packed weight shape does not match spec");
    }
    const PackedTensor fields = pack_receptive_fields(input, spec);

    const std::size_t ho = spec.h_out(), wo = spec.w_out();
    const std::size_t positions = ho * wo;
    DenseTensor out({spec.o, ho, wo});
    std::span<double> ov = out.data();
    const long total = static_cast<long>(spec.o * positions);

#pragma omp parallel for schedule(static)
    for (long flat = 0; flat < total; ++flat) {
        const std::size_t oc = static_cast<std::size_t>(flat) / positions;
        const std::size_t p = static_cast<std::size_t>(flat) % positions;
        ov[flat] = static_cast<double>(xnor_dot(weights.row(oc), fields.row(p), spec.field()));
    }
    return out;
}

DenseTensor rescale(const DenseTensor& conv_out, const ScaleFactor& scale,
                    const ConvSpec& spec) {
    scale.validate(spec);
    const std::size_t o = spec.o, h = spec.h_out(), w = spec.w_out();
    if (conv_out.shape() != std::vector<std::size_t>{o, h, w}) {
        throw ShapeError("rescale input is not the conv output shape");
    }
    DenseTensor out({o, h, w});
    std::span<const double> bv = conv_out.data();
    std::span<double> ov = out.data();
    switch (scale.kind) {
        case ScaleCase::case1:
            for (std::size_t i = 0; i < o; ++i) {
                const double a = scale.alpha[i];
                for (std::size_t p = 0; p < h * w; ++p) {
                    ov[i * h * w + p] = bv[i * h * w + p] * a;
                }
            }
            break;
        case ScaleCase::case2:
            for (std::size_t f = 0; f < o * h * w; ++f) ov[f] = bv[f] * scale.alpha[f];
            break;
        case ScaleCase::case3:
            for (std::size_t i = 0; i < o; ++i) {
                const double a = scale.alpha[i];
                for (std::size_t p = 0; p < h * w; ++p) {
                    ov[i * h * w + p] = bv[i * h * w + p] * (a * scale.beta[p]);
                }
            }
            break;
        case ScaleCase::case4:
            for (std::size_t i = 0; i < o; ++i) {
                const double a = scale.alpha[i];
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x = 0; x < w; ++x) {
                        ov[(i * h + y) * w + x] =
                            bv[(i * h + y) * w + x] * (a * (scale.beta[y] * scale.gamma[x]));
                    }
                }
            }
            break;
        case ScaleCase::analytic_xnor:
            for (std::size_t i = 0; i < o; ++i) {
                const double a = scale.alpha[i];
                for (std::size_t p = 0; p < h * w; ++p) {
                    ov[i * h * w + p] = bv[i * h * w + p] * (a * scale.k_map[p]);
                }
            }
            break;
    }
    return out;
}

}  // namespace bnpp
