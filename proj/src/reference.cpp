#include "bnpp/reference.hpp"

#include "bnpp/bitpack.hpp"

namespace bnpp::reference {

DenseTensor conv_real_serial(const DenseTensor& input, const DenseTensor& weights,
                             const ConvSpec& spec, double pad_value) {
    spec.validate();
    if (input.shape() != std::vector<std::size_t>{spec.c, spec.h_in, spec.w_in} ||
        weights.shape() != std::vector<std::size_t>{spec.o, spec.c, spec.kh, spec.kw}) {
        throw ShapeError("reference conv shapes do not match spec");
    }
    const std::size_t ho = spec.h_out(), wo = spec.w_out();
    DenseTensor out({spec.o, ho, wo});
    for (std::size_t oc = 0; oc < spec.o; ++oc) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (std::size_t ch = 0; ch < spec.c; ++ch) {
                    for (std::size_t ky = 0; ky < spec.kh; ++ky) {
                        for (std::size_t kx = 0; kx < spec.kw; ++kx) {
                            const long iy = static_cast<long>(oy * spec.stride + ky) -
                                            static_cast<long>(spec.padding);
                            const long ix = static_cast<long>(ox * spec.stride + kx) -
                                            static_cast<long>(spec.padding);
                            double x = pad_value;
                            if (iy >= 0 && iy < static_cast<long>(spec.h_in) && ix >= 0 &&
                                ix < static_cast<long>(spec.w_in)) {
                                x = input[input.offset3(ch, iy, ix)];
                            }
                            acc += x * weights[((oc * spec.c + ch) * spec.kh + ky) * spec.kw + kx];
                        }
                    }
                }
                out[out.offset3(oc, oy, ox)] = acc;
            }
        }
    }
    return out;
}

DenseTensor conv_binary_serial(const DenseTensor& input, const DenseTensor& weights,
                               const ConvSpec& spec) {
    spec.validate();
    if (input.shape() != std::vector<std::size_t>{spec.c, spec.h_in, spec.w_in} ||
        weights.shape() != std::vector<std::size_t>{spec.o, spec.c, spec.kh, spec.kw}) {
        throw ShapeError("reference conv shapes do not match spec");
    }
    const std::size_t ho = spec.h_out(), wo = spec.w_out();
    DenseTensor out({spec.o, ho, wo});
    for (std::size_t oc = 0; oc < spec.o; ++oc) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                long long acc = 0;
                for (std::size_t ch = 0; ch < spec.c; ++ch) {
                    for (std::size_t ky = 0; ky < spec.kh; ++ky) {
                        for (std::size_t kx = 0; kx < spec.kw; ++kx) {
                            const long iy = static_cast<long>(oy * spec.stride + ky) -
                                            static_cast<long>(spec.padding);
                            const long ix = static_cast<long>(ox * spec.stride + kx) -
                                            static_cast<long>(spec.padding);
                            int xs = -1;  // padding binarizes to -1
                            if (iy >= 0 && iy < static_cast<long>(spec.h_in) && ix >= 0 &&
                                ix < static_cast<long>(spec.w_in)) {
                                xs = sign(input[input.offset3(ch, iy, ix)]);
                            }
                            const int ws =
                                sign(weights[((oc * spec.c + ch) * spec.kh + ky) * spec.kw + kx]);
                            acc += xs * ws;
                        }
                    }
                }
                out[out.offset3(oc, oy, ox)] = static_cast<double>(acc);
            }
        }
    }
    return out;
}

long long sign_dot_serial(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("sign_dot_serial length mismatch");
    long long acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += sign(a[i]) * sign(b[i]);
    return acc;
}

}  // namespace bnpp::reference
