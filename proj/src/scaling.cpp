#include "bnpp/scaling.hpp"

#include <cmath>
#include <string>

#include "bnpp/conv.hpp"

namespace bnpp {

const char* scale_case_name(ScaleCase c) {
    switch (c) {
        case ScaleCase::case1: return "case1";
        case ScaleCase::case2: return "case2";
        case ScaleCase::case3: return "case3";
        case ScaleCase::case4: return "case4";
        case ScaleCase::analytic_xnor: return "analytic_xnor";
    }
    return "?";
}

namespace {

void require_shape(const DenseTensor& t, const std::vector<std::size_t>& shape,
                   const char* what) {
    if (t.shape() != shape) {
        throw ShapeError(std::string("scale factor ") + what + " has wrong shape");
    }
}

}  // namespace

void ScaleFactor::validate(const ConvSpec& spec) const {
    validate_dims(spec.o, spec.h_out(), spec.w_out());
}

void ScaleFactor::validate_dims(std::size_t o, std::size_t h, std::size_t w) const {
    switch (kind) {
        case ScaleCase::case1:
            require_shape(alpha, {o, 1, 1}, "alpha");
            break;
        case ScaleCase::case2:
            require_shape(alpha, {o, h, w}, "alpha");
            break;
        case ScaleCase::case3:
            require_shape(alpha, {o}, "alpha");
            require_shape(beta, {h, w}, "beta");
            break;
        case ScaleCase::case4:
            require_shape(alpha, {o}, "alpha");
            require_shape(beta, {h}, "beta");
            require_shape(gamma, {w}, "gamma");
            break;
        case ScaleCase::analytic_xnor:
            require_shape(alpha, {o}, "alpha");
            require_shape(k_map, {h, w}, "k_map");
            break;
    }
}

DenseTensor materialize(const ScaleFactor& sf, const ConvSpec& spec) {
    sf.validate(spec);
    const std::size_t o = spec.o, h = spec.h_out(), w = spec.w_out();
    DenseTensor out({o, h, w});
    std::span<double> ov = out.data();
    switch (sf.kind) {
        case ScaleCase::case1:
            for (std::size_t i = 0; i < o; ++i) {
                const double a = sf.alpha[i];
                for (std::size_t p = 0; p < h * w; ++p) ov[i * h * w + p] = a;
            }
            break;
        case ScaleCase::case2:
            for (std::size_t f = 0; f < o * h * w; ++f) ov[f] = sf.alpha[f];
            break;
        case ScaleCase::case3:
            for (std::size_t i = 0; i < o; ++i) {
                const double a = sf.alpha[i];
                for (std::size_t p = 0; p < h * w; ++p) ov[i * h * w + p] = a * sf.beta[p];
            }
            break;
        case ScaleCase::case4:
            // Spatial product first; see the struct comment.
            for (std::size_t i = 0; i < o; ++i) {
                const double a = sf.alpha[i];
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x = 0; x < w; ++x) {
                        ov[(i * h + y) * w + x] = a * (sf.beta[y] * sf.gamma[x]);
                    }
                }
            }
            break;
        case ScaleCase::analytic_xnor:
            for (std::size_t i = 0; i < o; ++i) {
                const double a = sf.alpha[i];
                for (std::size_t p = 0; p < h * w; ++p) ov[i * h * w + p] = a * sf.k_map[p];
            }
            break;
    }
    return out;
}

DenseTensor analytic_alpha(const DenseTensor& weights) {
    if (weights.ndim() != 4) throw ShapeError("analytic_alpha expects o*c*kh*kw weights");
    if (!weights.all_finite()) throw ValueError("analytic_alpha: non-finite weights");
    const std::size_t o = weights.shape()[0];
    const std::size_t n = weights.numel() / o;
    DenseTensor alpha({o});
    std::span<const double> wv = weights.data();
    for (std::size_t i = 0; i < o; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += std::fabs(wv[i * n + j]);
        alpha[i] = acc / static_cast<double>(n);
    }
    return alpha;
}

DenseTensor analytic_k(const DenseTensor& input, const ConvSpec& spec) {
    spec.validate();
    if (spec.stride != 1) throw ShapeError("analytic_k requires stride 1");
    if (input.shape() != std::vector<std::size_t>{spec.c, spec.h_in, spec.w_in}) {
        throw ShapeError("analytic_k input does not match spec");
    }

    // A = channel-mean of |I|, shape {1, h_in, w_in}.
    DenseTensor a({1, spec.h_in, spec.w_in});
    std::span<const double> iv = input.data();
    const std::size_t plane = spec.h_in * spec.w_in;
    for (std::size_t p = 0; p < plane; ++p) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < spec.c; ++ch) acc += std::fabs(iv[ch * plane + p]);
        a[p] = acc / static_cast<double>(spec.c);
    }

    DenseTensor box = DenseTensor::full({1, 1, spec.kh, spec.kw},
                                        1.0 / static_cast<double>(spec.kh * spec.kw));
    ConvSpec box_spec = spec;
    box_spec.o = 1;
    box_spec.c = 1;
    DenseTensor k = conv_real(a, box, box_spec);  // {1, h_out, w_out}
    return DenseTensor::from({spec.h_out(), spec.w_out()},
                             std::vector<double>(k.data().begin(), k.data().end()));
}

ScaleFactor init_scale(ScaleCase kind, const ConvSpec& spec, InitStrategy strategy,
                       const DenseTensor* weights) {
    spec.validate();
    const std::size_t o = spec.o, h = spec.h_out(), w = spec.w_out();
    ScaleFactor sf;
    sf.kind = kind;
    switch (kind) {
        case ScaleCase::case1:
            sf.alpha = DenseTensor::full({o, 1, 1}, 1.0);
            break;
        case ScaleCase::case2:
            sf.alpha = DenseTensor::full({o, h, w}, 1.0);
            break;
        case ScaleCase::case3:
            sf.alpha = DenseTensor::full({o}, 1.0);
            sf.beta = DenseTensor::full({h, w}, 1.0);
            break;
        case ScaleCase::case4:
            sf.alpha = DenseTensor::full({o}, 1.0);
            sf.beta = DenseTensor::full({h}, 1.0);
            sf.gamma = DenseTensor::full({w}, 1.0);
            break;
        case ScaleCase::analytic_xnor:
            throw ValueError("analytic_xnor factors are computed, not initialized");
    }
    if (strategy == InitStrategy::analytic_warm_start) {
        if (weights == nullptr) throw ValueError("analytic warm start needs weights");
        DenseTensor a = analytic_alpha(*weights);
        if (kind == ScaleCase::case1) {
            for (std::size_t i = 0; i < o; ++i) sf.alpha[i] = a[i];
        } else if (kind == ScaleCase::case2) {
            for (std::size_t i = 0; i < o; ++i) {
                for (std::size_t p = 0; p < h * w; ++p) sf.alpha[i * h * w + p] = a[i];
            }
        } else {
            for (std::size_t i = 0; i < o; ++i) sf.alpha[i] = a[i];
        }
    }
    return sf;
}

ScaleFactor embed_in_case4(const ScaleFactor& case1, const ConvSpec& spec) {
    if (case1.kind != ScaleCase::case1) throw ValueError("embed_in_case4 expects case1");
    case1.validate(spec);
    ScaleFactor sf;
    sf.kind = ScaleCase::case4;
    sf.alpha = DenseTensor({spec.o});
    for (std::size_t i = 0; i < spec.o; ++i) sf.alpha[i] = case1.alpha[i];
    sf.beta = DenseTensor::full({spec.h_out()}, 1.0);
    sf.gamma = DenseTensor::full({spec.w_out()}, 1.0);
    return sf;
}

ScaleFactor embed_in_case3(const ScaleFactor& case4, const ConvSpec& spec) {
    if (case4.kind != ScaleCase::case4) throw ValueError("embed_in_case3 expects case4");
    case4.validate(spec);
    const std::size_t h = spec.h_out(), w = spec.w_out();
    ScaleFactor sf;
    sf.kind = ScaleCase::case3;
    sf.alpha = case4.alpha;
    sf.beta = DenseTensor({h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) sf.beta[y * w + x] = case4.beta[y] * case4.gamma[x];
    }
    return sf;
}

ScaleFactor embed_in_case2(const ScaleFactor& case3, const ConvSpec& spec) {
    if (case3.kind != ScaleCase::case3) throw ValueError("embed_in_case2 expects case3");
    ScaleFactor sf;
    sf.kind = ScaleCase::case2;
    sf.alpha = materialize(case3, spec);
    return sf;
}

}  // namespace bnpp
