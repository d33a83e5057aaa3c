#include "bnpp/optimize.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace bnpp {

namespace {

struct OutDims {
    std::size_t o, h, w;
};

OutDims check_recon_shapes(const DenseTensor& r, const DenseTensor& b, const ScaleFactor& sf) {
    if (r.ndim() != 3) throw ShapeError("reconstruction tensors must be o*h*w");
    if (!r.same_shape(b)) throw ShapeError("reference/binary output shape mismatch");
    const OutDims d{r.shape()[0], r.shape()[1], r.shape()[2]};
    sf.validate_dims(d.o, d.h, d.w);
    return d;
}

inline double dloss(double residual, LossKind kind) {
    if (kind == LossKind::l2) return 2.0 * residual;
    return residual > 0.0 ? 1.0 : (residual < 0.0 ? -1.0 : 0.0);
}

inline double floss(double residual, LossKind kind) {
    return kind == LossKind::l2 ? residual * residual : std::fabs(residual);
}

// One fused pass: loss plus gradients w.r.t. every factor of `sf`.
// Gradient tensors in `out` must already have the factor shapes.
double loss_and_factor_grads(const DenseTensor& r, const DenseTensor& b, const ScaleFactor& sf,
                             LossKind kind, FactorGrads* out) {
    const OutDims d = check_recon_shapes(r, b, sf);
    const std::size_t plane = d.h * d.w;
    const double inv_n = 1.0 / static_cast<double>(d.o * plane);
    std::span<const double> rv = r.data();
    std::span<const double> bv = b.data();
    double loss = 0.0;

    auto grad_at = [&](std::size_t flat, double gamma) {
        const double res = rv[flat] - bv[flat] * gamma;
        loss += floss(res, kind);
        return dloss(res, kind) * (-bv[flat]) * inv_n;
    };

    switch (sf.kind) {
        case ScaleCase::case1:
            for (std::size_t i = 0; i < d.o; ++i) {
                const double a = sf.alpha[i];
                double ga = 0.0;
                for (std::size_t p = 0; p < plane; ++p) ga += grad_at(i * plane + p, a);
                if (out) out->alpha[i] = ga;
            }
            break;
        case ScaleCase::case2:
            for (std::size_t f = 0; f < d.o * plane; ++f) {
                const double g = grad_at(f, sf.alpha[f]);
                if (out) out->alpha[f] = g;
            }
            break;
        case ScaleCase::case3:
            if (out) {
                for (std::size_t p = 0; p < plane; ++p) out->beta[p] = 0.0;
            }
            for (std::size_t i = 0; i < d.o; ++i) {
                const double a = sf.alpha[i];
                double ga = 0.0;
                for (std::size_t p = 0; p < plane; ++p) {
                    const double g = grad_at(i * plane + p, a * sf.beta[p]);
                    ga += g * sf.beta[p];
                    if (out) out->beta[p] += g * a;
                }
                if (out) out->alpha[i] = ga;
            }
            break;
        case ScaleCase::case4:
            if (out) {
                for (std::size_t y = 0; y < d.h; ++y) out->beta[y] = 0.0;
                for (std::size_t x = 0; x < d.w; ++x) out->gamma[x] = 0.0;
            }
            for (std::size_t i = 0; i < d.o; ++i) {
                const double a = sf.alpha[i];
                double ga = 0.0;
                for (std::size_t y = 0; y < d.h; ++y) {
                    const double by = sf.beta[y];
                    double gb = 0.0;
                    for (std::size_t x = 0; x < d.w; ++x) {
                        const double gx = sf.gamma[x];
                        const double g = grad_at((i * d.h + y) * d.w + x, a * (by * gx));
                        ga += g * (by * gx);
                        gb += g * gx;
                        if (out) out->gamma[x] += g * by;
                    }
                    if (out) out->beta[y] += gb * a;
                }
                if (out) out->alpha[i] = ga;
            }
            break;
        case ScaleCase::analytic_xnor:
            if (out) throw ValueError("analytic_xnor has no learnable factors");
            for (std::size_t i = 0; i < d.o; ++i) {
                const double a = sf.alpha[i];
                for (std::size_t p = 0; p < plane; ++p) {
                    const double res = rv[i * plane + p] - bv[i * plane + p] * (a * sf.k_map[p]);
                    loss += floss(res, kind);
                }
            }
            break;
    }
    return loss * inv_n;
}

FactorGrads make_grad_buffers(const ScaleFactor& sf) {
    FactorGrads g;
    switch (sf.kind) {
        case ScaleCase::case1:
        case ScaleCase::case2:
            g.alpha = DenseTensor(sf.alpha.shape());
            break;
        case ScaleCase::case3:
            g.alpha = DenseTensor(sf.alpha.shape());
            g.beta = DenseTensor(sf.beta.shape());
            break;
        case ScaleCase::case4:
            g.alpha = DenseTensor(sf.alpha.shape());
            g.beta = DenseTensor(sf.beta.shape());
            g.gamma = DenseTensor(sf.gamma.shape());
            break;
        case ScaleCase::analytic_xnor:
            throw ValueError("analytic_xnor has no learnable factors");
    }
    return g;
}

}  // namespace

ReconLoss recon_loss(const DenseTensor& reference, const DenseTensor& binary_out,
                     const ScaleFactor& scale, LossKind kind) {
    const double value = loss_and_factor_grads(reference, binary_out, scale, kind, nullptr);
    return ReconLoss{kind, value};
}

FactorGrads grad_scale(const DenseTensor& reference, const DenseTensor& binary_out,
                       const ScaleFactor& scale, LossKind kind) {
    FactorGrads g = make_grad_buffers(scale);
    loss_and_factor_grads(reference, binary_out, scale, kind, &g);
    return g;
}

FactorGrads chain_scale_grads(const ScaleFactor& scale, const DenseTensor& dense_grad) {
    if (dense_grad.ndim() != 3) throw ShapeError("dense scale gradient must be o*h*w");
    const std::size_t o = dense_grad.shape()[0];
    const std::size_t h = dense_grad.shape()[1];
    const std::size_t w = dense_grad.shape()[2];
    scale.validate_dims(o, h, w);
    const std::size_t plane = h * w;
    std::span<const double> gv = dense_grad.data();

    FactorGrads out = make_grad_buffers(scale);
    switch (scale.kind) {
        case ScaleCase::case1:
            for (std::size_t i = 0; i < o; ++i) {
                double acc = 0.0;
                for (std::size_t p = 0; p < plane; ++p) acc += gv[i * plane + p];
                out.alpha[i] = acc;
            }
            break;
        case ScaleCase::case2:
            for (std::size_t f = 0; f < o * plane; ++f) out.alpha[f] = gv[f];
            break;
        case ScaleCase::case3:
            for (std::size_t i = 0; i < o; ++i) {
                double acc = 0.0;
                for (std::size_t p = 0; p < plane; ++p) {
                    acc += gv[i * plane + p] * scale.beta[p];
                    out.beta[p] += gv[i * plane + p] * scale.alpha[i];
                }
                out.alpha[i] = acc;
            }
            break;
        case ScaleCase::case4:
            for (std::size_t i = 0; i < o; ++i) {
                const double a = scale.alpha[i];
                double acc = 0.0;
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x = 0; x < w; ++x) {
                        const double g = gv[(i * h + y) * w + x];
                        acc += g * (scale.beta[y] * scale.gamma[x]);
                        out.beta[y] += g * a * scale.gamma[x];
                        out.gamma[x] += g * a * scale.beta[y];
                    }
                }
                out.alpha[i] = acc;
            }
            break;
        case ScaleCase::analytic_xnor:
            throw ValueError("analytic_xnor has no learnable factors");
    }
    return out;
}

DenseTensor closed_form_case1_l2(const DenseTensor& reference, const DenseTensor& binary_out) {
    if (reference.ndim() != 3 || !reference.same_shape(binary_out)) {
        throw ShapeError("closed_form_case1_l2 expects matching o*h*w tensors");
    }
    const std::size_t o = reference.shape()[0];
    const std::size_t plane = reference.shape()[1] * reference.shape()[2];
    DenseTensor gamma({o});
    for (std::size_t i = 0; i < o; ++i) {
        double rb = 0.0, bb = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
            rb += reference[i * plane + p] * binary_out[i * plane + p];
            bb += binary_out[i * plane + p] * binary_out[i * plane + p];
        }
        gamma[i] = bb == 0.0 ? 0.0 : rb / bb;
    }
    return gamma;
}

void AdamState::init(const std::vector<DenseTensor*>& params) {
    step = 0;
    m.clear();
    v.clear();
    for (const DenseTensor* p : params) {
        m.emplace_back(p->shape());
        v.emplace_back(p->shape());
    }
}

void adam_step(const std::vector<DenseTensor*>& params,
               const std::vector<const DenseTensor*>& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw ShapeError("adam_step: parameter/gradient/state count mismatch");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        DenseTensor& p = *params[k];
        const DenseTensor& g = *grads[k];
        if (!p.same_shape(g) || !p.same_shape(state.m[k])) {
            throw ShapeError("adam_step: shape mismatch in parameter group " + std::to_string(k));
        }
        std::span<double> pv = p.data();
        std::span<const double> gv = g.data();
        std::span<double> mv = state.m[k].data();
        std::span<double> vv = state.v[k].data();
        for (std::size_t i = 0; i < pv.size(); ++i) {
            mv[i] = state.beta1 * mv[i] + (1.0 - state.beta1) * gv[i];
            vv[i] = state.beta2 * vv[i] + (1.0 - state.beta2) * gv[i] * gv[i];
            const double mhat = mv[i] / bc1;
            const double vhat = vv[i] / bc2;
            pv[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

DenseTensor ste_backward(const DenseTensor& x, const DenseTensor& upstream) {
    if (!x.same_shape(upstream)) throw ShapeError("ste_backward shape mismatch");
    DenseTensor out(x.shape());
    std::span<const double> xv = x.data();
    std::span<const double> uv = upstream.data();
    std::span<double> ov = out.data();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        ov[i] = std::fabs(xv[i]) <= 1.0 ? uv[i] : 0.0;
    }
    return out;
}

FitResult fit_scale(const DenseTensor& reference, const DenseTensor& binary_out, ScaleCase kind,
                    const ConvSpec& spec, const FitOptions& options, const DenseTensor* weights) {
    ScaleFactor sf = init_scale(kind, spec, options.init, weights);
    check_recon_shapes(reference, binary_out, sf);

    std::vector<DenseTensor*> params;
    FactorGrads grads = make_grad_buffers(sf);
    std::vector<const DenseTensor*> grad_ptrs;
    params.push_back(&sf.alpha);
    grad_ptrs.push_back(&grads.alpha);
    if (kind == ScaleCase::case3 || kind == ScaleCase::case4) {
        params.push_back(&sf.beta);
        grad_ptrs.push_back(&grads.beta);
    }
    if (kind == ScaleCase::case4) {
        params.push_back(&sf.gamma);
        grad_ptrs.push_back(&grads.gamma);
    }

    AdamState state;
    state.lr = options.lr;
    state.init(params);

    FitResult result;
    double window_anchor = std::numeric_limits<double>::infinity();
    for (std::size_t step = 0; step < options.max_steps; ++step) {
        const double loss = loss_and_factor_grads(reference, binary_out, sf, options.kind, &grads);
        if (step % options.window == 0) {
            const double improvement = window_anchor - loss;
            if (improvement < options.rel_tol * std::max(std::fabs(window_anchor), 1e-30)) {
                result.converged = true;
                break;
            }
            window_anchor = loss;
        }
        adam_step(params, grad_ptrs, state);
        ++result.steps;
    }
    result.loss = loss_and_factor_grads(reference, binary_out, sf, options.kind, nullptr);
    result.scale = std::move(sf);
    return result;
}

}  // namespace bnpp
