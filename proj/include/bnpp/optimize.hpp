#pragma once

#include <cstddef>
#include <vector>

#include "bnpp/scaling.hpp"
#include "bnpp/tensor.hpp"

namespace bnpp {

enum class LossKind { l1, l2 };

// Reconstruction distance between a reference output R and the scaled
// binary output B * Gamma, normalized as the mean over all output
// elements.
struct ReconLoss {
    LossKind kind = LossKind::l1;
    double value = 0.0;
};

ReconLoss recon_loss(const DenseTensor& reference, const DenseTensor& binary_out,
                     const ScaleFactor& scale, LossKind kind);

// Gradients of recon_loss with respect to each factor of the scale,
// chained through the case structure. Fields not used by the case are
// left empty. The L1 subgradient at an exactly-zero residual is 0.
struct FactorGrads {
    DenseTensor alpha;
    DenseTensor beta;
    DenseTensor gamma;
};

FactorGrads grad_scale(const DenseTensor& reference, const DenseTensor& binary_out,
                       const ScaleFactor& scale, LossKind kind);

// Chain an arbitrary dense gradient dL/dGamma ({o,h,w}) through the
// factor structure of `scale`. Used wherever the scale sits inside a
// larger differentiated graph.
FactorGrads chain_scale_grads(const ScaleFactor& scale, const DenseTensor& dense_grad);

// Per-channel least-squares optimum <R_o,B_o>/<B_o,B_o> (0 for an
// all-zero channel). Used as an independent check on the optimizer.
DenseTensor closed_form_case1_l2(const DenseTensor& reference, const DenseTensor& binary_out);

// Adam with bias correction. One moment pair per parameter tensor.
struct AdamState {
    std::size_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<DenseTensor> m;
    std::vector<DenseTensor> v;

    void init(const std::vector<DenseTensor*>& params);
};

void adam_step(const std::vector<DenseTensor*>& params,
               const std::vector<const DenseTensor*>& grads, AdamState& state);

// Straight-through estimator for sign: passes the upstream gradient
// where |x| <= 1 (boundary inclusive), zero elsewhere.
DenseTensor ste_backward(const DenseTensor& x, const DenseTensor& upstream);

// Adam fit of a scale factor to minimize recon_loss(R, B, Gamma).
// Stops when the loss improvement over the trailing window drops below
// rel_tol (relative), or at max_steps.
struct FitOptions {
    LossKind kind = LossKind::l1;
    double lr = 1e-3;
    std::size_t max_steps = 20000;
    std::size_t window = 200;
    double rel_tol = 1e-6;
    InitStrategy init = InitStrategy::ones;
};

struct FitResult {
    ScaleFactor scale;
    double loss = 0.0;
    std::size_t steps = 0;
    bool converged = false;  // plateau reached (as opposed to the step cap)
};

FitResult fit_scale(const DenseTensor& reference, const DenseTensor& binary_out,
                    ScaleCase kind, const ConvSpec& spec, const FitOptions& options = {},
                    const DenseTensor* weights = nullptr);

}  // namespace bnpp
