#pragma once

#include "bnpp/conv_spec.hpp"
#include "bnpp/tensor.hpp"

namespace bnpp {

// Structural family of the fused output scale. The four learned cases
// trade spatial/channel expressivity against parameter count; the
// analytic variant is the closed-form weight/activation factorization
// computed from data instead of learned.
enum class ScaleCase { case1, case2, case3, case4, analytic_xnor };

const char* scale_case_name(ScaleCase c);

// Fused scale factor. Only the fields demanded by `kind` are populated:
//
//   case1          alpha {o,1,1}
//   case2          alpha {o,h_out,w_out}
//   case3          alpha {o}, beta {h_out,w_out}
//   case4          alpha {o}, beta {h_out}, gamma {w_out}
//   analytic_xnor  alpha {o}, k_map {h_out,w_out}
//
// Every case materializes to a dense {o,h_out,w_out} map. For case4 the
// spatial map is computed as beta[h] * gamma[w] first and the channel
// scale applied last, which makes the case4 -> case3 embedding exact in
// floating point, not just mathematically.
struct ScaleFactor {
    ScaleCase kind = ScaleCase::case1;
    DenseTensor alpha;
    DenseTensor beta;
    DenseTensor gamma;
    DenseTensor k_map;

    void validate(const ConvSpec& spec) const;
    void validate_dims(std::size_t o, std::size_t h_out, std::size_t w_out) const;
};

DenseTensor materialize(const ScaleFactor& sf, const ConvSpec& spec);

// Per-output-channel mean absolute weight: alpha_i = |W_i|_l1 / (c*kh*kw).
DenseTensor analytic_alpha(const DenseTensor& weights);

// Activation scale map: channel-mean of |I| convolved with the
// normalized box filter of the kernel extent. Requires stride 1.
DenseTensor analytic_k(const DenseTensor& input, const ConvSpec& spec);

enum class InitStrategy { ones, analytic_warm_start };

// `ones` makes materialize() all-ones for any case. `analytic_warm_start`
// (learned cases only) seeds the channel factor from analytic_alpha of
// `weights` and leaves spatial factors at one.
ScaleFactor init_scale(ScaleCase kind, const ConvSpec& spec, InitStrategy strategy,
                       const DenseTensor* weights = nullptr);

// Exact re-representations along the containment chain
// case1 -> case4 -> case3 -> case2 (materializations are equal
// element-for-element, bit-exact).
ScaleFactor embed_in_case4(const ScaleFactor& case1, const ConvSpec& spec);
ScaleFactor embed_in_case3(const ScaleFactor& case4, const ConvSpec& spec);
ScaleFactor embed_in_case2(const ScaleFactor& case3, const ConvSpec& spec);

}  // namespace bnpp
