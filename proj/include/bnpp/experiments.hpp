#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bnpp/conv_spec.hpp"
#include "bnpp/optimize.hpp"
#include "bnpp/rng.hpp"
#include "bnpp/tensor.hpp"

namespace bnpp {

// Approximation method measured by the fidelity study.
enum class Method { direct, analytic_xnor, case1, case2, case3, case4 };

const char* method_name(Method m);
Method parse_method(const std::string& name);  // direct|xnor|case1..case4

// Fixed fidelity protocol: weights {64,64,3,3} and input {64,16,16},
// both standard normal, valid convolution at stride 1 (output 64x14x14).
ConvSpec fidelity_spec();

// Per-trial reconstruction L1 (per-element mean) for one method.
// Trial t draws (W, I) from child stream t of the master seed, so
// different methods see identical data and reports are paired.
struct FidelityReport {
    Method method = Method::direct;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
    ConvSpec spec;
    double mean_l1 = 0.0;
    double std_l1 = 0.0;  // sample std over trials, 0 for a single trial
    std::vector<double> per_trial;
    std::vector<std::size_t> steps;     // Adam steps per trial (0 for closed-form methods)
    std::vector<double> wall_ms;        // measurement only, not reproducible
    std::vector<FitResult> case3_fits;  // kept when method == case3, feeds the rank probe
};

// Trials run in parallel; the report is bit-identical for any thread count.
FidelityReport run_fidelity(Method method, std::size_t trials, std::uint64_t seed,
                            const FitOptions& fit = {});

// Theoretical speed-up of the binary layer over the real one under the
// 64-ops-per-clock bit-packing model. s_xnor charges the separate
// weight/activation rescaling of the analytic baseline; s_ours charges
// the single fused multiply.
struct SpeedupReport {
    ConvSpec spec;
    double n_ops = 0.0;  // c*kw*kh*w_out*h_out*o multiplications
    double s_xnor = 0.0;
    double s_ours = 0.0;
};

SpeedupReport speedup(const ConvSpec& spec);

// Spectral concentration of fitted case3 spatial maps: sigma_1 / sum(sigma)
// per map. Inputs must come from converged fits.
struct RankProbeResult {
    std::vector<double> ratios;
    double mean = 0.0;
};

RankProbeResult beta_rank_probe(const std::vector<FitResult>& case3_fits);

// Same statistic for i.i.d. standard-normal matrices, as the comparison
// baseline.
RankProbeResult rank_probe_random_baseline(std::size_t h, std::size_t w, std::size_t samples,
                                           Rng& rng);

// Singular values of a small dense matrix (descending), one-sided Jacobi.
std::vector<double> singular_values(const DenseTensor& m);

// CSV with schema method,trial,seed,l1_loss,steps,wall_ms. Each method
// gets one row per trial plus `mean` and `std` summary rows. Apart from
// wall_ms the bytes are a pure function of the reports.
void write_fidelity_csv(const std::string& path, const std::vector<FidelityReport>& reports);

std::string fidelity_csv_text(const std::vector<FidelityReport>& reports);

}  // namespace bnpp
