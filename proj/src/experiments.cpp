#include "bnpp/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "bnpp/bitpack.hpp"
#include "bnpp/conv.hpp"
#include "bnpp/scaling.hpp"

namespace bnpp {

const char* method_name(Method m) {
    switch (m) {
        case Method::direct: return "direct";
        case Method::analytic_xnor: return "xnor";
        case Method::case1: return "case1";
        case Method::case2: return "case2";
        case Method::case3: return "case3";
        case Method::case4: return "case4";
    }
    return "?";
}

Method parse_method(const std::string& name) {
    if (name == "direct") return Method::direct;
    if (name == "xnor") return Method::analytic_xnor;
    if (name == "case1") return Method::case1;
    if (name == "case2") return Method::case2;
    if (name == "case3") return Method::case3;
    if (name == "case4") return Method::case4;
    throw ValueError("unknown method '" + name + "'");
}

ConvSpec fidelity_spec() {
    return ConvSpec{.o = 64, .c = 64, .kh = 3, .kw = 3, .h_in = 16, .w_in = 16,
                    .stride = 1, .padding = 0};
}

namespace {

struct TrialOutcome {
    double loss = 0.0;
    std::size_t steps = 0;
    double wall_ms = 0.0;
    FitResult fit;  // populated for case3 only
};

TrialOutcome run_trial(Method method, std::uint64_t master_seed, std::size_t trial,
                       const ConvSpec& spec, const FitOptions& fit_opts) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = Rng(master_seed).child(trial);
    const DenseTensor weights = randn({spec.o, spec.c, spec.kh, spec.kw}, rng);
    const DenseTensor input = randn({spec.c, spec.h_in, spec.w_in}, rng);
    const DenseTensor reference = conv_real(input, weights, spec);
    const DenseTensor binary =
        conv_binary(PackedTensor::pack(input), PackedTensor::pack(weights), spec);

    TrialOutcome out;
    switch (method) {
        case Method::direct: {
            const ScaleFactor ones = init_scale(ScaleCase::case1, spec, InitStrategy::ones);
            out.loss = recon_loss(reference, binary, ones, fit_opts.kind).value;
            break;
        }
        case Method::analytic_xnor: {
            ScaleFactor sf;
            sf.kind = ScaleCase::analytic_xnor;
            sf.alpha = analytic_alpha(weights);
            sf.k_map = analytic_k(input, spec);
            out.loss = recon_loss(reference, binary, sf, fit_opts.kind).value;
            break;
        }
        case Method::case1:
        case Method::case2:
        case Method::case3:
        case Method::case4: {
            const ScaleCase kind = method == Method::case1   ? ScaleCase::case1
                                   : method == Method::case2 ? ScaleCase::case2
                                   : method == Method::case3 ? ScaleCase::case3
                                                             : ScaleCase::case4;
            FitResult fit = fit_scale(reference, binary, kind, spec, fit_opts, &weights);
            out.loss = fit.loss;
            out.steps = fit.steps;
            if (method == Method::case3) out.fit = std::move(fit);
            break;
        }
    }
    out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    return out;
}

}  // namespace

FidelityReport run_fidelity(Method method, std::size_t trials, std::uint64_t seed,
                            const FitOptions& fit_opts) {
    if (trials < 1) throw ValueError("fidelity needs at least one trial");
    const ConvSpec spec = fidelity_spec();

    FidelityReport report;
    report.method = method;
    report.trials = trials;
    report.seed = seed;
    report.spec = spec;
    report.per_trial.resize(trials);
    report.steps.resize(trials);
    report.wall_ms.resize(trials);
    if (method == Method::case3) report.case3_fits.resize(trials);

    // Trials are independent; per-trial child streams keep the report
    // identical for any schedule.
#pragma omp parallel for schedule(dynamic)
    for (long t = 0; t < static_cast<long>(trials); ++t) {
        TrialOutcome out = run_trial(method, seed, static_cast<std::size_t>(t), spec, fit_opts);
        report.per_trial[t] = out.loss;
        report.steps[t] = out.steps;
        report.wall_ms[t] = out.wall_ms;
        if (method == Method::case3) report.case3_fits[t] = std::move(out.fit);
    }

    double mean = 0.0;
    for (double x : report.per_trial) mean += x;
    mean /= static_cast<double>(trials);
    report.mean_l1 = mean;
    if (trials > 1) {
        double ss = 0.0;
        for (double x : report.per_trial) ss += (x - mean) * (x - mean);
        report.std_l1 = std::sqrt(ss / static_cast<double>(trials - 1));
    }
    return report;
}

SpeedupReport speedup(const ConvSpec& spec) {
    spec.validate();
    SpeedupReport r;
    r.spec = spec;
    const double kh = static_cast<double>(spec.kh);
    const double kw = static_cast<double>(spec.kw);
    const double o = static_cast<double>(spec.o);
    r.n_ops = static_cast<double>(spec.c) * kw * kh * static_cast<double>(spec.w_out()) *
              static_cast<double>(spec.h_out()) * o;
    const double kernel_ops = kw * kh * o;
    r.s_xnor = 64.0 * kernel_ops / (kernel_ops + 2.0 + kh * kw);
    r.s_ours = 64.0 * kernel_ops / (kernel_ops + 1.0);
    return r;
}

std::vector<double> singular_values(const DenseTensor& m) {
    if (m.ndim() != 2) throw ShapeError("singular_values expects a matrix");
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];

    // One-sided Jacobi: rotate column pairs until mutually orthogonal;
    // the singular values are the final column norms.
    std::vector<double> a(m.data().begin(), m.data().end());
    auto col_dot = [&](std::size_t p, std::size_t q) {
        double s = 0.0;
        for (std::size_t r = 0; r < rows; ++r) s += a[r * cols + p] * a[r * cols + q];
        return s;
    };

    const double eps = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < cols; ++p) {
            for (std::size_t q = p + 1; q < cols; ++q) {
                const double app = col_dot(p, p);
                const double aqq = col_dot(q, q);
                const double apq = col_dot(p, q);
                if (std::fabs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t r = 0; r < rows; ++r) {
                    const double xp = a[r * cols + p];
                    const double xq = a[r * cols + q];
                    a[r * cols + p] = c * xp - s * xq;
                    a[r * cols + q] = s * xp + c * xq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sv(cols);
    for (std::size_t p = 0; p < cols; ++p) sv[p] = std::sqrt(col_dot(p, p));
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

namespace {

double sv_concentration(const DenseTensor& m) {
    const std::vector<double> sv = singular_values(m);
    double total = 0.0;
    for (double s : sv) total += s;
    return total == 0.0 ? 0.0 : sv.front() / total;
}

}  // namespace

RankProbeResult beta_rank_probe(const std::vector<FitResult>& case3_fits) {
    if (case3_fits.empty()) throw ValueError("rank probe needs at least one fitted map");
    RankProbeResult r;
    for (const FitResult& fit : case3_fits) {
        if (fit.scale.kind != ScaleCase::case3) throw ValueError("rank probe expects case3 fits");
        if (!fit.converged) throw ValueError("rank probe requires converged fits");
        r.ratios.push_back(sv_concentration(fit.scale.beta));
    }
    for (double x : r.ratios) r.mean += x;
    r.mean /= static_cast<double>(r.ratios.size());
    return r;
}

RankProbeResult rank_probe_random_baseline(std::size_t h, std::size_t w, std::size_t samples,
                                           Rng& rng) {
    RankProbeResult r;
    for (std::size_t i = 0; i < samples; ++i) {
        r.ratios.push_back(sv_concentration(randn({h, w}, rng)));
    }
    for (double x : r.ratios) r.mean += x;
    r.mean /= static_cast<double>(r.ratios.size());
    return r;
}

namespace {

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", x);
    return buf;
}

}  // namespace

std::string fidelity_csv_text(const std::vector<FidelityReport>& reports) {
    std::string csv = "method,trial,seed,l1_loss,steps,wall_ms\n";
    for (const FidelityReport& rep : reports) {
        for (std::size_t t = 0; t < rep.trials; ++t) {
            csv += method_name(rep.method);
            csv += "," + std::to_string(t);
            csv += "," + std::to_string(Rng(rep.seed).child(t).seed());
            csv += "," + fmt_double(rep.per_trial[t]);
            csv += "," + std::to_string(rep.steps[t]);
            csv += "," + fmt_double(rep.wall_ms[t]);
            csv += "\n";
        }
        double total_wall = 0.0, mean_steps = 0.0;
        for (double x : rep.wall_ms) total_wall += x;
        for (std::size_t s : rep.steps) mean_steps += static_cast<double>(s);
        mean_steps /= static_cast<double>(rep.trials);
        csv += std::string(method_name(rep.method)) + ",mean," + std::to_string(rep.seed) + "," +
               fmt_double(rep.mean_l1) + "," + fmt_double(mean_steps) + "," +
               fmt_double(total_wall) + "\n";
        csv += std::string(method_name(rep.method)) + ",std," + std::to_string(rep.seed) + "," +
               fmt_double(rep.std_l1) + ",0,0\n";
    }
    return csv;
}

void write_fidelity_csv(const std::string& path, const std::vector<FidelityReport>& reports) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << fidelity_csv_text(reports);
    if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace bnpp
