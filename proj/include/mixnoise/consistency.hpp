#pragma once

#include "errors.hpp"
#include "forward.hpp"
#include "map_estimation.hpp"
#include "noise.hpp"
#include "potential.hpp"
#include "prior.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace mixnoise {

namespace detail {

inline Eigen::LLT<Matrix> pd_factor(const Matrix& m, const char* what)
{
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) {
        throw InvariantError(std::string(what) + " must be positive definite");
    }
    return llt;
}

} // namespace detail

/// One small-noise datum y_n = (1 + eta_m / n) G(u_true) + eta_a / n with
/// eta_m ~ N(0, Gamma^m), eta_a ~ N(0, Gamma^a). `zero_noise` forces both
/// noises to zero.
inline DataVector gen_small_noise_data(const StateVector& truth, const ForwardMap& forward,
                                       const MixedGaussianNoise& noise, int n, Rng& rng, bool zero_noise = false)
{
    if (n < 1) {
        throw InvariantError("gen_small_noise_data: n must be >= 1");
    }
    const auto la = detail::pd_factor(noise.gamma_a(), "gamma_a");
    const auto lm = detail::pd_factor(noise.gamma_m(), "gamma_m");
    const Vector g = forward.apply(truth).values;
    if (zero_noise) {
        return DataVector{g};
    }
    const Vector eta_m = sample_gaussian(lm, rng);
    const Vector eta_a = sample_gaussian(la, rng);
    const double inv = 1.0 / static_cast<double>(n);
    return DataVector{Vector(g.array() * (1.0 + inv * eta_m.array()) + inv * eta_a.array())};
}

/// One large-data observation y = (1 + eta_m) G(u_true) + eta_a.
inline DataVector gen_observation(const Vector& g_true, const Eigen::LLT<Matrix>& la, const Eigen::LLT<Matrix>& lm,
                                  Rng& rng)
{
    const Vector eta_m = sample_gaussian(lm, rng);
    const Vector eta_a = sample_gaussian(la, rng);
    return DataVector{Vector(g_true.array() * (1.0 + eta_m.array()) + eta_a.array())};
}

/// Limit of the large-data functional:
/// |G(u_true) - G(u)|^2_{Gamma(u)} + tr(Gamma(u_true) Gamma(u)^-1) + log det Gamma(u).
inline double limit_functional_J(const StateVector& u, const StateVector& truth, const ForwardMap& forward,
                                 const MixedGaussianNoise& noise)
{
    const DataVector g = forward.apply(u);
    const DataVector g_true = forward.apply(truth);
    const SpdMatrix cov = gamma_u(noise, g);
    const SpdMatrix cov_true = gamma_u(noise, g_true);
    // tr(Gamma_true Gamma^-1) = ||L^-1 L_true||_F^2
    const double trace = cov.lower_solve(cov_true.lower()).squaredNorm();
    return cov.quad_form(g_true.values - g.values) + trace + cov.log_det();
}

/// Eigenvalues of Gamma(u_true) Gamma(u)^-1, ascending.
inline Vector limit_gap_eigenvalues(const StateVector& u, const StateVector& truth, const ForwardMap& forward,
                                    const MixedGaussianNoise& noise)
{
    const SpdMatrix cov = gamma_u(noise, forward.apply(u));
    const SpdMatrix cov_true = gamma_u(noise, forward.apply(truth));
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> eig(cov_true.matrix(), cov.matrix(), Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) {
        throw NumericalError("limit_gap_eigenvalues: generalized eigenproblem failed");
    }
    return eig.eigenvalues();
}

/// Rescaled large-data functional
/// J_n(u) = ||u||_E^2 / n + (1/n) sum_k |G(u) - y_k|^2_{Gamma(u)} + log det Gamma(u),
/// evaluated from the batch summary.
inline double large_data_jn(const StateVector& u, const GaussianPrior& prior, const ForwardMap& forward,
                            const MixedGaussianNoise& noise, const DataSummary& batch)
{
    const double n = static_cast<double>(batch.count);
    return cm_norm_sq(prior, u) / n + mixed_gaussian_value(noise, forward.apply(u), batch, {2.0, 2.0});
}

// ---------------------------------------------------------------------------
// Small-noise experiment

struct SmallNoiseOptions {
    std::vector<int> n_values{2, 4, 8, 16, 32, 64};
    int seeds = 20;
    std::uint64_t seed = 0;
    int prior_starts = 8;
    bool include_truth_start = true;
    bool zero_noise = false;
    /// Also minimize (2/n^2) I_n from the same starts and record the gap.
    bool check_rescaling = false;
    MinimizeOptions minimize;
};

struct SmallNoiseRow {
    int n = 0;
    int seed = 0;
    double misfit_y = 0.0;     // |G(u_n) - G(u_true)|
    double misfit_gamma = 0.0; // |G(u_n) - G(u_true)|_{Gamma(u_n)}
    double objective = 0.0;    // I_n(u_n)
    bool converged = false;
    double cm_norm_sq = 0.0;   // ||u_n||_E^2
    double rescaling_gap = 0.0;
    MapResult map;
};

struct SmallNoiseSummary {
    int n = 0;
    double median_misfit_y = 0.0;
    double median_misfit_gamma = 0.0;
    double mean_sq_misfit_gamma = 0.0;
    int converged = 0;
};

struct SmallNoiseRun {
    std::uint64_t seed = 0;
    std::vector<SmallNoiseRow> rows;
    std::vector<SmallNoiseSummary> summary;
    double slope = 0.0; // log-log slope of the median misfit against n
    bool strictly_decreasing = false;
    double final_ratio = 0.0; // median misfit at the last n over the first
};

/// I_n(u) = 1/2 ||u||_E^2 + n^2/2 |G(u) - y_n|^2_{Gamma(u)} + 1/2 log det Gamma(u).
inline ObjectiveSpec small_noise_objective(const ForwardMap& forward, const MixedGaussianNoise& noise,
                                           const DataVector& y, const GaussianPrior& prior, int n, double scale = 1.0)
{
    const double n2 = static_cast<double>(n) * static_cast<double>(n);
    return ObjectiveSpec{mixed_gaussian_potential(forward, noise, DataSummary::single(y), {n2, 1.0}), prior, scale};
}

/// For each seed and n: draw y_n, compute a MAP estimate of I_n by
/// multi-start minimization, and record the forward misfit to the truth.
inline SmallNoiseRun small_noise_experiment(const TruthSpec& truth, const ForwardMap& forward,
                                            const MixedGaussianNoise& noise, const GaussianPrior& prior,
                                            const SmallNoiseOptions& opts)
{
    if (opts.n_values.empty() || !std::is_sorted(opts.n_values.begin(), opts.n_values.end())
        || std::adjacent_find(opts.n_values.begin(), opts.n_values.end()) != opts.n_values.end()) {
        throw InvariantError("small_noise_experiment: n values must be strictly increasing");
    }
    detail::require_same_size(truth.coeffs.size(), prior.dim(), "small_noise_experiment truth");
    const Vector g_true = forward.apply(truth.coeffs).values;

    SmallNoiseRun run;
    run.seed = opts.seed;
    for (int s = 0; s < opts.seeds; ++s) {
        for (int n : opts.n_values) {
            const std::string label = "small-noise/seed=" + std::to_string(s) + "/n=" + std::to_string(n);
            Rng rng{derive_seed(opts.seed, label + "/data")};
            const DataVector y = gen_small_noise_data(truth.coeffs, forward, noise, n, rng, opts.zero_noise);

            StartPlan plan;
            if (opts.include_truth_start) {
                plan.explicit_starts.push_back(truth.coeffs);
            }
            plan.prior_draws = opts.prior_starts;
            plan.seed = derive_seed(opts.seed, label + "/starts");
            const ObjectiveSpec spec = small_noise_objective(forward, noise, y, prior, n);
            SmallNoiseRow row;
            row.n = n;
            row.seed = s;
            row.map = minimize(spec, plan, opts.minimize);
            const DataVector g = forward.apply(row.map.minimizer);
            const Vector diff = g.values - g_true;
            row.misfit_y = diff.norm();
            row.misfit_gamma = std::sqrt(gamma_u(noise, g).quad_form(diff));
            row.objective = row.map.value;
            row.converged = row.map.converged;
            row.cm_norm_sq = cm_norm_sq(prior, row.map.minimizer);
            if (opts.check_rescaling) {
                const double c = 2.0 / (static_cast<double>(n) * static_cast<double>(n));
                const ObjectiveSpec scaled = small_noise_objective(forward, noise, y, prior, n, c);
                const MapResult other = minimize(scaled, plan, opts.minimize);
                row.rescaling_gap = (other.minimizer.coeffs - row.map.minimizer.coeffs).cwiseAbs().maxCoeff();
            }
            run.rows.push_back(std::move(row));
        }
    }

    std::vector<double> ns;
    std::vector<double> medians;
    for (int n : opts.n_values) {
        std::vector<double> my;
        std::vector<double> mg;
        std::vector<double> mg2;
        SmallNoiseSummary sum;
        sum.n = n;
        for (const auto& r : run.rows) {
            if (r.n == n) {
                my.push_back(r.misfit_y);
                mg.push_back(r.misfit_gamma);
                mg2.push_back(r.misfit_gamma * r.misfit_gamma);
                sum.converged += r.converged ? 1 : 0;
            }
        }
        sum.median_misfit_y = stats::median(my);
        sum.median_misfit_gamma = stats::median(mg);
        sum.mean_sq_misfit_gamma = stats::mean(mg2);
        run.summary.push_back(sum);
        ns.push_back(static_cast<double>(n));
        medians.push_back(sum.median_misfit_y);
    }
    run.strictly_decreasing = stats::strictly_decreasing(medians);
    run.final_ratio = medians.front() > 0.0 ? medians.back() / medians.front() : 0.0;
    const bool positive = std::all_of(medians.begin(), medians.end(), [](double m) { return m > 0.0; });
    run.slope = (ns.size() >= 2 && positive) ? stats::loglog_slope(ns, medians) : 0.0;
    return run;
}

// ---------------------------------------------------------------------------
// Large-data experiment

struct LargeDataOptions {
    std::vector<int> n_values{100, 1000, 10000};
    int seeds = 10;
    std::uint64_t seed = 0;
    std::vector<StateVector> probes;
    bool run_map = true;
    /// Also minimize J_n with the log-determinant term dropped.
    bool omit_logdet_variant = true;
    int prior_starts = 8;
    MinimizeOptions minimize;
};

struct ProbeRow {
    int n = 0;
    int seed = 0;
    int probe = 0;
    double jn = 0.0;
    double limit = 0.0;
    double abs_diff = 0.0;
};

struct LargeDataMapRow {
    int n = 0;
    int seed = 0;
    std::string variant; // "full" or "no-logdet"
    double misfit_y = 0.0;
    double misfit_gamma = 0.0;
    double objective = 0.0;
    bool converged = false;
};

struct LargeDataRun {
    std::uint64_t seed = 0;
    std::vector<ProbeRow> probe_rows;
    std::vector<LargeDataMapRow> map_rows;
    std::vector<double> limit_at_probes;
    double limit_at_truth = 0.0;
    /// Per probe: log-log slope of the RMS (over seeds) of |J_n - J| against n.
    std::vector<double> probe_slopes;
};

/// MAP objective for a batch: J_n = (2/n) I_n with
/// I_n = 1/2 ||u||_E^2 + 1/2 sum_k |G(u) - y_k|^2_{Gamma(u)} + n/2 log det Gamma(u).
inline ObjectiveSpec large_data_objective(const ForwardMap& forward, const MixedGaussianNoise& noise,
                                          const DataSummary& batch, const GaussianPrior& prior, bool with_logdet = true)
{
    const double n = static_cast<double>(batch.count);
    return ObjectiveSpec{mixed_gaussian_potential(forward, noise, batch, {n, with_logdet ? n : 0.0}), prior, 2.0 / n};
}

inline LargeDataRun large_data_experiment(const TruthSpec& truth, const ForwardMap& forward,
                                          const MixedGaussianNoise& noise, const GaussianPrior& prior,
                                          const LargeDataOptions& opts)
{
    if (opts.n_values.empty() || !std::is_sorted(opts.n_values.begin(), opts.n_values.end())
        || opts.n_values.front() < 1) {
        throw InvariantError("large_data_experiment: n values must be positive and increasing");
    }
    const auto la = detail::pd_factor(noise.gamma_a(), "gamma_a");
    const auto lm = detail::pd_factor(noise.gamma_m(), "gamma_m");
    const Vector g_true = forward.apply(truth.coeffs).values;

    LargeDataRun run;
    run.seed = opts.seed;
    run.limit_at_truth = limit_functional_J(truth.coeffs, truth.coeffs, forward, noise);
    for (const auto& p : opts.probes) {
        run.limit_at_probes.push_back(limit_functional_J(p, truth.coeffs, forward, noise));
    }

    for (int s = 0; s < opts.seeds; ++s) {
        const std::string label = "large-data/seed=" + std::to_string(s);
        Rng rng{derive_seed(opts.seed, label + "/data")};
        std::vector<DataVector> ys;
        ys.reserve(static_cast<std::size_t>(opts.n_values.back()));
        for (int k = 0; k < opts.n_values.back(); ++k) {
            ys.push_back(gen_observation(g_true, la, lm, rng));
        }
        for (int n : opts.n_values) {
            const DataSummary batch = DataSummary::of(std::vector<DataVector>(ys.begin(), ys.begin() + n));
            for (std::size_t p = 0; p < opts.probes.size(); ++p) {
                ProbeRow row;
                row.n = n;
                row.seed = s;
                row.probe = static_cast<int>(p);
                row.jn = large_data_jn(opts.probes[p], prior, forward, noise, batch);
                row.limit = run.limit_at_probes[p];
                row.abs_diff = std::abs(row.jn - row.limit);
                run.probe_rows.push_back(row);
            }
            if (!opts.run_map) {
                continue;
            }
            StartPlan plan;
            plan.explicit_starts.push_back(truth.coeffs);
            plan.prior_draws = opts.prior_starts;
            plan.seed = derive_seed(opts.seed, label + "/n=" + std::to_string(n) + "/starts");
            for (bool with_logdet : {true, false}) {
                if (!with_logdet && !opts.omit_logdet_variant) {
                    continue;
                }
                const MapResult r
                    = minimize(large_data_objective(forward, noise, batch, prior, with_logdet), plan, opts.minimize);
                const DataVector g = forward.apply(r.minimizer);
                const Vector diff = g.values - g_true;
                run.map_rows.push_back({n, s, with_logdet ? "full" : "no-logdet", diff.norm(),
                                        std::sqrt(gamma_u(noise, g).quad_form(diff)), r.value, r.converged});
            }
        }
    }

    std::vector<double> ns(opts.n_values.begin(), opts.n_values.end());
    for (std::size_t p = 0; p < opts.probes.size(); ++p) {
        std::vector<double> rms;
        for (int n : opts.n_values) {
            std::vector<double> diffs;
            for (const auto& r : run.probe_rows) {
                if (r.n == n && r.probe == static_cast<int>(p)) {
                    diffs.push_back(r.abs_diff);
                }
            }
            rms.push_back(stats::root_mean_square(diffs));
        }
        run.probe_slopes.push_back(ns.size() >= 2 ? stats::loglog_slope(ns, rms) : 0.0);
    }
    return run;
}

} // namespace mixnoise
