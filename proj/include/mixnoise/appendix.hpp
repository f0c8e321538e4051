#pragma once

#include "errors.hpp"
#include "noise.hpp"
#include "rng.hpp"
#include "types.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace mixnoise {

/// One numerical cross-check: |value - reference| <= tolerance, or for bound
/// checks value <= reference.
struct CheckRow {
    std::string group;
    std::string label;
    double value = 0.0;
    double reference = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct AppendixOptions {
    std::vector<double> means{-2.0, -1.0, 0.0, 1.0, 2.0};
    std::vector<double> variances{0.25, 0.5, 1.0, 2.0, 4.0};
    long mc_samples = 200000;
    long is_samples = 200000;
    /// Diagonal Gamma^a and Gamma^m for the nu^{y,A} moment check.
    Vector var_a = Vector::Constant(2, 0.5);
    Vector var_m = Vector::Constant(2, 0.3);
    Vector y = detail::to_vector({1.5, -0.4});
    Vector a_diag = detail::to_vector({1.2, 0.7});
    /// Fitting grid for the bound constant; the assertion grid is shifted off it.
    std::vector<double> fit_grid{-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0};
    std::vector<double> check_grid{-4.5, -2.5, -1.5, -0.5, 0.5, 1.5, 2.5, 4.5};
    double bound_slack = 0.1;
    std::uint64_t seed = 0;
};

struct AppendixReport {
    std::vector<CheckRow> checks;
    double fitted_constant = 0.0;

    [[nodiscard]] bool pass() const
    {
        return std::all_of(checks.begin(), checks.end(), [](const CheckRow& c) { return c.pass; });
    }
    [[nodiscard]] int failures() const
    {
        return static_cast<int>(std::count_if(checks.begin(), checks.end(), [](const CheckRow& c) { return !c.pass; }));
    }
};

namespace detail {

inline CheckRow within(std::string group, std::string label, double value, double reference, double tolerance)
{
    return {std::move(group), std::move(label), value, reference, tolerance, std::abs(value - reference) <= tolerance};
}

// E|X_i| under nu^{y,A} for scalar (y, a) with the given diagonal variances.
inline double scalar_abs_moment(double y, double a, double va, double vm)
{
    const auto noise = MixedGaussianNoise::diagonal(Vector::Constant(1, va), Vector::Constant(1, vm));
    const auto m = nu_posterior_moments(DataVector{y}, Vector::Constant(1, a), noise);
    return abs_first_moment(m.mean[0], m.covariance(0, 0));
}

} // namespace detail

/// Monte Carlo and importance-sampling cross-checks of the closed-form
/// nu^{y,A} moments, the Kummer first-moment identity and the polynomial
/// bound E|X_i| <= C (1 + y_i^4 + A_ii^4).
inline AppendixReport verify_appendix(const AppendixOptions& opts)
{
    AppendixReport report;
    const Rng root{opts.seed};

    // E|N(m, s)| against plain Monte Carlo.
    Rng mc = root.substream("appendix/abs-moment");
    for (double m : opts.means) {
        for (double s : opts.variances) {
            double sum = 0.0;
            double sum2 = 0.0;
            const double sd = std::sqrt(s);
            for (long i = 0; i < opts.mc_samples; ++i) {
                const double v = std::abs(m + sd * mc.normal());
                sum += v;
                sum2 += v * v;
            }
            const double n = static_cast<double>(opts.mc_samples);
            const double mean = sum / n;
            const double se = std::sqrt(std::max(0.0, sum2 / n - mean * mean) / n);
            report.checks.push_back(detail::within("abs_first_moment",
                                                   "m=" + std::to_string(m) + ",s=" + std::to_string(s), mean,
                                                   abs_first_moment(m, s), 3.0 * se));
        }
    }

    // nu^{y,A} moments against self-normalized importance sampling.
    {
        const auto noise = MixedGaussianNoise::diagonal(opts.var_a, opts.var_m);
        const auto exact = nu_posterior_moments(DataVector{opts.y}, opts.a_diag, noise);
        const Eigen::Index d = opts.y.size();
        Rng is = root.substream("appendix/importance");
        std::vector<Vector> xs;
        std::vector<double> lw;
        xs.reserve(static_cast<std::size_t>(opts.is_samples));
        lw.reserve(static_cast<std::size_t>(opts.is_samples));
        for (long k = 0; k < opts.is_samples; ++k) {
            Vector x(d);
            double l = 0.0;
            for (Eigen::Index i = 0; i < d; ++i) {
                x[i] = is.normal(1.0, std::sqrt(opts.var_m[i]));
                const double r = opts.y[i] - opts.a_diag[i] * x[i];
                l -= 0.5 * r * r / opts.var_a[i];
            }
            xs.push_back(std::move(x));
            lw.push_back(l);
        }
        const double top = *std::max_element(lw.begin(), lw.end());
        std::vector<double> w(lw.size());
        double wsum = 0.0;
        for (std::size_t k = 0; k < lw.size(); ++k) {
            w[k] = std::exp(lw[k] - top);
            wsum += w[k];
        }
        for (double& v : w) {
            v /= wsum;
        }
        for (Eigen::Index i = 0; i < d; ++i) {
            double mean = 0.0;
            for (std::size_t k = 0; k < w.size(); ++k) {
                mean += w[k] * xs[k][i];
            }
            double var = 0.0;
            for (std::size_t k = 0; k < w.size(); ++k) {
                var += w[k] * (xs[k][i] - mean) * (xs[k][i] - mean);
            }
            double se_mean = 0.0;
            double se_var = 0.0;
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double dv = xs[k][i] - mean;
                se_mean += w[k] * w[k] * dv * dv;
                se_var += w[k] * w[k] * (dv * dv - var) * (dv * dv - var);
            }
            const std::string idx = std::to_string(i);
            report.checks.push_back(
                detail::within("nu_posterior_moments", "mean_" + idx, mean, exact.mean[i], 3.0 * std::sqrt(se_mean)));
            report.checks.push_back(detail::within("nu_posterior_moments", "var_" + idx, var, exact.covariance(i, i),
                                                   3.0 * std::sqrt(se_var)));
        }
    }

    // Fit C on one grid, assert the bound on a disjoint one.
    const double va = opts.var_a[0];
    const double vm = opts.var_m[0];
    const auto envelope = [](double y, double a) { return 1.0 + std::pow(y, 4) + std::pow(a, 4); };
    double c = 0.0;
    for (double y : opts.fit_grid) {
        for (double a : opts.fit_grid) {
            c = std::max(c, detail::scalar_abs_moment(y, a, va, vm) / envelope(y, a));
        }
    }
    c *= 1.0 + opts.bound_slack;
    report.fitted_constant = c;
    for (double y : opts.check_grid) {
        for (double a : opts.check_grid) {
            const double value = detail::scalar_abs_moment(y, a, va, vm);
            const double bound = c * envelope(y, a);
            report.checks.push_back({"moment_bound", "y=" + std::to_string(y) + ",a=" + std::to_string(a), value, bound,
                                     0.0, value <= bound});
        }
    }
    return report;
}

} // namespace mixnoise
