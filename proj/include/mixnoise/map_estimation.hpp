#pragma once

#include "errors.hpp"
#include "potential.hpp"
#include "prior.hpp"
#include "rng.hpp"
#include "types.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace mixnoise {

struct MinimizeOptions {
    int max_iterations = 2000;
    /// Stop when ||grad|| <= grad_tol * max(1, |objective|).
    double grad_tol = 1e-8;
    /// Number of curvature pairs kept by the quasi-Newton update.
    int memory = 10;
    /// Sufficient-decrease constant of the backtracking line search.
    double armijo = 1e-4;
    double backtrack = 0.5;
    int max_backtracks = 80;
    /// Relative objective noise level below which the approximate Wolfe
    /// test (directional derivative shrinkage) replaces sufficient decrease.
    double approx_wolfe_eps = 1e-10;
};

struct LbfgsResult {
    Vector x;
    double value = std::numeric_limits<double>::infinity();
    double grad_norm = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    std::string message;
};

/// Limited-memory BFGS with a backtracking Armijo line search.
///
/// `fg(x, grad)` returns the objective and fills `grad`; it may return +inf
/// for points outside the domain, which the line search treats as a failed
/// trial. Accepted iterates never increase the objective beyond its
/// roundoff level.
template <class Fn>
LbfgsResult lbfgs_minimize(Fn&& fg, Vector x, const MinimizeOptions& opts)
{
    LbfgsResult out;
    Vector g(x.size());
    double f = fg(x, g);
    if (!std::isfinite(f)) {
        out.x = std::move(x);
        out.message = "objective not finite at the initial point";
        return out;
    }

    std::deque<std::pair<Vector, Vector>> pairs; // (s, y)
    Vector xn(x.size());
    Vector gn(x.size());
    bool restarted = false;
    int it = 0;
    for (; it < opts.max_iterations; ++it) {
        const double gnorm = g.norm();
        if (gnorm <= opts.grad_tol * std::max(1.0, std::abs(f))) {
            out.converged = true;
            break;
        }

        // Two-loop recursion.
        Vector d = -g;
        std::vector<double> alphas(pairs.size());
        for (std::size_t i = pairs.size(); i-- > 0;) {
            const auto& [s, y] = pairs[i];
            alphas[i] = s.dot(d) / y.dot(s);
            d -= alphas[i] * y;
        }
        if (!pairs.empty()) {
            const auto& [s, y] = pairs.back();
            d *= s.dot(y) / y.squaredNorm();
        } else {
            d *= std::min(1.0, 1.0 / gnorm);
        }
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto& [s, y] = pairs[i];
            const double beta = y.dot(d) / y.dot(s);
            d += (alphas[i] - beta) * s;
        }
        double slope = g.dot(d);
        if (!(slope < 0.0)) {
            pairs.clear();
            d = -g * std::min(1.0, 1.0 / gnorm);
            slope = g.dot(d);
        }

        double t = 1.0;
        double fn = std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int b = 0; b < opts.max_backtracks; ++b) {
            xn = x + t * d;
            fn = fg(xn, gn);
            if (std::isfinite(fn) && fn <= f + opts.armijo * t * slope) {
                accepted = true;
                break;
            }
            // Near the minimizer f only changes at roundoff level; fall back
            // to the gradient along d (Hager-Zhang approximate Wolfe).
            if (std::isfinite(fn) && fn <= f + opts.approx_wolfe_eps * std::max(1.0, std::abs(f))) {
                const double dslope = gn.dot(d);
                if (dslope <= (1.0 - 2.0 * opts.armijo) * -slope && dslope >= 0.9 * slope && gn.norm() < gnorm) {
                    accepted = true;
                    break;
                }
            }
            t *= opts.backtrack;
        }
        if (!accepted) {
            if (!pairs.empty() && !restarted) {
                // Retry once from steepest descent before giving up.
                pairs.clear();
                restarted = true;
                continue;
            }
            out.message = "line search failed to find sufficient decrease";
            break;
        }
        restarted = false;

        Vector s = xn - x;
        Vector y = gn - g;
        if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
            pairs.emplace_back(std::move(s), std::move(y));
            if (static_cast<int>(pairs.size()) > opts.memory) {
                pairs.pop_front();
            }
        }
        x.swap(xn);
        g.swap(gn);
        f = fn;
    }
    if (!out.converged && out.message.empty()) {
        out.message = "iteration limit reached";
    }
    out.x = std::move(x);
    out.value = f;
    out.grad_norm = g.norm();
    out.iterations = it;
    return out;
}

/// I(u) = c * (Phi(u; y) + 1/2 ||u||_E^2).
struct ObjectiveSpec {
    Potential potential;
    GaussianPrior prior;
    double scale = 1.0;

    ObjectiveSpec(Potential p, GaussianPrior pr, double c = 1.0)
        : potential(std::move(p)), prior(std::move(pr)), scale(c)
    {
        detail::require_same_size(potential.dim(), prior.dim(), "objective: potential vs prior");
        if (!(scale > 0.0) || !std::isfinite(scale)) {
            throw InvariantError("objective: scale must be positive");
        }
    }
};

inline double objective(const ObjectiveSpec& spec, const StateVector& u)
{
    return spec.scale * (spec.potential(u) + 0.5 * cm_norm_sq(spec.prior, u));
}

inline Vector gradient(const ObjectiveSpec& spec, const StateVector& u)
{
    Vector prior_term = u.coeffs.array() / spec.prior.eigenvalues().array();
    return spec.scale * (spec.potential.gradient(u) + prior_term);
}

/// Central-difference gradient of the whole objective.
inline Vector gradient_fd(const ObjectiveSpec& spec, const StateVector& u, double h)
{
    Vector grad(u.size());
    StateVector probe = u;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
        probe[k] = u[k] + h;
        const double plus = objective(spec, probe);
        probe[k] = u[k] - h;
        const double minus = objective(spec, probe);
        probe[k] = u[k];
        grad[k] = (plus - minus) / (2.0 * h);
    }
    return grad;
}

/// Outcome of one optimizer start.
struct StartRecord {
    int index = 0;
    std::string origin; // "explicit", "zero", "prior"
    StateVector initial;
    StateVector minimizer;
    double value = std::numeric_limits<double>::infinity();
    double grad_norm = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    std::string message;
};

struct MapResult {
    StateVector minimizer;
    double value = std::numeric_limits<double>::infinity();
    double grad_norm = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    int restarts_used = 0;
    /// Distinct converged minimizers among the starts.
    int local_optima = 0;
    std::string message;
    /// Sorted by (value, index).
    std::vector<StartRecord> starts;
};

/// Initial points for multi-start minimization: explicit points (e.g. the
/// truth), then optionally u = 0, then `prior_draws` draws from the prior.
struct StartPlan {
    std::vector<StateVector> explicit_starts;
    bool include_zero = true;
    int prior_draws = 8;
    std::uint64_t seed = 0;
};

namespace detail {

inline StartRecord run_start(const ObjectiveSpec& spec, const StateVector& init, const MinimizeOptions& opts)
{
    auto fg = [&spec](const Vector& x, Vector& grad) -> double {
        const StateVector u{x};
        const double phi = spec.potential.value_or_infinity(u);
        if (!std::isfinite(phi)) {
            return std::numeric_limits<double>::infinity();
        }
        try {
            grad = gradient(spec, u);
        } catch (const DomainError&) {
            return std::numeric_limits<double>::infinity();
        }
        if (!grad.allFinite()) {
            return std::numeric_limits<double>::infinity();
        }
        return spec.scale * (phi + 0.5 * cm_norm_sq(spec.prior, u));
    };
    LbfgsResult r = lbfgs_minimize(fg, init.coeffs, opts);
    StartRecord rec;
    rec.initial = init;
    rec.minimizer = StateVector{std::move(r.x)};
    rec.value = r.value;
    rec.grad_norm = r.grad_norm;
    rec.iterations = r.iterations;
    rec.converged = r.converged;
    rec.message = std::move(r.message);
    return rec;
}

inline MapResult merge_starts(std::vector<StartRecord> starts)
{
    std::stable_sort(starts.begin(), starts.end(), [](const StartRecord& a, const StartRecord& b) {
        if (a.value != b.value) {
            return a.value < b.value;
        }
        return a.index < b.index;
    });
    MapResult out;
    const StartRecord& best = starts.front();
    out.minimizer = best.minimizer;
    out.value = best.value;
    out.grad_norm = best.grad_norm;
    out.iterations = best.iterations;
    out.converged = best.converged;
    out.restarts_used = static_cast<int>(starts.size()) - 1;
    out.message = std::isfinite(best.value) ? best.message : "all starts failed: " + best.message;

    std::vector<const StateVector*> optima;
    for (const auto& s : starts) {
        if (!s.converged) {
            continue;
        }
        const bool seen = std::any_of(optima.begin(), optima.end(), [&](const StateVector* o) {
            return (o->coeffs - s.minimizer.coeffs).norm() <= 1e-4 * std::max(1.0, o->coeffs.norm());
        });
        if (!seen) {
            optima.push_back(&s.minimizer);
        }
    }
    out.local_optima = static_cast<int>(optima.size());
    out.starts = std::move(starts);
    return out;
}

} // namespace detail

/// Single-start minimization of the objective.
inline MapResult minimize(const ObjectiveSpec& spec, const StateVector& init, const MinimizeOptions& opts = {})
{
    detail::require_same_size(init.size(), spec.prior.dim(), "minimize: initial point");
    StartRecord rec = detail::run_start(spec, init, opts);
    rec.origin = "explicit";
    return detail::merge_starts({std::move(rec)});
}

/// Multi-start minimization; returns the lowest objective over all starts,
/// with the per-start table. Deterministic given `plan.seed`.
inline MapResult minimize(const ObjectiveSpec& spec, const StartPlan& plan, const MinimizeOptions& opts = {})
{
    std::vector<std::pair<std::string, StateVector>> inits;
    for (const auto& s : plan.explicit_starts) {
        detail::require_same_size(s.size(), spec.prior.dim(), "minimize: explicit start");
        inits.emplace_back("explicit", s);
    }
    if (plan.include_zero) {
        inits.emplace_back("zero", StateVector::zero(spec.prior.dim()));
    }
    Rng rng{derive_seed(plan.seed, "map/starts")};
    for (int k = 0; k < plan.prior_draws; ++k) {
        StateVector u = sample_prior(spec.prior, rng);
        // Pull draws toward 0 until the objective is finite (e.g. inside X').
        for (int shrink = 0; shrink < 30 && !std::isfinite(spec.potential.value_or_infinity(u)); ++shrink) {
            u.coeffs *= 0.5;
        }
        inits.emplace_back("prior", std::move(u));
    }
    if (inits.empty()) {
        throw InvariantError("minimize: start plan is empty");
    }
    std::vector<StartRecord> records;
    records.reserve(inits.size());
    for (std::size_t i = 0; i < inits.size(); ++i) {
        StartRecord rec = detail::run_start(spec, inits[i].second, opts);
        rec.index = static_cast<int>(i);
        rec.origin = inits[i].first;
        records.push_back(std::move(rec));
    }
    return detail::merge_starts(std::move(records));
}

} // namespace mixnoise
