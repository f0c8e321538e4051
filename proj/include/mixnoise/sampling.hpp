#pragma once

#include "errors.hpp"
#include "potential.hpp"
#include "prior.hpp"
#include "rng.hpp"
#include "types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace mixnoise {

struct Chain {
    std::vector<StateVector> samples;
    double acceptance_rate = 0.0;
    double beta = 1.0;
    std::uint64_t seed = 0;
};

struct PcnOptions {
    int n_samples = 1000;
    double beta = 0.2;
    /// Defaults to 10% of n_samples.
    std::optional<int> burn_in;
    std::optional<StateVector> init;
    /// Consecutive proposals with infinite potential tolerated before giving up.
    int max_infinite_streak = 10000;
};

/// Preconditioned Crank-Nicolson sampler for the posterior with density
/// exp(-Phi) with respect to the prior.
///
/// Proposal v = sqrt(1 - beta^2) u + beta xi, xi ~ prior, accepted with
/// probability min(1, exp(Phi(u) - Phi(v))). The chain starts at `init`
/// (default u = 0).
inline Chain pcn_sample(const Potential& potential, const GaussianPrior& prior, const PcnOptions& opts, Rng& rng)
{
    detail::require_same_size(potential.dim(), prior.dim(), "pcn_sample");
    if (!(opts.beta > 0.0 && opts.beta <= 1.0)) {
        throw InvariantError("pcn_sample: beta must lie in (0, 1]");
    }
    if (opts.n_samples < 0) {
        throw InvariantError("pcn_sample: negative sample count");
    }
    const int burn_in = opts.burn_in.value_or(opts.n_samples / 10);
    StateVector u = opts.init.value_or(StateVector::zero(prior.dim()));
    double phi = potential.value_or_infinity(u);
    if (!std::isfinite(phi)) {
        throw DomainError("pcn_sample: potential is not finite at the initial state");
    }
    const double keep = std::sqrt(1.0 - opts.beta * opts.beta);

    Chain chain;
    chain.beta = opts.beta;
    chain.seed = rng.seed();
    chain.samples.reserve(static_cast<std::size_t>(opts.n_samples));
    long accepted = 0;
    int infinite_streak = 0;
    const int total = burn_in + opts.n_samples;
    for (int step = 0; step < total; ++step) {
        StateVector v = sample_prior(prior, rng);
        v.coeffs = keep * u.coeffs + opts.beta * v.coeffs;
        const double phi_v = potential.value_or_infinity(v);
        if (!std::isfinite(phi_v)) {
            if (++infinite_streak > opts.max_infinite_streak) {
                throw StuckChainError("pcn_sample: potential infinite for every proposal in a row");
            }
        } else {
            infinite_streak = 0;
        }
        const double log_ratio = phi - phi_v;
        const bool accept = std::isfinite(phi_v) && (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio);
        if (accept) {
            u = std::move(v);
            phi = phi_v;
        }
        if (step >= burn_in) {
            accepted += accept ? 1 : 0;
            chain.samples.push_back(u);
        }
    }
    chain.acceptance_rate = opts.n_samples > 0 ? static_cast<double>(accepted) / opts.n_samples : 0.0;
    return chain;
}

/// Short adaptive warm-up that tunes beta toward `target` acceptance. The
/// returned beta is then held fixed for recorded samples.
inline double tune_beta(const Potential& potential, const GaussianPrior& prior, const StateVector& init, Rng& rng,
                        double target = 0.25, int rounds = 20, int steps_per_round = 100)
{
    double beta = 0.5;
    StateVector state = init;
    for (int r = 0; r < rounds; ++r) {
        PcnOptions opts;
        opts.n_samples = steps_per_round;
        opts.beta = beta;
        opts.burn_in = 0;
        opts.init = state;
        const Chain c = pcn_sample(potential, prior, opts, rng);
        state = c.samples.back();
        // Robbins-Monro step on log(beta).
        const double gain = 1.0 / std::sqrt(static_cast<double>(r + 1));
        beta = std::clamp(beta * std::exp(gain * (c.acceptance_rate - target) * 2.0), 1e-4, 1.0);
    }
    return beta;
}

struct HellingerEstimate {
    double value = 0.0;
    double std_error = 0.0;
    long samples = 0;
    double ess1 = 0.0;
    double ess2 = 0.0;
};

namespace detail {

// d^2 = 1/2 mean((sqrt(p1) - sqrt(p2))^2) with p_i = w_i / mean(w_i); equal to
// 1 - mean(sqrt(w1 w2)) / sqrt(mean(w1) mean(w2)) but exactly 0 when w1 == w2.
inline double hellinger_from_log_weights(const std::vector<double>& lw1, const std::vector<double>& lw2,
                                         std::size_t begin, std::size_t end)
{
    const auto normalizer = [&](const std::vector<double>& lw) {
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t i = begin; i < end; ++i) {
            top = std::max(top, lw[i]);
        }
        double s = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            s += std::exp(lw[i] - top);
        }
        return top + std::log(s / static_cast<double>(end - begin));
    };
    const double z1 = normalizer(lw1);
    const double z2 = normalizer(lw2);
    if (!std::isfinite(z1) || !std::isfinite(z2)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        const double a = std::exp(0.5 * (lw1[i] - z1));
        const double b = std::exp(0.5 * (lw2[i] - z2));
        acc += (a - b) * (a - b);
    }
    const double d2 = 0.5 * acc / static_cast<double>(end - begin);
    return std::sqrt(std::clamp(d2, 0.0, 1.0));
}

inline double effective_sample_size(const std::vector<double>& lw)
{
    double top = -std::numeric_limits<double>::infinity();
    for (double x : lw) {
        top = std::max(top, x);
    }
    if (!std::isfinite(top)) {
        return 0.0;
    }
    double s = 0.0;
    double s2 = 0.0;
    for (double x : lw) {
        const double w = std::exp(x - top);
        s += w;
        s2 += w * w;
    }
    return s * s / s2;
}

} // namespace detail

/// Hellinger distance between the posteriors of two potentials that share
/// the prior, by self-normalized importance sampling over given prior draws.
/// Infinite potentials contribute zero weight; standard error by batch means.
inline HellingerEstimate hellinger_estimate(const Potential& p1, const Potential& p2,
                                            const std::vector<StateVector>& prior_draws, int batches = 20)
{
    const std::size_t n = prior_draws.size();
    if (batches < 2 || n < static_cast<std::size_t>(2 * batches)) {
        throw InvariantError("hellinger_estimate: too few samples for batch means");
    }
    std::vector<double> lw1(n);
    std::vector<double> lw2(n);
    for (std::size_t i = 0; i < n; ++i) {
        lw1[i] = -p1.value_or_infinity(prior_draws[i]);
        lw2[i] = -p2.value_or_infinity(prior_draws[i]);
    }
    HellingerEstimate est;
    est.samples = static_cast<long>(n);
    est.ess1 = detail::effective_sample_size(lw1);
    est.ess2 = detail::effective_sample_size(lw2);
    if (est.ess1 < 10.0 || est.ess2 < 10.0) {
        throw UnreliableEstimateError("hellinger_estimate: effective sample size below 10");
    }
    est.value = detail::hellinger_from_log_weights(lw1, lw2, 0, n);

    const std::size_t per = n / static_cast<std::size_t>(batches);
    std::vector<double> batch_values;
    for (int b = 0; b < batches; ++b) {
        const double v = detail::hellinger_from_log_weights(lw1, lw2, b * per, (b + 1) * per);
        if (std::isfinite(v)) {
            batch_values.push_back(v);
        }
    }
    if (batch_values.size() >= 2) {
        double mean = 0.0;
        for (double v : batch_values) {
            mean += v;
        }
        mean /= static_cast<double>(batch_values.size());
        double var = 0.0;
        for (double v : batch_values) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(batch_values.size() - 1);
        est.std_error = std::sqrt(var / static_cast<double>(batch_values.size()));
    } else {
        est.std_error = std::numeric_limits<double>::infinity();
    }
    return est;
}

inline std::vector<StateVector> draw_prior_samples(const GaussianPrior& prior, long count, Rng& rng)
{
    std::vector<StateVector> draws;
    draws.reserve(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) {
        draws.push_back(sample_prior(prior, rng));
    }
    return draws;
}

inline HellingerEstimate hellinger_estimate(const Potential& p1, const Potential& p2, const GaussianPrior& prior,
                                            long n_prior_samples, Rng& rng, int batches = 20)
{
    return hellinger_estimate(p1, p2, draw_prior_samples(prior, n_prior_samples, rng), batches);
}

struct SweepRow {
    double distance = 0.0; // |y - y'|
    double hellinger = 0.0;
    double std_error = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    /// Least-squares slope of d_Hell against |y - y'| through the origin.
    double slope = 0.0;
};

/// d_Hell(mu^y, mu^y') along y' = y + delta * direction / |direction|.
/// All rows reuse the same prior draws. A factory that rejects y' (e.g. y'
/// outside Y') propagates its DomainError.
inline SweepResult wellposedness_sweep(const DataVector& base_y, const Vector& direction,
                                       const std::vector<double>& deltas,
                                       const std::function<Potential(const DataVector&)>& factory,
                                       const GaussianPrior& prior, long n_prior_samples, Rng& rng)
{
    detail::require_same_size(base_y.size(), direction.size(), "wellposedness_sweep");
    const double dn = direction.norm();
    if (!(dn > 0.0)) {
        throw InvariantError("wellposedness_sweep: direction must be nonzero");
    }
    const Vector unit = direction / dn;
    const std::vector<StateVector> draws = draw_prior_samples(prior, n_prior_samples, rng);
    const Potential base = factory(base_y);

    SweepResult out;
    double num = 0.0;
    double den = 0.0;
    for (double delta : deltas) {
        const DataVector y2{Vector(base_y.values + delta * unit)};
        const Potential other = factory(y2);
        const HellingerEstimate est = hellinger_estimate(base, other, draws);
        const double dist = std::abs(delta);
        out.rows.push_back({dist, est.value, est.std_error});
        num += dist * est.value;
        den += dist * dist;
    }
    out.slope = den > 0.0 ? num / den : 0.0;
    return out;
}

} // namespace mixnoise
