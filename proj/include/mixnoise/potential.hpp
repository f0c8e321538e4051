#pragma once

#include "errors.hpp"
#include "forward.hpp"
#include "noise.hpp"
#include "types.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

namespace mixnoise {

/// Negative log-likelihood u -> Phi(u; y), bound to a forward map, a noise
/// model and data. Defined up to y-only constants.
///
/// Evaluation raises DomainError outside the model's domain;
/// `value_or_infinity` maps that to +inf, the extended-value convention used
/// by the optimizer and the samplers.
class Potential {
  public:
    using ValueFn = std::function<double(const StateVector&)>;
    using GradientFn = std::function<Vector(const StateVector&)>;

    Potential(Eigen::Index dim, ValueFn value, GradientFn gradient = {})
        : dim_(dim), value_(std::move(value)), gradient_(std::move(gradient))
    {
        if (!value_) {
            throw InvariantError("Potential: missing value function");
        }
    }

    [[nodiscard]] Eigen::Index dim() const noexcept { return dim_; }

    double operator()(const StateVector& u) const
    {
        detail::require_same_size(u.size(), dim_, "potential");
        return value_(u);
    }

    [[nodiscard]] double value_or_infinity(const StateVector& u) const
    {
        try {
            const double v = (*this)(u);
            return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
        } catch (const DomainError&) {
            return std::numeric_limits<double>::infinity();
        }
    }

    [[nodiscard]] bool has_analytic_gradient() const noexcept { return static_cast<bool>(gradient_); }

    /// Analytic gradient when available, central differences otherwise.
    [[nodiscard]] Vector gradient(const StateVector& u) const
    {
        detail::require_same_size(u.size(), dim_, "potential gradient");
        if (gradient_) {
            return gradient_(u);
        }
        return gradient_fd(u, default_fd_step(u));
    }

    [[nodiscard]] Vector gradient_fd(const StateVector& u, double h) const
    {
        Vector grad(u.size());
        StateVector probe = u;
        for (Eigen::Index k = 0; k < u.size(); ++k) {
            probe[k] = u[k] + h;
            const double plus = (*this)(probe);
            probe[k] = u[k] - h;
            const double minus = (*this)(probe);
            probe[k] = u[k];
            grad[k] = (plus - minus) / (2.0 * h);
        }
        return grad;
    }

  private:
    Eigen::Index dim_;
    ValueFn value_;
    GradientFn gradient_;
};

/// Phi == 0.
inline Potential zero_potential(Eigen::Index dim)
{
    return Potential{dim, [](const StateVector&) { return 0.0; },
                     [](const StateVector& u) { return Vector(Vector::Zero(u.size())); }};
}

/// Phi + c; the posterior is unchanged.
inline Potential shifted(Potential base, double c)
{
    auto shared = std::make_shared<const Potential>(std::move(base));
    Potential::GradientFn grad;
    if (shared->has_analytic_gradient()) {
        grad = [shared](const StateVector& u) { return shared->gradient(u); };
    }
    return Potential{shared->dim(), [shared, c](const StateVector& u) { return (*shared)(u) + c; }, std::move(grad)};
}

namespace detail {

inline void check_y_in_support(const ForwardMap& forward, const MultiplicativeDensity& dens, const DataVector& y)
{
    detail::require_same_size(y.size(), forward.output_dim(), "data vs forward output");
    detail::require_same_size(y.size(), dens.size(), "data vs noise density");
    if (!forward.is_positive()) {
        return;
    }
    for (Eigen::Index j = 0; j < y.size(); ++j) {
        if (!in_support_interior(dens.support(j), y[j])) {
            throw DomainError("data y_" + std::to_string(j) + " = " + std::to_string(y[j])
                              + " outside Y' (interior of the noise support)");
        }
    }
}

} // namespace detail

/// Purely multiplicative potential for a factored density. For positive
/// forward maps y must lie in Y'.
inline Potential multiplicative_potential(ForwardMap forward, MultiplicativeDensity dens, DataVector y)
{
    detail::check_y_in_support(forward, dens, y);
    const Eigen::Index n = forward.input_dim();
    return Potential{n, [forward = std::move(forward), dens = std::move(dens), y = std::move(y)](const StateVector& u) {
                         return phi_multiplicative(dens, forward.apply(u), y);
                     }};
}

/// Gamma-noise potential with analytic gradient alpha * J^T (1/g - y/g^2).
inline Potential gamma_potential(ForwardMap forward, double alpha, DataVector y)
{
    detail::check_y_in_support(forward, MultiplicativeDensity::gamma(y.size(), alpha), y);
    const Eigen::Index n = forward.input_dim();
    auto shared = std::make_shared<const ForwardMap>(std::move(forward));
    auto data = std::make_shared<const DataVector>(std::move(y));
    return Potential{n, [shared, data, alpha](const StateVector& u) { return phi_gamma(alpha, shared->apply(u), *data); },
                     [shared, data, alpha](const StateVector& u) {
                         const DataVector g = shared->apply(u);
                         if (!(g.values.array() > 0.0).all()) {
                             throw DomainError("gamma potential: forward values must be positive");
                         }
                         const Vector dg = alpha
                                           * (g.values.array().inverse()
                                              - data->values.array() / g.values.array().square())
                                                 .matrix();
                         return Vector(shared->jacobian(u).transpose() * dg);
                     }};
}

/// Sufficient statistics of a batch y_1..y_k: mean and scatter
/// (1/k) sum (y_i - mean)(y_i - mean)^T.
struct DataSummary {
    Vector mean;
    Matrix scatter;
    long count = 1;

    static DataSummary single(const DataVector& y)
    {
        return {y.values, Matrix::Zero(y.size(), y.size()), 1};
    }

    static DataSummary of(const std::vector<DataVector>& ys)
    {
        if (ys.empty()) {
            throw InvariantError("DataSummary: empty batch");
        }
        const Eigen::Index j = ys.front().size();
        Vector mean = Vector::Zero(j);
        for (const auto& y : ys) {
            detail::require_same_size(y.size(), j, "DataSummary");
            mean += y.values;
        }
        mean /= static_cast<double>(ys.size());
        Matrix scatter = Matrix::Zero(j, j);
        for (const auto& y : ys) {
            const Vector d = y.values - mean;
            scatter += d * d.transpose();
        }
        scatter /= static_cast<double>(ys.size());
        return {std::move(mean), std::move(scatter), static_cast<long>(ys.size())};
    }
};

/// Weights of the mixed-Gaussian potential
/// Phi = misfit/2 * (|g - mean|^2_Gamma + tr(Gamma^-1 scatter)) + logdet/2 * log det Gamma.
/// A single observation uses (1, 1); the small-noise functional uses
/// (n^2, 1); a batch of n observations uses (n, n).
struct MixedWeights {
    double misfit = 1.0;
    double logdet = 1.0;
};

/// Value of the weighted mixed-Gaussian potential at forward value g.
inline double mixed_gaussian_value(const MixedGaussianNoise& noise, const DataVector& g, const DataSummary& data,
                                   MixedWeights w)
{
    detail::require_same_size(g.size(), data.mean.size(), "mixed gaussian data");
    const SpdMatrix cov = gamma_u(noise, g);
    double misfit = cov.quad_form(g.values - data.mean);
    if (!data.scatter.isZero(0.0)) {
        misfit += cov.solve(data.scatter).trace();
    }
    return 0.5 * w.misfit * misfit + (w.logdet != 0.0 ? 0.5 * w.logdet * cov.log_det() : 0.0);
}

/// d Phi / d g for the weighted mixed-Gaussian potential, valid for dense
/// Gamma^a and Gamma^m.
inline Vector mixed_gaussian_dphi_dg(const MixedGaussianNoise& noise, const DataVector& g, const DataSummary& data,
                                     MixedWeights w)
{
    const SpdMatrix cov = gamma_u(noise, g);
    const Matrix& gm = noise.gamma_m();
    const Vector alpha = cov.solve(Vector(g.values - data.mean));
    Vector grad = alpha.array() - alpha.array() * (gm * (g.values.array() * alpha.array()).matrix()).array();
    if (!data.scatter.isZero(0.0)) {
        const Matrix tmp = cov.solve(data.scatter);
        const Matrix b = cov.solve(Matrix(tmp.transpose()));
        grad -= (b.array() * gm.array()).matrix() * g.values;
    }
    grad *= w.misfit;
    if (w.logdet != 0.0) {
        const Matrix inv = cov.solve(Matrix(Matrix::Identity(g.size(), g.size())));
        grad += w.logdet * ((inv.array() * gm.array()).matrix() * g.values);
    }
    return grad;
}

/// Mixed multiplicative/additive Gaussian potential with analytic gradient
/// (chain rule through the forward Jacobian).
inline Potential mixed_gaussian_potential(ForwardMap forward, MixedGaussianNoise noise, DataSummary data,
                                          MixedWeights weights = {})
{
    detail::require_same_size(forward.output_dim(), noise.dim(), "forward output vs noise");
    detail::require_same_size(data.mean.size(), noise.dim(), "data vs noise");
    struct Bound {
        ForwardMap forward;
        MixedGaussianNoise noise;
        DataSummary data;
        MixedWeights weights;
    };
    auto b = std::make_shared<const Bound>(Bound{std::move(forward), std::move(noise), std::move(data), weights});
    const Eigen::Index n = b->forward.input_dim();
    return Potential{n,
                     [b](const StateVector& u) {
                         return mixed_gaussian_value(b->noise, b->forward.apply(u), b->data, b->weights);
                     },
                     [b](const StateVector& u) {
                         const DataVector g = b->forward.apply(u);
                         const Vector dg = mixed_gaussian_dphi_dg(b->noise, g, b->data, b->weights);
                         return Vector(b->forward.jacobian(u).transpose() * dg);
                     }};
}

inline Potential mixed_gaussian_potential(ForwardMap forward, MixedGaussianNoise noise, const DataVector& y)
{
    return mixed_gaussian_potential(std::move(forward), std::move(noise), DataSummary::single(y));
}

/// Mixed potential evaluated by one-dimensional quadrature per component.
inline Potential mixed_quadrature_potential(ForwardMap forward, AdditiveDensity rho_a, MultiplicativeDensity rho_m,
                                            DataVector y, int nodes)
{
    detail::require_same_size(forward.output_dim(), y.size(), "forward output vs data");
    const Eigen::Index n = forward.input_dim();
    return Potential{n, [forward = std::move(forward), rho_a = std::move(rho_a), rho_m = std::move(rho_m),
                         y = std::move(y), nodes](const StateVector& u) {
                         return phi_mixed_quadrature(rho_a, rho_m, forward.apply(u), y, nodes);
                     }};
}

} // namespace mixnoise
