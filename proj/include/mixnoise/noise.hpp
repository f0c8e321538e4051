#pragma once

#include "errors.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace mixnoise {

/// Support A_j of one factor of the multiplicative density.
enum class Support { real, non_positive, non_negative };

/// True when z lies in the interior of the support.
inline bool in_support_interior(Support s, double z)
{
    switch (s) {
    case Support::real:
        return std::isfinite(z);
    case Support::non_positive:
        return z < 0.0;
    case Support::non_negative:
        return z > 0.0 && std::isfinite(z);
    }
    return false;
}

/// Factored density rho_m of the multiplicative noise eta_m (mean 1 for the
/// built-in kinds).
class MultiplicativeDensity {
  public:
    enum class Kind { gamma, lognormal, gaussian, custom };

    struct Factor {
        Kind kind = Kind::gamma;
        /// gamma: precision alpha (shape = rate = alpha); lognormal: log-variance
        /// sigma^2; gaussian: variance.
        double param = 1.0;
        Support support = Support::non_negative;
        std::function<double(double)> custom_log_pdf;
        double mode = 1.0;
    };

    static MultiplicativeDensity gamma(Eigen::Index j_dim, double alpha)
    {
        return gamma(std::vector<double>(static_cast<std::size_t>(j_dim), alpha));
    }

    static MultiplicativeDensity gamma(const std::vector<double>& alphas)
    {
        std::vector<Factor> f;
        for (double a : alphas) {
            if (!(a > 0.0) || !std::isfinite(a)) {
                throw InvariantError("gamma density: precision must be positive");
            }
            f.push_back({Kind::gamma, a, Support::non_negative, {}, std::max(0.0, (a - 1.0) / a)});
        }
        return MultiplicativeDensity{std::move(f)};
    }

    static MultiplicativeDensity lognormal(Eigen::Index j_dim, double sigma2)
    {
        if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
            throw InvariantError("lognormal density: log-variance must be positive");
        }
        std::vector<Factor> f(static_cast<std::size_t>(j_dim),
                              Factor{Kind::lognormal, sigma2, Support::non_negative, {}, std::exp(-1.5 * sigma2)});
        return MultiplicativeDensity{std::move(f)};
    }

    /// N(1, variance_j) per component.
    static MultiplicativeDensity gaussian(const Vector& variances)
    {
        std::vector<Factor> f;
        for (Eigen::Index j = 0; j < variances.size(); ++j) {
            if (!(variances[j] > 0.0) || !std::isfinite(variances[j])) {
                throw InvariantError("gaussian density: variance must be positive");
            }
            f.push_back({Kind::gaussian, variances[j], Support::real, {}, 1.0});
        }
        return MultiplicativeDensity{std::move(f)};
    }

    /// User-supplied normalized log-densities. `mode` locates the bulk of the
    /// mass for quadrature truncation.
    static MultiplicativeDensity custom(std::vector<Factor> factors)
    {
        for (auto& f : factors) {
            if (!f.custom_log_pdf) {
                throw InvariantError("custom density: missing log-density");
            }
            f.kind = Kind::custom;
        }
        return MultiplicativeDensity{std::move(factors)};
    }

    [[nodiscard]] Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(factors_.size()); }
    [[nodiscard]] const Factor& factor(Eigen::Index j) const { return factors_.at(static_cast<std::size_t>(j)); }
    [[nodiscard]] Support support(Eigen::Index j) const { return factor(j).support; }

    [[nodiscard]] bool all_gaussian() const
    {
        return std::all_of(factors_.begin(), factors_.end(), [](const Factor& f) { return f.kind == Kind::gaussian; });
    }

    /// log rho_m^j(z); -inf outside the support.
    [[nodiscard]] double log_pdf(Eigen::Index j, double z) const
    {
        const Factor& f = factor(j);
        constexpr double ninf = -std::numeric_limits<double>::infinity();
        switch (f.kind) {
        case Kind::gamma: {
            if (!(z > 0.0)) {
                return ninf;
            }
            const double a = f.param;
            return a * std::log(a) - std::lgamma(a) + (a - 1.0) * std::log(z) - a * z;
        }
        case Kind::lognormal: {
            if (!(z > 0.0)) {
                return ninf;
            }
            const double s2 = f.param;
            const double t = std::log(z) + 0.5 * s2;
            return -std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi * s2) - t * t / (2.0 * s2);
        }
        case Kind::gaussian: {
            const double t = z - 1.0;
            return -0.5 * std::log(2.0 * std::numbers::pi * f.param) - t * t / (2.0 * f.param);
        }
        case Kind::custom:
            return f.custom_log_pdf(z);
        }
        return ninf;
    }

    /// One draw of eta_m^j.
    double sample(Eigen::Index j, Rng& rng) const
    {
        const Factor& f = factor(j);
        switch (f.kind) {
        case Kind::gamma:
            return rng.gamma(f.param, 1.0 / f.param);
        case Kind::lognormal:
            return std::exp(rng.normal(-0.5 * f.param, std::sqrt(f.param)));
        case Kind::gaussian:
            return rng.normal(1.0, std::sqrt(f.param));
        case Kind::custom:
            break;
        }
        throw InvariantError("custom multiplicative density cannot be sampled");
    }

  private:
    explicit MultiplicativeDensity(std::vector<Factor> f) : factors_(std::move(f))
    {
        if (factors_.empty()) {
            throw InvariantError("multiplicative density: J must be >= 1");
        }
    }

    std::vector<Factor> factors_;
};

/// Factored density rho_a of the additive noise; per-component log-densities.
class AdditiveDensity {
  public:
    static AdditiveDensity gaussian(const Vector& variances)
    {
        std::vector<std::function<double(double)>> f;
        for (Eigen::Index j = 0; j < variances.size(); ++j) {
            const double v = variances[j];
            if (!(v > 0.0)) {
                throw InvariantError("additive gaussian: variance must be positive");
            }
            f.emplace_back([v](double z) { return -0.5 * std::log(2.0 * std::numbers::pi * v) - z * z / (2.0 * v); });
        }
        return AdditiveDensity{std::move(f)};
    }

    static AdditiveDensity custom(std::vector<std::function<double(double)>> log_pdfs)
    {
        return AdditiveDensity{std::move(log_pdfs)};
    }

    [[nodiscard]] Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(log_pdfs_.size()); }
    [[nodiscard]] double log_pdf(Eigen::Index j, double z) const { return log_pdfs_.at(static_cast<std::size_t>(j))(z); }

  private:
    explicit AdditiveDensity(std::vector<std::function<double(double)>> f) : log_pdfs_(std::move(f))
    {
        if (log_pdfs_.empty()) {
            throw InvariantError("additive density: J must be >= 1");
        }
    }

    std::vector<std::function<double(double)>> log_pdfs_;
};

/// Symmetric positive-definite matrix with its Cholesky factor computed at
/// construction.
class SpdMatrix {
  public:
    explicit SpdMatrix(Matrix m) : matrix_(std::move(m)), llt_(matrix_)
    {
        if (matrix_.rows() != matrix_.cols()) {
            throw DimensionError("SpdMatrix: matrix is not square");
        }
        if (llt_.info() != Eigen::Success || !(llt_.matrixL().toDenseMatrix().diagonal().array() > 0.0).all()) {
            throw NumericalError("SpdMatrix: Cholesky factorization failed (matrix not positive definite)");
        }
    }

    [[nodiscard]] Eigen::Index dim() const noexcept { return matrix_.rows(); }
    [[nodiscard]] const Matrix& matrix() const noexcept { return matrix_; }
    [[nodiscard]] Matrix lower() const { return llt_.matrixL(); }

    [[nodiscard]] double log_det() const
    {
        return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    }

    [[nodiscard]] Vector solve(const Vector& v) const { return llt_.solve(v); }
    [[nodiscard]] Matrix solve(const Matrix& v) const { return llt_.solve(v); }

    /// r^T M^{-1} r = |L^{-1} r|^2.
    [[nodiscard]] double quad_form(const Vector& r) const
    {
        return llt_.matrixL().solve(r).squaredNorm();
    }

    /// L^{-1} B, one triangular solve per column of B.
    [[nodiscard]] Matrix lower_solve(const Matrix& b) const { return llt_.matrixL().solve(b); }

  private:
    Matrix matrix_;
    Eigen::LLT<Matrix> llt_;
};

/// Additive covariance Gamma^a (SPD) and multiplicative covariance Gamma^m
/// (PSD) of the mixed Gaussian model y = (1 + eta_m) G(u) + eta_a.
class MixedGaussianNoise {
  public:
    MixedGaussianNoise(Matrix gamma_a, Matrix gamma_m) : gamma_a_(std::move(gamma_a)), gamma_m_(std::move(gamma_m))
    {
        if (gamma_a_.rows() != gamma_a_.cols() || gamma_m_.rows() != gamma_m_.cols()) {
            throw DimensionError("MixedGaussianNoise: covariances must be square");
        }
        detail::require_same_size(gamma_a_.rows(), gamma_m_.rows(), "MixedGaussianNoise");
        check_symmetric(gamma_a_, "gamma_a");
        check_symmetric(gamma_m_, "gamma_m");
        if (Eigen::LLT<Matrix>(gamma_a_).info() != Eigen::Success) {
            throw InvariantError("MixedGaussianNoise: gamma_a is not positive definite");
        }
        if (gamma_m_.size() > 0) {
            const double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(gamma_m_, Eigen::EigenvaluesOnly).eigenvalues()[0];
            if (min_eig < -1e-12 * std::max(1.0, gamma_m_.cwiseAbs().maxCoeff())) {
                throw InvariantError("MixedGaussianNoise: gamma_m is not positive semi-definite");
            }
        }
    }

    static MixedGaussianNoise diagonal(const Vector& var_a, const Vector& var_m)
    {
        return MixedGaussianNoise{Matrix(var_a.asDiagonal()), Matrix(var_m.asDiagonal())};
    }

    static MixedGaussianNoise scalar(Eigen::Index j_dim, double var_a, double var_m)
    {
        return diagonal(Vector::Constant(j_dim, var_a), Vector::Constant(j_dim, var_m));
    }

    [[nodiscard]] Eigen::Index dim() const noexcept { return gamma_a_.rows(); }
    [[nodiscard]] const Matrix& gamma_a() const noexcept { return gamma_a_; }
    [[nodiscard]] const Matrix& gamma_m() const noexcept { return gamma_m_; }

    [[nodiscard]] bool is_diagonal() const
    {
        return gamma_a_.isDiagonal(0.0) && gamma_m_.isDiagonal(0.0);
    }

  private:
    static void check_symmetric(const Matrix& m, const char* name)
    {
        const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
        if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
            throw InvariantError(std::string("MixedGaussianNoise: ") + name + " is not symmetric");
        }
    }

    Matrix gamma_a_;
    Matrix gamma_m_;
};

/// Phi = sum_j (log|g_j| - log rho_m^j(y_j / g_j)).
///
/// Raises DomainError when some g_j is zero or y_j / g_j is outside the
/// interior of the support of rho_m^j.
inline double phi_multiplicative(const MultiplicativeDensity& dens, const DataVector& g, const DataVector& y)
{
    detail::require_same_size(g.size(), y.size(), "phi_multiplicative");
    detail::require_same_size(g.size(), dens.size(), "phi_multiplicative density");
    double phi = 0.0;
    for (Eigen::Index j = 0; j < g.size(); ++j) {
        if (g[j] == 0.0 || !std::isfinite(g[j])) {
            throw DomainError("phi_multiplicative: forward value must be nonzero");
        }
        const double z = y[j] / g[j];
        if (!in_support_interior(dens.support(j), z)) {
            throw DomainError("phi_multiplicative: y_" + std::to_string(j) + " / G_" + std::to_string(j)
                              + " outside the interior of the noise support");
        }
        const double lp = dens.log_pdf(j, z);
        if (!std::isfinite(lp)) {
            throw DomainError("phi_multiplicative: zero noise density");
        }
        phi += std::log(std::abs(g[j])) - lp;
    }
    return phi;
}

/// Gamma-noise misfit alpha * sum_j (log g_j + y_j / g_j), defined up to a
/// y-only constant.
inline double phi_gamma(double alpha, const DataVector& g, const DataVector& y)
{
    detail::require_same_size(g.size(), y.size(), "phi_gamma");
    if (!(alpha > 0.0)) {
        throw InvariantError("phi_gamma: alpha must be positive");
    }
    double s = 0.0;
    for (Eigen::Index j = 0; j < g.size(); ++j) {
        if (!(g[j] > 0.0) || !(y[j] > 0.0)) {
            throw DomainError("phi_gamma: forward values and data must be positive");
        }
        s += std::log(g[j]) + y[j] / g[j];
    }
    return alpha * s;
}

/// Gamma(u)_ij = Gamma^a_ij + g_i g_j Gamma^m_ij.
inline SpdMatrix gamma_u(const MixedGaussianNoise& noise, const DataVector& g)
{
    detail::require_same_size(g.size(), noise.dim(), "gamma_u");
    Matrix m = noise.gamma_a() + ((g.values * g.values.transpose()).array() * noise.gamma_m().array()).matrix();
    return SpdMatrix{std::move(m)};
}

/// Phi = 1/2 |g - y|^2_{Gamma(u)} + 1/2 log det Gamma(u).
inline double phi_mixed_gaussian(const MixedGaussianNoise& noise, const DataVector& g, const DataVector& y)
{
    detail::require_same_size(g.size(), y.size(), "phi_mixed_gaussian");
    const SpdMatrix cov = gamma_u(noise, g);
    return 0.5 * cov.quad_form(g.values - y.values) + 0.5 * cov.log_det();
}

namespace detail {

inline double log_sum_exp(const std::vector<double>& terms)
{
    double top = -std::numeric_limits<double>::infinity();
    for (double t : terms) {
        top = std::max(top, t);
    }
    if (!std::isfinite(top)) {
        return top;
    }
    double s = 0.0;
    for (double t : terms) {
        s += std::exp(t - top);
    }
    return top + std::log(s);
}

// Interval outside which rho_m^j falls below 1e-16 of its reference value
// (the mode, or the mean 1 when the density is unbounded at the mode).
inline std::pair<double, double> truncation_interval(const MultiplicativeDensity& dens, Eigen::Index j)
{
    const auto& f = dens.factor(j);
    double centre = f.mode;
    double ref = dens.log_pdf(j, centre);
    if (!std::isfinite(ref)) {
        centre = 1.0;
        ref = dens.log_pdf(j, centre);
    }
    if (!std::isfinite(ref)) {
        throw NumericalError("quadrature: noise density vanishes at its reference point");
    }
    const double threshold = ref + std::log(1e-16);
    const auto below = [&](double x) { return !(dens.log_pdf(j, x) >= threshold); };

    const auto search = [&](double dir, double boundary) {
        double step = 0.5 * std::max(1.0, std::abs(centre));
        double inside = centre;
        for (int it = 0; it < 200; ++it) {
            double x = centre + dir * step;
            if (dir * (x - boundary) >= 0.0) {
                // Ran into the support boundary without dropping below threshold.
                const double near = boundary - dir * 1e-300;
                if (!below(near)) {
                    return boundary;
                }
                x = boundary;
            }
            if (below(x)) {
                double lo = inside;
                double hi = x;
                for (int b = 0; b < 100; ++b) {
                    const double mid = 0.5 * (lo + hi);
                    (below(mid) ? hi : lo) = mid;
                }
                return hi;
            }
            inside = x;
            step *= 2.0;
        }
        throw NumericalError("quadrature: could not bracket the noise density tail");
    };

    const double inf = std::numeric_limits<double>::infinity();
    const double left_boundary = f.support == Support::non_negative ? 0.0 : -inf;
    const double right_boundary = f.support == Support::non_positive ? 0.0 : inf;
    return {search(-1.0, left_boundary), search(1.0, right_boundary)};
}

// Mode and curvature scale of exp(h) by Newton on finite differences, for
// adaptive Gauss-Hermite. Falls back to (x0, s0) when h is not locally concave.
template <class H>
std::pair<double, double> laplace_centre(const H& h, double x0, double s0)
{
    double x = x0;
    double s = s0;
    for (int it = 0; it < 100; ++it) {
        const double e = 1e-3 * s;
        const double hp = h(x + e);
        const double h0 = h(x);
        const double hm = h(x - e);
        const double d1 = (hp - hm) / (2.0 * e);
        const double d2 = (hp - 2.0 * h0 + hm) / (e * e);
        if (!std::isfinite(d1) || !std::isfinite(d2) || d2 >= 0.0) {
            return {x0, s0};
        }
        const double step = -d1 / d2;
        x += step;
        s = 1.0 / std::sqrt(-d2);
        if (std::abs(step) <= 1e-10 * std::max(1.0, std::abs(x))) {
            return {x, s};
        }
    }
    return std::isfinite(x) && std::isfinite(h(x)) ? std::pair{x, s} : std::pair{x0, s0};
}

} // namespace detail

/// Phi = -sum_j log integral rho_a^j(y_j - g_j x) rho_m^j(x) dx.
///
/// Gaussian rho_m uses Gauss-Hermite re-centred on the mode of the full
/// integrand (adaptive quadrature); other densities use Gauss-Legendre on
/// the support truncated where rho_m drops below 1e-16 of its peak. Sums are
/// taken in log space.
inline double phi_mixed_quadrature(const AdditiveDensity& rho_a, const MultiplicativeDensity& rho_m,
                                   const DataVector& g, const DataVector& y, int nodes)
{
    detail::require_same_size(g.size(), y.size(), "phi_mixed_quadrature");
    detail::require_same_size(g.size(), rho_a.size(), "phi_mixed_quadrature additive density");
    detail::require_same_size(g.size(), rho_m.size(), "phi_mixed_quadrature multiplicative density");
    if (nodes < 2) {
        throw InvariantError("phi_mixed_quadrature: need at least 2 nodes");
    }
    QuadratureRule hermite;
    QuadratureRule legendre;
    double phi = 0.0;
    std::vector<double> terms(static_cast<std::size_t>(nodes));
    for (Eigen::Index j = 0; j < g.size(); ++j) {
        const auto& f = rho_m.factor(j);
        if (f.kind == MultiplicativeDensity::Kind::gaussian) {
            if (hermite.nodes.size() == 0) {
                hermite = gauss_hermite(nodes);
            }
            const double sd = std::sqrt(f.param);
            const auto h = [&](double x) {
                return rho_a.log_pdf(j, y[j] - g[j] * x) + rho_m.log_pdf(j, x);
            };
            const auto [mu, sigma] = detail::laplace_centre(h, 1.0, sd);
            for (int i = 0; i < nodes; ++i) {
                const double t = hermite.nodes[i];
                const double x = mu + std::numbers::sqrt2 * sigma * t;
                terms[static_cast<std::size_t>(i)] =
                    std::log(hermite.weights[i] * std::numbers::sqrt2 * sigma) + t * t + h(x);
            }
        } else {
            if (legendre.nodes.size() == 0) {
                legendre = gauss_legendre(nodes);
            }
            const auto [lo, hi] = detail::truncation_interval(rho_m, j);
            const double mid = 0.5 * (lo + hi);
            const double half = 0.5 * (hi - lo);
            for (int i = 0; i < nodes; ++i) {
                const double x = mid + half * legendre.nodes[i];
                terms[static_cast<std::size_t>(i)] = std::log(half * legendre.weights[i]) + rho_m.log_pdf(j, x)
                                                     + rho_a.log_pdf(j, y[j] - g[j] * x);
            }
        }
        const double log_integral = detail::log_sum_exp(terms);
        if (!std::isfinite(log_integral)) {
            throw NumericalError("phi_mixed_quadrature: likelihood integral underflowed for component "
                                 + std::to_string(j));
        }
        phi -= log_integral;
    }
    return phi;
}

/// Extreme eigenvalues of Gamma(u).
struct EigenBounds {
    double lambda_min;
    double lambda_max;
};

inline EigenBounds eig_bounds(const MixedGaussianNoise& noise, const DataVector& g)
{
    const SpdMatrix cov = gamma_u(noise, g);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov.matrix(), Eigen::EigenvaluesOnly);
    const Vector& ev = eig.eigenvalues();
    return {ev[0], ev[ev.size() - 1]};
}

struct GaussianMoments {
    Vector mean;
    Matrix covariance;
};

/// Moments of nu^{y,A}(dx) ~ rho_a(y - A x) rho_m(x) for Gaussian noises and
/// diagonal A: Sigma = (Gm^-1 + A Ga^-1 A)^-1, m = Sigma (A Ga^-1 y + Gm^-1 1).
inline GaussianMoments nu_posterior_moments(const DataVector& y, const Vector& a_diag, const MixedGaussianNoise& noise)
{
    detail::require_same_size(y.size(), noise.dim(), "nu_posterior_moments");
    detail::require_same_size(a_diag.size(), noise.dim(), "nu_posterior_moments A");
    const Eigen::LLT<Matrix> gm(noise.gamma_m());
    if (gm.info() != Eigen::Success) {
        throw NumericalError("nu_posterior_moments: gamma_m is singular");
    }
    const Eigen::LLT<Matrix> ga(noise.gamma_a());
    const Eigen::Index n = noise.dim();
    const Matrix gm_inv = gm.solve(Matrix::Identity(n, n));
    const Matrix ga_inv = ga.solve(Matrix::Identity(n, n));
    const auto a = a_diag.asDiagonal();
    Matrix precision = gm_inv + a * ga_inv * a;
    const Eigen::LLT<Matrix> prec(precision);
    if (prec.info() != Eigen::Success) {
        throw NumericalError("nu_posterior_moments: precision not positive definite");
    }
    Matrix sigma = prec.solve(Matrix::Identity(n, n));
    sigma = 0.5 * (sigma + sigma.transpose());
    const Vector rhs = a * (ga_inv * y.values) + gm_inv * Vector::Ones(n);
    return {sigma * rhs, sigma};
}

/// 1F1(-1/2, 1/2, -x) = exp(-x) + erf(sqrt x) sqrt(pi x), x >= 0.
inline double kummer_m_half_half(double x)
{
    if (x < 0.0) {
        throw InvariantError("kummer_m_half_half: argument must be >= 0");
    }
    return std::exp(-x) + std::erf(std::sqrt(x)) * std::sqrt(std::numbers::pi * x);
}

/// E|X| for X ~ N(mean, variance).
inline double abs_first_moment(double mean, double variance)
{
    if (!(variance > 0.0)) {
        throw InvariantError("abs_first_moment: variance must be positive");
    }
    return std::sqrt(2.0 * variance / std::numbers::pi) * kummer_m_half_half(0.5 * mean * mean / variance);
}

/// Draw from N(0, cov) through a Cholesky factor.
inline Vector sample_gaussian(const Eigen::LLT<Matrix>& cov, Rng& rng)
{
    Vector z(cov.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        z[i] = rng.normal();
    }
    return cov.matrixL() * z;
}

} // namespace mixnoise
