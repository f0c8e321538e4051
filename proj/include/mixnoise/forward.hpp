#pragma once

#include "errors.hpp"
#include "prior.hpp"
#include "rng.hpp"
#include "types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace mixnoise {

/// u -> A u + b.
struct LinearMap {
    Matrix a;
    Vector b;
};

/// u -> eps + exp(A u), componentwise. Bounded below by eps everywhere.
struct ExpAffineMap {
    Matrix a;
    double eps = 0.0;
};

/// Pressure observations of -(exp(w) p')' = f on (0,1), p(0) = p(1) = 0,
/// with log-conductivity w(x) = sum_k u_k sqrt(2) sin(k pi x).
struct Elliptic1dMap {
    Eigen::Index n_coeffs = 1;
    Eigen::Index grid_points = 127; // interior nodes
    Eigen::Index observations = 7;  // equispaced interior observation points
    double source = 1.0;
};

/// Deterministic forward map G : R^n -> R^J.
///
/// Positive maps carry the lower bound eps and an admissible ball
/// X' = {||u|| <= radius}; applying them outside the ball raises DomainError.
class ForwardMap {
  public:
    using Kind = std::variant<LinearMap, ExpAffineMap, Elliptic1dMap>;

    static ForwardMap linear(Matrix a, Vector b)
    {
        detail::require_same_size(a.rows(), b.size(), "linear map offset");
        return ForwardMap{LinearMap{std::move(a), std::move(b)}};
    }

    static ForwardMap linear(Matrix a)
    {
        Vector b = Vector::Zero(a.rows());
        return linear(std::move(a), std::move(b));
    }

    static ForwardMap exp_affine(Matrix a, double eps,
                                 double radius = std::numeric_limits<double>::infinity())
    {
        if (!(eps >= 0.0)) {
            throw InvariantError("exp-affine map: eps must be >= 0");
        }
        ForwardMap map{ExpAffineMap{std::move(a), eps}};
        map.set_admissible_radius(radius);
        return map;
    }

    static ForwardMap elliptic_1d(Eigen::Index n_coeffs, Eigen::Index grid_points,
                                  Eigen::Index observations, double source = 1.0)
    {
        if (n_coeffs < 1 || grid_points < 2 || observations < 1) {
            throw InvariantError("elliptic-1d map: need n >= 1, m >= 2, J >= 1");
        }
        return ForwardMap{Elliptic1dMap{n_coeffs, grid_points, observations, source}};
    }

    /// Seed-generated dense matrix with iid N(0, scale^2 / cols) entries.
    static Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng)
    {
        Matrix a(rows, cols);
        const double sd = scale / std::sqrt(static_cast<double>(cols));
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                a(i, j) = sd * rng.normal();
            }
        }
        return a;
    }

    [[nodiscard]] std::string_view kind_name() const
    {
        return std::visit(
            [](const auto& m) -> std::string_view {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, LinearMap>) {
                    return "linear";
                } else if constexpr (std::is_same_v<T, ExpAffineMap>) {
                    return "exp-affine";
                } else {
                    return "elliptic-1d";
                }
            },
            kind_);
    }

    [[nodiscard]] const Kind& kind() const noexcept { return kind_; }

    [[nodiscard]] Eigen::Index input_dim() const
    {
        return std::visit(
            [](const auto& m) -> Eigen::Index {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, Elliptic1dMap>) {
                    return m.n_coeffs;
                } else {
                    return m.a.cols();
                }
            },
            kind_);
    }

    [[nodiscard]] Eigen::Index output_dim() const
    {
        return std::visit(
            [](const auto& m) -> Eigen::Index {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, Elliptic1dMap>) {
                    return m.observations;
                } else {
                    return m.a.rows();
                }
            },
            kind_);
    }

    [[nodiscard]] bool is_positive() const
    {
        const auto* e = std::get_if<ExpAffineMap>(&kind_);
        return e != nullptr && e->eps > 0.0;
    }

    [[nodiscard]] double eps_lower() const
    {
        const auto* e = std::get_if<ExpAffineMap>(&kind_);
        return e != nullptr ? e->eps : 0.0;
    }

    [[nodiscard]] double admissible_radius() const noexcept { return radius_; }

    void set_admissible_radius(double radius)
    {
        if (!(radius > 0.0)) {
            throw InvariantError("admissible radius must be positive");
        }
        radius_ = radius;
    }

    [[nodiscard]] bool admissible(const StateVector& u) const
    {
        return !is_positive() || x_norm(u) <= radius_;
    }

    /// Scales u back onto the admissible ball when it lies outside.
    [[nodiscard]] StateVector project_to_admissible(const StateVector& u) const
    {
        const double r = x_norm(u);
        if (admissible(u) || r == 0.0) {
            return u;
        }
        return StateVector{u.coeffs * (radius_ / r * (1.0 - 1e-12))};
    }

    [[nodiscard]] DataVector apply(const StateVector& u) const
    {
        detail::require_same_size(u.size(), input_dim(), "forward map input");
        if (!admissible(u)) {
            throw DomainError("forward map: state outside admissible ball (||u|| = "
                              + std::to_string(x_norm(u)) + " > " + std::to_string(radius_) + ")");
        }
        return std::visit([&u](const auto& m) { return apply_impl(m, u); }, kind_);
    }

    /// Analytic Jacobian for linear and exp-affine maps; central differences
    /// otherwise.
    [[nodiscard]] Matrix jacobian(const StateVector& u) const;

  private:
    explicit ForwardMap(Kind kind) : kind_(std::move(kind)) {}

    static DataVector apply_impl(const LinearMap& m, const StateVector& u)
    {
        return DataVector{m.a * u.coeffs + m.b};
    }

    static DataVector apply_impl(const ExpAffineMap& m, const StateVector& u)
    {
        Vector z = m.a * u.coeffs;
        return DataVector{(z.array().exp() + m.eps).matrix()};
    }

    static DataVector apply_impl(const Elliptic1dMap& m, const StateVector& u);

    Kind kind_;
    double radius_ = std::numeric_limits<double>::infinity();
};

/// Log-conductivity field of the elliptic map at x.
inline double kl_field(const StateVector& u, double x)
{
    double w = 0.0;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
        w += u[k] * std::numbers::sqrt2 * std::sin(static_cast<double>(k + 1) * std::numbers::pi * x);
    }
    return w;
}

inline DataVector ForwardMap::apply_impl(const Elliptic1dMap& m, const StateVector& u)
{
    const Eigen::Index n = m.grid_points;
    const double h = 1.0 / static_cast<double>(n + 1);

    // Tridiagonal system; conductivities at the cell midpoints.
    Vector flux(n + 1);
    for (Eigen::Index i = 0; i <= n; ++i) {
        flux[i] = std::exp(kl_field(u, (static_cast<double>(i) + 0.5) * h));
    }
    Vector diag(n), upper(n), rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        diag[i] = flux[i] + flux[i + 1];
        upper[i] = -flux[i + 1];
        rhs[i] = h * h * m.source;
    }

    // Thomas algorithm.
    for (Eigen::Index i = 1; i < n; ++i) {
        if (std::abs(diag[i - 1]) < 1e-300) {
            throw NumericalError("elliptic-1d: singular tridiagonal system");
        }
        const double w = upper[i - 1] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    if (std::abs(diag[n - 1]) < 1e-300) {
        throw NumericalError("elliptic-1d: singular tridiagonal system");
    }
    Vector p(n + 2);
    p[0] = 0.0;
    p[n + 1] = 0.0;
    p[n] = rhs[n - 1] / diag[n - 1];
    for (Eigen::Index i = n - 2; i >= 0; --i) {
        p[i + 1] = (rhs[i] - upper[i] * p[i + 2]) / diag[i];
    }
    if (!p.allFinite()) {
        throw NumericalError("elliptic-1d: non-finite solution");
    }

    // Linear interpolation at x_j = j / (J + 1).
    Vector out(m.observations);
    for (Eigen::Index j = 0; j < m.observations; ++j) {
        const double x = static_cast<double>(j + 1) / static_cast<double>(m.observations + 1);
        const double s = x / h;
        const auto left = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(s)), n);
        const double t = s - static_cast<double>(left);
        out[j] = (1.0 - t) * p[left] + t * p[left + 1];
    }
    return DataVector{std::move(out)};
}

inline double default_fd_step(const StateVector& u) { return 1e-5 * std::max(1.0, x_norm(u)); }

/// Central-difference Jacobian; column k = (G(u + h e_k) - G(u - h e_k)) / 2h.
inline Matrix jacobian_fd(const ForwardMap& map, const StateVector& u, double h)
{
    if (!(h > 0.0)) {
        throw InvariantError("jacobian_fd: step must be positive");
    }
    detail::require_same_size(u.size(), map.input_dim(), "jacobian_fd");
    Matrix jac(map.output_dim(), u.size());
    StateVector probe = u;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
        probe[k] = u[k] + h;
        const Vector plus = map.apply(probe).values;
        probe[k] = u[k] - h;
        const Vector minus = map.apply(probe).values;
        probe[k] = u[k];
        jac.col(k) = (plus - minus) / (2.0 * h);
    }
    return jac;
}

inline Matrix ForwardMap::jacobian(const StateVector& u) const
{
    detail::require_same_size(u.size(), input_dim(), "forward map jacobian");
    if (const auto* lin = std::get_if<LinearMap>(&kind_)) {
        return lin->a;
    }
    if (const auto* ea = std::get_if<ExpAffineMap>(&kind_)) {
        if (!admissible(u)) {
            throw DomainError("forward map: state outside admissible ball");
        }
        const Vector z = (ea->a * u.coeffs).array().exp();
        return z.asDiagonal() * ea->a;
    }
    return jacobian_fd(*this, u, default_fd_step(u));
}

/// G(u) as the diagonal matrix diag(G_j(u)).
inline Eigen::DiagonalMatrix<double, Eigen::Dynamic> diag_matrix(const DataVector& g)
{
    return Eigen::DiagonalMatrix<double, Eigen::Dynamic>(g.values);
}

} // namespace mixnoise
