#pragma once

#include "errors.hpp"
#include "rng.hpp"
#include "types.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace mixnoise {

/// Zero-mean Gaussian prior on R^n, diagonal in the Karhunen-Loeve basis.
///
/// The eigenvalues are the KL variances lambda_1 >= ... >= lambda_n > 0; the
/// Cameron-Martin norm is ||u||_E^2 = sum_k u_k^2 / lambda_k.
class GaussianPrior {
  public:
    explicit GaussianPrior(Vector eigenvalues) : eigenvalues_(std::move(eigenvalues))
    {
        if (eigenvalues_.size() == 0) {
            throw InvariantError("GaussianPrior: empty spectrum");
        }
        for (Eigen::Index k = 0; k < eigenvalues_.size(); ++k) {
            const double lam = eigenvalues_[k];
            if (!std::isfinite(lam) || lam <= 0.0) {
                throw InvariantError("GaussianPrior: eigenvalue " + std::to_string(k) + " is not positive");
            }
            if (k > 0 && lam > eigenvalues_[k - 1]) {
                throw InvariantError("GaussianPrior: eigenvalues must be non-increasing");
            }
        }
    }

    /// lambda_k = (tau^2 + k^2)^(-s), k = 1..n.
    static GaussianPrior matern(Eigen::Index n, double tau, double s)
    {
        if (n < 1) {
            throw InvariantError("GaussianPrior: dimension must be >= 1");
        }
        Vector lam(n);
        for (Eigen::Index k = 0; k < n; ++k) {
            const double kk = static_cast<double>(k + 1);
            lam[k] = std::pow(tau * tau + kk * kk, -s);
        }
        return GaussianPrior{std::move(lam)};
    }

    static GaussianPrior identity(Eigen::Index n) { return GaussianPrior{Vector::Ones(n)}; }

    [[nodiscard]] Eigen::Index dim() const noexcept { return eigenvalues_.size(); }
    [[nodiscard]] const Vector& eigenvalues() const noexcept { return eigenvalues_; }

  private:
    Vector eigenvalues_;
};

/// A true state u-dagger; `in_e` records whether it is treated as
/// Cameron-Martin regular.
struct TruthSpec {
    StateVector coeffs;
    bool in_e = true;
};

/// Independent draws coeffs[k] ~ N(0, lambda_k).
inline StateVector sample_prior(const GaussianPrior& prior, Rng& rng)
{
    const Vector& lam = prior.eigenvalues();
    Vector u(lam.size());
    for (Eigen::Index k = 0; k < lam.size(); ++k) {
        u[k] = std::sqrt(lam[k]) * rng.normal();
    }
    return StateVector{std::move(u)};
}

inline double cm_norm_sq(const GaussianPrior& prior, const StateVector& u)
{
    detail::require_same_size(u.size(), prior.dim(), "cm_norm_sq");
    return (u.coeffs.array().square() / prior.eigenvalues().array()).sum();
}

inline double x_norm(const StateVector& u) { return u.coeffs.norm(); }

} // namespace mixnoise
