#pragma once

#include "errors.hpp"
#include "types.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

namespace mixnoise {

struct QuadratureRule {
    Vector nodes;
    Vector weights;
};

namespace detail {

// Golub-Welsch: nodes are eigenvalues of the symmetric Jacobi matrix, weights
// are mu0 times the squared first eigenvector components.
inline QuadratureRule golub_welsch(const Vector& off_diagonal, double mu0)
{
    const Eigen::Index n = off_diagonal.size() + 1;
    Matrix jacobi = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
        jacobi(i, i + 1) = off_diagonal[i];
        jacobi(i + 1, i) = off_diagonal[i];
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
    if (eig.info() != Eigen::Success) {
        throw NumericalError("quadrature: eigen decomposition failed");
    }
    return {eig.eigenvalues(), mu0 * eig.eigenvectors().row(0).transpose().array().square().matrix()};
}

} // namespace detail

/// Gauss-Hermite rule for the weight exp(-t^2) on R.
inline QuadratureRule gauss_hermite(int n)
{
    if (n < 2) {
        throw InvariantError("gauss_hermite: need at least 2 nodes");
    }
    Vector off(n - 1);
    for (int i = 0; i < n - 1; ++i) {
        off[i] = std::sqrt(0.5 * static_cast<double>(i + 1));
    }
    return detail::golub_welsch(off, std::sqrt(std::numbers::pi));
}

/// Gauss-Legendre rule on [-1, 1].
inline QuadratureRule gauss_legendre(int n)
{
    if (n < 2) {
        throw InvariantError("gauss_legendre: need at least 2 nodes");
    }
    Vector off(n - 1);
    for (int i = 0; i < n - 1; ++i) {
        const double k = static_cast<double>(i + 1);
        off[i] = k / std::sqrt(4.0 * k * k - 1.0);
    }
    return detail::golub_welsch(off, 2.0);
}

} // namespace mixnoise
