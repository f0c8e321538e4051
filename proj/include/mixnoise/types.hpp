#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <initializer_list>
#include <vector>

namespace mixnoise {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace detail {

inline Vector to_vector(std::initializer_list<double> values)
{
    Vector v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) {
        v[i++] = x;
    }
    return v;
}

inline Vector to_vector(const std::vector<double>& values)
{
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

} // namespace detail

/// Karhunen-Loeve coordinates of an unknown state u.
struct StateVector {
    Vector coeffs;

    StateVector() = default;
    explicit StateVector(Vector c) : coeffs(std::move(c)) {}
    StateVector(std::initializer_list<double> c) : coeffs(detail::to_vector(c)) {}

    static StateVector zero(Eigen::Index n) { return StateVector{Vector::Zero(n)}; }

    [[nodiscard]] Eigen::Index size() const noexcept { return coeffs.size(); }
    [[nodiscard]] bool is_finite() const { return coeffs.allFinite(); }
    double operator[](Eigen::Index k) const { return coeffs[k]; }
    double& operator[](Eigen::Index k) { return coeffs[k]; }
};

/// An observation (or forward-map output) in R^J.
struct DataVector {
    Vector values;

    DataVector() = default;
    explicit DataVector(Vector v) : values(std::move(v)) {}
    DataVector(std::initializer_list<double> v) : values(detail::to_vector(v)) {}

    [[nodiscard]] Eigen::Index size() const noexcept { return values.size(); }
    [[nodiscard]] bool is_finite() const { return values.allFinite(); }
    double operator[](Eigen::Index j) const { return values[j]; }
    double& operator[](Eigen::Index j) { return values[j]; }
};

} // namespace mixnoise
