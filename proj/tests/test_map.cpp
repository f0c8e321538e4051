#include <mixnoise/map_estimation.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace mixnoise;

namespace {

struct LinearGaussianCase {
    Matrix a;
    Vector var_a;
    Vector y;
    GaussianPrior prior;
};

LinearGaussianCase make_linear_case(Eigen::Index n, std::uint64_t seed)
{
    Rng rng{seed};
    Matrix a = ForwardMap::random_matrix(n, n, 1.0, rng);
    Vector var_a(n);
    Vector y(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        var_a[j] = 0.05 + 0.1 * rng.uniform();
        y[j] = rng.normal();
    }
    return {std::move(a), std::move(var_a), std::move(y), GaussianPrior::matern(n, 1.0, 1.0)};
}

ObjectiveSpec linear_spec(const LinearGaussianCase& c, double scale = 1.0)
{
    const auto noise = MixedGaussianNoise::diagonal(c.var_a, Vector::Zero(c.var_a.size()));
    return ObjectiveSpec{mixed_gaussian_potential(ForwardMap::linear(c.a), noise, DataVector{c.y}), c.prior, scale};
}

Vector normal_equations(const LinearGaussianCase& c)
{
    const Matrix w = c.var_a.cwiseInverse().asDiagonal();
    const Matrix lhs = c.a.transpose() * w * c.a + Matrix(c.prior.eigenvalues().cwiseInverse().asDiagonal());
    return lhs.ldlt().solve(c.a.transpose() * w * c.y);
}

ObjectiveSpec exp_affine_spec(Eigen::Index n, Eigen::Index j, std::uint64_t seed, double scale = 1.0)
{
    Rng rng{seed};
    const Matrix a = ForwardMap::random_matrix(j, n, 1.0, rng);
    const auto map = ForwardMap::exp_affine(a, 0.1);
    Vector y(j);
    for (Eigen::Index k = 0; k < j; ++k) {
        y[k] = 1.0 + 0.5 * rng.normal();
    }
    Vector var_a = Vector::Constant(j, 0.04);
    Vector var_m = Vector::Constant(j, 0.09);
    return ObjectiveSpec{mixed_gaussian_potential(map, MixedGaussianNoise::diagonal(var_a, var_m), DataVector{y}),
                         GaussianPrior::matern(n, 1.0, 1.0), scale};
}

} // namespace

TEST(Objective, ZeroPotentialAtOriginIsZero)
{
    const ObjectiveSpec spec{zero_potential(3), GaussianPrior::matern(3, 1.0, 1.0)};
    EXPECT_DOUBLE_EQ(objective(spec, StateVector::zero(3)), 0.0);
    EXPECT_EQ(gradient(spec, StateVector::zero(3)), Vector::Zero(3));
}

TEST(Objective, ZeroPotentialIsHalfCameronMartin)
{
    const auto prior = GaussianPrior::matern(3, 1.0, 1.0);
    const ObjectiveSpec spec{zero_potential(3), prior, 2.5};
    const StateVector u{0.3, -1.0, 2.0};
    EXPECT_NEAR(objective(spec, u), 2.5 * 0.5 * cm_norm_sq(prior, u), 1e-12);
}

TEST(Objective, MatchesTikhonovFunctional)
{
    const auto c = make_linear_case(5, 3);
    const ObjectiveSpec spec = linear_spec(c);
    Rng rng{8};
    for (int t = 0; t < 10; ++t) {
        const StateVector u = sample_prior(c.prior, rng);
        const Vector r = c.a * u.coeffs - c.y;
        const double tikhonov = 0.5 * (r.array().square() / c.var_a.array()).sum()
                                + 0.5 * (u.coeffs.array().square() / c.prior.eigenvalues().array()).sum();
        const double logdet = 0.5 * c.var_a.array().log().sum();
        EXPECT_NEAR(objective(spec, u), tikhonov + logdet, 1e-10 * std::max(1.0, tikhonov));
    }
}

TEST(Objective, RejectsNonPositiveScale)
{
    EXPECT_THROW(ObjectiveSpec(zero_potential(2), GaussianPrior::identity(2), 0.0), InvariantError);
    EXPECT_THROW(ObjectiveSpec(zero_potential(2), GaussianPrior::identity(3)), DimensionError);
}

TEST(Gradient, AnalyticMatchesFiniteDifference)
{
    const ObjectiveSpec spec = exp_affine_spec(8, 8, 12);
    Rng rng{5};
    for (int t = 0; t < 50; ++t) {
        const StateVector u = sample_prior(spec.prior, rng);
        const Vector analytic = gradient(spec, u);
        const Vector fd = gradient_fd(spec, u, 1e-6);
        EXPECT_LE((analytic - fd).norm(), 1e-5 * std::max(1.0, analytic.norm())) << "state " << t;
    }
}

TEST(Gradient, ScalesLinearly)
{
    const ObjectiveSpec base = exp_affine_spec(3, 4, 2);
    const ObjectiveSpec scaled = exp_affine_spec(3, 4, 2, 7.0);
    const StateVector u{0.2, -0.4, 0.1};
    EXPECT_LE((gradient(scaled, u) - 7.0 * gradient(base, u)).norm(), 1e-12 * gradient(scaled, u).norm());
}

TEST(Minimize, ZeroPotentialGivesOrigin)
{
    const ObjectiveSpec spec{zero_potential(4), GaussianPrior::matern(4, 1.0, 1.0)};
    const MapResult r = minimize(spec, StateVector{1.0, -2.0, 0.5, 3.0});
    EXPECT_TRUE(r.converged);
    EXPECT_LE(x_norm(r.minimizer), 1e-6);
}

TEST(Minimize, MatchesNormalEquations)
{
    const auto c = make_linear_case(16, 19);
    const Vector expected = normal_equations(c);
    const MapResult r = minimize(linear_spec(c), StateVector::zero(16));
    EXPECT_TRUE(r.converged) << r.message;
    EXPECT_LE((r.minimizer.coeffs - expected).lpNorm<Eigen::Infinity>(), 1e-6);
    EXPECT_LE(r.grad_norm, 1e-8 * std::max(1.0, std::abs(r.value)));
}

TEST(Minimize, MultiStartNoWorseThanSingleStart)
{
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
        const ObjectiveSpec spec = exp_affine_spec(2, 2, seed);
        const MapResult single = minimize(spec, StateVector::zero(2));
        StartPlan plan;
        plan.prior_draws = 8;
        plan.seed = seed;
        const MapResult multi = minimize(spec, plan);
        EXPECT_LE(multi.value, single.value + 1e-12);
        EXPECT_EQ(multi.starts.size(), 9u);
        EXPECT_EQ(multi.restarts_used, 8);
        EXPECT_GE(multi.local_optima, 1);
        for (std::size_t i = 1; i < multi.starts.size(); ++i) {
            EXPECT_LE(multi.starts[i - 1].value, multi.starts[i].value);
        }
    }
}

TEST(Minimize, DominatesProbePoints)
{
    const ObjectiveSpec spec = exp_affine_spec(3, 5, 31);
    const StateVector truth{0.5, -0.3, 0.2};
    StartPlan plan;
    plan.explicit_starts = {truth};
    const MapResult r = minimize(spec, plan);
    ASSERT_TRUE(r.converged) << r.message;
    EXPECT_LE(r.value, objective(spec, truth));
    EXPECT_LE(r.value, objective(spec, StateVector::zero(3)));
}

TEST(Minimize, ArgminInvariantUnderScaling)
{
    const StateVector init{0.1, 0.1, 0.1};
    const MapResult base = minimize(exp_affine_spec(3, 5, 9), init);
    for (double c : {1e-3, 0.5, 40.0}) {
        const MapResult scaled = minimize(exp_affine_spec(3, 5, 9, c), init);
        ASSERT_TRUE(scaled.converged) << scaled.message;
        EXPECT_LE((scaled.minimizer.coeffs - base.minimizer.coeffs).norm(), 1e-5);
        EXPECT_NEAR(scaled.value, c * base.value, 1e-8 * std::max(1.0, std::abs(c * base.value)));
    }
}

TEST(Minimize, DeterministicGivenSeed)
{
    const ObjectiveSpec spec = exp_affine_spec(3, 4, 6);
    StartPlan plan;
    plan.seed = 77;
    const MapResult a = minimize(spec, plan);
    const MapResult b = minimize(spec, plan);
    EXPECT_EQ(a.minimizer.coeffs, b.minimizer.coeffs);
    EXPECT_EQ(a.value, b.value);
    ASSERT_EQ(a.starts.size(), b.starts.size());
    for (std::size_t i = 0; i < a.starts.size(); ++i) {
        EXPECT_EQ(a.starts[i].initial.coeffs, b.starts[i].initial.coeffs);
    }
    plan.seed = 78;
    const MapResult c = minimize(spec, plan);
    EXPECT_NE(a.starts.back().initial.coeffs, c.starts.back().initial.coeffs);
}

TEST(Minimize, StaysInsideMultiplicativeDomain)
{
    // Gamma noise on an exp-affine map restricted to a ball: steps leaving
    // the ball read as +inf and are rejected by the line search.
    const auto map = ForwardMap::exp_affine(Matrix::Identity(2, 2), 0.1, 0.5);
    const DataVector y{Vector(Vector::Constant(2, 20.0))};
    const ObjectiveSpec spec{gamma_potential(map, 3.0, y), GaussianPrior::identity(2)};
    const MapResult r = minimize(spec, StateVector::zero(2));
    EXPECT_TRUE(std::isfinite(r.value));
    EXPECT_LE(x_norm(r.minimizer), 0.5);
    EXPECT_LT(r.value, objective(spec, StateVector::zero(2)));
}

TEST(Minimize, NonFiniteStartIsReportedNotHidden)
{
    const auto map = ForwardMap::exp_affine(Matrix::Identity(2, 2), 0.1, 0.5);
    const ObjectiveSpec spec{gamma_potential(map, 3.0, DataVector{1.0, 1.0}), GaussianPrior::identity(2)};
    const MapResult r = minimize(spec, StateVector{3.0, 0.0});
    EXPECT_FALSE(r.converged);
    EXPECT_FALSE(std::isfinite(r.value));
    EXPECT_NE(r.message.find("not finite"), std::string::npos);
}

TEST(Lbfgs, Rosenbrock)
{
    auto fg = [](const Vector& x, Vector& g) {
        const double a = 1.0 - x[0];
        const double b = x[1] - x[0] * x[0];
        g.resize(2);
        g[0] = -2.0 * a - 400.0 * x[0] * b;
        g[1] = 200.0 * b;
        return a * a + 100.0 * b * b;
    };
    const LbfgsResult r = lbfgs_minimize(fg, Vector{{-1.2, 1.0}}, MinimizeOptions{});
    EXPECT_TRUE(r.converged) << r.message;
    EXPECT_NEAR(r.x[0], 1.0, 1e-6);
    EXPECT_NEAR(r.x[1], 1.0, 1e-6);
}

TEST(Lbfgs, IterationLimitIsReported)
{
    auto fg = [](const Vector& x, Vector& g) {
        g = 2.0 * x;
        return x.squaredNorm();
    };
    MinimizeOptions opts;
    opts.max_iterations = 0;
    const LbfgsResult r = lbfgs_minimize(fg, Vector{{1.0}}, opts);
    EXPECT_FALSE(r.converged);
    EXPECT_EQ(r.message, "iteration limit reached");
}
