#include <mixnoise/consistency.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace mixnoise;

namespace {

MixedGaussianNoise dense_noise()
{
    Matrix ga(3, 3);
    ga << 0.04, 0.01, 0.0, 0.01, 0.05, 0.01, 0.0, 0.01, 0.03;
    Matrix gm(3, 3);
    gm << 0.09, 0.02, 0.01, 0.02, 0.06, 0.0, 0.01, 0.0, 0.04;
    return MixedGaussianNoise{ga, gm};
}

struct ExpAffineProblem {
    ForwardMap forward;
    MixedGaussianNoise noise;
    GaussianPrior prior;
    TruthSpec truth;
};

ExpAffineProblem exp_affine_problem(Eigen::Index n, Eigen::Index j, std::uint64_t seed)
{
    Rng rng{seed};
    const Matrix a = ForwardMap::random_matrix(j, n, 1.0, rng);
    const auto prior = GaussianPrior::matern(n, 1.0, 1.0);
    StateVector truth = sample_prior(prior, rng);
    return {ForwardMap::exp_affine(a, 0.1), MixedGaussianNoise::scalar(j, 0.04, 0.09), prior, TruthSpec{truth, true}};
}

} // namespace

TEST(SmallNoiseData, ZeroNoiseReturnsForwardValue)
{
    const auto map = ForwardMap::linear(Matrix::Identity(3, 3));
    const StateVector truth{1.0, -2.0, 0.5};
    Rng rng{1};
    const DataVector y = gen_small_noise_data(truth, map, dense_noise(), 7, rng, true);
    EXPECT_EQ(y.values, truth.coeffs);
}

TEST(SmallNoiseData, ReplicateMomentsMatchScaledCovariance)
{
    const auto map = ForwardMap::linear(Matrix::Identity(3, 3));
    const auto noise = dense_noise();
    const StateVector truth{1.0, -2.0, 0.5};
    const int n = 4;
    const int reps = 10000;
    const Matrix expected = gamma_u(noise, map.apply(truth)).matrix() / (n * n);

    Rng rng{42};
    std::vector<Vector> ys;
    Vector mean = Vector::Zero(3);
    for (int r = 0; r < reps; ++r) {
        ys.push_back(gen_small_noise_data(truth, map, noise, n, rng).values);
        mean += ys.back();
    }
    mean /= reps;
    Matrix cov = Matrix::Zero(3, 3);
    for (const auto& y : ys) {
        cov += (y - mean) * (y - mean).transpose();
    }
    cov /= reps - 1;
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(mean[i], truth[i], 3.0 * std::sqrt(expected(i, i) / reps));
        for (int j = 0; j < 3; ++j) {
            const double se = std::sqrt((expected(i, i) * expected(j, j) + expected(i, j) * expected(i, j)) / reps);
            EXPECT_NEAR(cov(i, j), expected(i, j), 3.0 * se) << i << "," << j;
        }
    }
}

TEST(SmallNoiseData, RequiresPositiveDefiniteCovariances)
{
    const auto map = ForwardMap::linear(Matrix::Identity(2, 2));
    const auto noise = MixedGaussianNoise::scalar(2, 0.1, 0.0);
    Rng rng{1};
    EXPECT_THROW(gen_small_noise_data(StateVector{1.0, 1.0}, map, noise, 2, rng), InvariantError);
    EXPECT_THROW(gen_small_noise_data(StateVector{1.0, 1.0}, map, MixedGaussianNoise::scalar(2, 0.1, 0.1), 0, rng),
                 InvariantError);
}

TEST(SmallNoiseData, DeterministicPerSeed)
{
    const auto map = ForwardMap::linear(Matrix::Identity(3, 3));
    Rng a{5};
    Rng b{5};
    EXPECT_EQ(gen_small_noise_data(StateVector{1.0, 2.0, 3.0}, map, dense_noise(), 3, a).values,
              gen_small_noise_data(StateVector{1.0, 2.0, 3.0}, map, dense_noise(), 3, b).values);
}

TEST(SmallNoiseExperiment, IdentityMapMisfitDecreases)
{
    const auto map = ForwardMap::linear(Matrix::Identity(3, 3));
    const auto prior = GaussianPrior::matern(3, 1.0, 1.0);
    SmallNoiseOptions opts;
    opts.seeds = 5;
    opts.prior_starts = 2;
    opts.seed = 3;
    const SmallNoiseRun run =
        small_noise_experiment(TruthSpec{StateVector{0.8, -0.5, 0.3}, true}, map, dense_noise(), prior, opts);
    ASSERT_EQ(run.rows.size(), 30u);
    EXPECT_LT(run.summary.back().median_misfit_y, run.summary.front().median_misfit_y);
}

TEST(SmallNoiseExperiment, ZeroNoiseMisfitShrinks)
{
    const auto p = exp_affine_problem(3, 4, 8);
    SmallNoiseOptions opts;
    opts.seeds = 1;
    opts.zero_noise = true;
    opts.prior_starts = 2;
    const SmallNoiseRun run = small_noise_experiment(p.truth, p.forward, p.noise, p.prior, opts);
    const Vector g_true = p.forward.apply(p.truth.coeffs).values;
    std::vector<double> misfits;
    for (const auto& row : run.rows) {
        for (const auto& start : row.map.starts) {
            if (start.origin == "zero") {
                const double start_misfit = (p.forward.apply(start.initial).values - g_true).norm();
                EXPECT_LE(row.misfit_y, start_misfit);
            }
        }
        misfits.push_back(row.misfit_y);
    }
    EXPECT_TRUE(stats::strictly_decreasing(misfits));
    EXPECT_LT(misfits.back(), 1e-3);
}

TEST(SmallNoiseExperiment, ArgminInvariantUnderRescaling)
{
    const auto p = exp_affine_problem(3, 4, 2);
    SmallNoiseOptions opts;
    opts.seeds = 2;
    opts.n_values = {2, 8, 32};
    opts.prior_starts = 1;
    opts.check_rescaling = true;
    const SmallNoiseRun run = small_noise_experiment(p.truth, p.forward, p.noise, p.prior, opts);
    for (const auto& row : run.rows) {
        EXPECT_LE(row.rescaling_gap, 1e-5) << "n = " << row.n;
    }
}

TEST(SmallNoiseExperiment, RejectsUnsortedGrid)
{
    const auto p = exp_affine_problem(2, 2, 1);
    SmallNoiseOptions opts;
    opts.n_values = {4, 2};
    EXPECT_THROW(small_noise_experiment(p.truth, p.forward, p.noise, p.prior, opts), InvariantError);
    opts.n_values = {2, 2};
    EXPECT_THROW(small_noise_experiment(p.truth, p.forward, p.noise, p.prior, opts), InvariantError);
}

TEST(SmallNoiseExperiment, ExpAffineRateAndTrend)
{
    const auto p = exp_affine_problem(4, 6, 11);
    SmallNoiseOptions opts;
    opts.seeds = 20;
    opts.prior_starts = 2;
    opts.seed = 2024;
    const SmallNoiseRun run = small_noise_experiment(p.truth, p.forward, p.noise, p.prior, opts);
    EXPECT_TRUE(run.strictly_decreasing);
    EXPECT_LT(run.final_ratio, 0.1);
    EXPECT_NEAR(run.slope, -1.0, 0.3);
}

TEST(SmallNoiseExperiment, SquaredMisfitBoundHoldsOnFreshSeeds)
{
    const auto p = exp_affine_problem(3, 4, 5);
    const double truth_cm = cm_norm_sq(p.prior, p.truth.coeffs);
    SmallNoiseOptions opts;
    opts.seeds = 30;
    opts.prior_starts = 1;
    opts.n_values = {2, 4, 8, 16, 32};

    opts.seed = 1;
    const SmallNoiseRun fit = small_noise_experiment(p.truth, p.forward, p.noise, p.prior, opts);
    double k = 0.0;
    for (const auto& s : fit.summary) {
        k = std::max(k, s.n * s.n * s.mean_sq_misfit_gamma - truth_cm);
    }

    opts.seed = 2;
    const SmallNoiseRun fresh = small_noise_experiment(p.truth, p.forward, p.noise, p.prior, opts);
    for (const auto& s : fresh.summary) {
        EXPECT_LE(s.mean_sq_misfit_gamma, (truth_cm + k) / (s.n * s.n) * 1.5) << "n = " << s.n;
    }
}

TEST(LimitFunctional, EqualForwardValuesGiveDimensionPlusLogDet)
{
    // The second coordinate does not reach the data.
    Matrix a(2, 2);
    a << 1.0, 0.0, 0.5, 0.0;
    const auto map = ForwardMap::linear(a);
    const auto noise = MixedGaussianNoise::scalar(2, 0.1, 0.2);
    const StateVector truth{0.7, 1.0};
    const StateVector u{0.7, -3.0};
    const double logdet = gamma_u(noise, map.apply(truth)).log_det();
    EXPECT_NEAR(limit_functional_J(u, truth, map, noise), 2.0 + logdet, 1e-12);
    EXPECT_NEAR(limit_functional_J(truth, truth, map, noise), 2.0 + logdet, 1e-12);
}

TEST(LimitFunctional, GapEqualsMisfitPlusEigenvalueTerms)
{
    const auto map = ForwardMap::linear(Matrix::Identity(3, 3));
    const auto noise = dense_noise();
    const StateVector truth{1.0, -0.5, 0.25};
    const double at_truth = limit_functional_J(truth, truth, map, noise);
    Rng rng{19};
    for (int t = 0; t < 200; ++t) {
        const StateVector u = sample_prior(GaussianPrior::identity(3), rng);
        const Vector lambda = limit_gap_eigenvalues(u, truth, map, noise);
        const SpdMatrix cov = gamma_u(noise, map.apply(u));
        double terms = 0.0;
        for (Eigen::Index i = 0; i < lambda.size(); ++i) {
            const double term = lambda[i] - std::log(lambda[i]) - 1.0;
            EXPECT_GE(term, 0.0);
            terms += term;
        }
        const double misfit = cov.quad_form(truth.coeffs - u.coeffs);
        const double gap = limit_functional_J(u, truth, map, noise) - at_truth;
        EXPECT_NEAR(gap, misfit + terms, 1e-10 * std::max(1.0, gap));
        EXPECT_GE(gap, 0.0);
    }
}

TEST(LimitFunctional, ScalarHandFormula)
{
    // gamma(u) = 1 + g^2: g_true = 1 gives 2, g = sqrt(3) gives 4, so t = 1/2.
    const auto map = ForwardMap::linear(Matrix::Identity(1, 1));
    const auto noise = MixedGaussianNoise::scalar(1, 1.0, 1.0);
    const StateVector truth{1.0};
    const StateVector u{std::sqrt(3.0)};
    const double t = 0.5;
    const double misfit = (1.0 - std::sqrt(3.0)) * (1.0 - std::sqrt(3.0)) / 4.0;
    const double gap = limit_functional_J(u, truth, map, noise) - limit_functional_J(truth, truth, map, noise);
    EXPECT_NEAR(gap, misfit + t - std::log(t) - 1.0, 1e-12);
    EXPECT_NEAR(limit_gap_eigenvalues(u, truth, map, noise)[0], t, 1e-12);
}

TEST(LimitFunctional, TruthMinimizesOverRandomProbes)
{
    const auto p = exp_affine_problem(3, 4, 27);
    const double at_truth = limit_functional_J(p.truth.coeffs, p.truth.coeffs, p.forward, p.noise);
    Rng rng{3};
    for (int t = 0; t < 1000; ++t) {
        const StateVector u = sample_prior(p.prior, rng);
        EXPECT_LE(at_truth, limit_functional_J(u, p.truth.coeffs, p.forward, p.noise));
    }
}

TEST(LargeData, JnMatchesDirectSum)
{
    const auto map = ForwardMap::linear(Matrix::Identity(3, 3));
    const auto noise = dense_noise();
    const auto prior = GaussianPrior::matern(3, 1.0, 1.0);
    const auto la = detail::pd_factor(noise.gamma_a(), "a");
    const auto lm = detail::pd_factor(noise.gamma_m(), "m");
    Rng rng{4};
    const Vector g_true{{1.0, 2.0, -1.0}};
    std::vector<DataVector> ys;
    for (int k = 0; k < 50; ++k) {
        ys.push_back(gen_observation(g_true, la, lm, rng));
    }
    const StateVector u{0.9, 1.8, -0.7};
    const SpdMatrix cov = gamma_u(noise, map.apply(u));
    double direct = cm_norm_sq(prior, u) / 50.0 + cov.log_det();
    for (const auto& y : ys) {
        direct += cov.quad_form(u.coeffs - y.values) / 50.0;
    }
    const double jn = large_data_jn(u, prior, map, noise, DataSummary::of(ys));
    EXPECT_NEAR(jn, direct, 1e-10 * std::abs(direct));
    const ObjectiveSpec spec = large_data_objective(map, noise, DataSummary::of(ys), prior);
    EXPECT_NEAR(objective(spec, u), jn, 1e-10 * std::abs(direct));
}

TEST(LargeData, ProbeDifferencesShrinkAtRootNRate)
{
    const auto p = exp_affine_problem(3, 4, 31);
    LargeDataOptions opts;
    opts.seed = 5;
    opts.run_map = false;
    Rng rng{8};
    for (int k = 0; k < 5; ++k) {
        opts.probes.push_back(sample_prior(p.prior, rng));
    }
    const LargeDataRun run = large_data_experiment(p.truth, p.forward, p.noise, p.prior, opts);
    ASSERT_EQ(run.probe_slopes.size(), 5u);
    for (double slope : run.probe_slopes) {
        EXPECT_NEAR(slope, -0.5, 0.2);
    }
    for (double limit : run.limit_at_probes) {
        EXPECT_LE(run.limit_at_truth, limit);
    }
    EXPECT_EQ(run.probe_rows.size(), 3u * 10u * 5u);
}

TEST(LargeData, DroppingLogDetBiasesTheEstimator)
{
    // 1-D, G(u) = u. Limit without log det: (g_true - g)^2 / gamma(g) + gamma_true / gamma(g).
    const double va = 0.04;
    const double vm = 0.25;
    const double g_true = 1.0;
    const auto map = ForwardMap::linear(Matrix::Identity(1, 1));
    const auto noise = MixedGaussianNoise::scalar(1, va, vm);
    const auto prior = GaussianPrior{Vector::Constant(1, 100.0)};

    double oracle = g_true;
    double best = std::numeric_limits<double>::infinity();
    for (double g = 0.0; g <= 5.0; g += 1e-5) {
        const double gam = va + vm * g * g;
        const double f = ((g_true - g) * (g_true - g) + va + vm * g_true * g_true) / gam;
        if (f < best) {
            best = f;
            oracle = g;
        }
    }
    const double oracle_gap = std::abs(oracle - g_true);
    ASSERT_GT(oracle_gap, 0.1);

    LargeDataOptions opts;
    opts.n_values = {10000};
    opts.seeds = 1;
    opts.seed = 9;
    opts.prior_starts = 4;
    const LargeDataRun run = large_data_experiment(TruthSpec{StateVector{g_true}, true}, map, noise, prior, opts);
    double full = 0.0;
    double dropped = 0.0;
    for (const auto& row : run.map_rows) {
        EXPECT_TRUE(row.converged) << row.variant;
        (row.variant == "full" ? full : dropped) = row.misfit_y;
    }
    const double tol = 1e-6;
    EXPECT_GT(dropped - full, 5.0 * tol);
    EXPECT_NEAR(dropped, oracle_gap, 0.05);
    EXPECT_LT(full, 0.05);
}

TEST(LargeData, RejectsBadGrid)
{
    const auto p = exp_affine_problem(2, 2, 1);
    LargeDataOptions opts;
    opts.n_values = {};
    EXPECT_THROW(large_data_experiment(p.truth, p.forward, p.noise, p.prior, opts), InvariantError);
    opts.n_values = {0, 10};
    EXPECT_THROW(large_data_experiment(p.truth, p.forward, p.noise, p.prior, opts), InvariantError);
}
