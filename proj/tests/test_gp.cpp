#include "jtwpa/gp.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace jtwpa;

namespace {

Eigen::MatrixXd column(std::initializer_list<double> v) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double e : v) x(i++, 0) = e;
    return x;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double e : v) y(i++) = e;
    return y;
}

GpFitOptions fixed(double signal, double length, double noise) {
    GpFitOptions o;
    o.bounds.signal_min = o.bounds.signal_max = signal;
    o.bounds.length_min = o.bounds.length_max = length;
    o.bounds.noise_min = o.bounds.noise_max = noise;
    o.starts = 1;
    return o;
}

} // namespace

TEST(Gp, InterpolatesNoiseFreeData) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd x(12, 2);
    Eigen::VectorXd y(12);
    for (int i = 0; i < 12; ++i) {
        x(i, 0) = u(rng);
        x(i, 1) = u(rng);
        y(i) = std::sin(3 * x(i, 0)) + x(i, 1) * x(i, 1);
    }
    const auto m = fit_gp(x, y);
    for (int i = 0; i < 12; ++i) {
        const auto p = posterior(m, x.row(i));
        EXPECT_NEAR(p.mean, y(i), 1e-6);
        EXPECT_LT(p.variance, 1e-6);
    }
}

TEST(Gp, RevertsToPriorFarFromData) {
    const auto m = fit_gp(column({0.0, 0.02, 0.04}), vec({1.0, 2.0, 3.0}), fixed(1.0, 0.01, 1e-10));
    Eigen::RowVectorXd far(1);
    far << 0.9;
    const auto p = posterior(m, far);
    EXPECT_NEAR(p.mean, 2.0, 1e-9);
    EXPECT_NEAR(p.variance, m.target_scale * m.target_scale, 1e-9);
}

TEST(Gp, MatchesDenseSolveOracle) {
    const double s2 = 1.3, l = 0.4, n2 = 1e-4;
    const Eigen::MatrixXd x = column({0.1, 0.5, 0.8});
    const Eigen::VectorXd y = vec({0.3, -0.2, 1.1});
    const auto m = fit_gp(x, y, fixed(s2, l, n2));

    const double mu = y.mean();
    const double sd = std::sqrt((y.array() - mu).square().mean());
    const Eigen::VectorXd z = (y.array() - mu) / sd;
    auto k = [&](double a, double b) { return s2 * std::exp(-0.5 * (a - b) * (a - b) / (l * l)); };
    Eigen::Matrix3d K;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) K(i, j) = k(x(i, 0), x(j, 0)) + (i == j ? n2 : 0.0);
    const Eigen::Matrix3d inv = K.inverse();
    for (double xs : {0.0, 0.3, 0.65, 1.0}) {
        Eigen::Vector3d ks;
        for (int i = 0; i < 3; ++i) ks(i) = k(x(i, 0), xs);
        const double mean = mu + sd * ks.dot(inv * z);
        const double var = sd * sd * (s2 - ks.dot(inv * ks));
        Eigen::RowVectorXd q(1);
        q << xs;
        const auto p = posterior(m, q);
        EXPECT_NEAR(p.mean, mean, 1e-10);
        EXPECT_NEAR(p.variance, var, 1e-10);
    }
    const double lml = -0.5 * z.dot(inv * z) - 0.5 * std::log(K.determinant()) - 1.5 * std::log(2 * std::numbers::pi);
    EXPECT_NEAR(m.log_marginal_likelihood, lml, 1e-10);
}

TEST(Gp, DuplicateInputsNeedJitterOrNoise) {
    const auto m = fit_gp(column({0.2, 0.2, 0.7}), vec({1.0, 1.0, 0.0}), fixed(1.0, 0.3, 1e-10));
    Eigen::RowVectorXd q(1);
    q << 0.2;
    EXPECT_NEAR(posterior(m, q).mean, 1.0, 1e-4);
    EXPECT_GE(m.jitter, 0.0);
}

TEST(Gp, ConstantTargetsGiveConstantMean) {
    const auto m = fit_gp(column({0.1, 0.4, 0.9}), vec({2.5, 2.5, 2.5}));
    Eigen::RowVectorXd q(1);
    for (double xs : {0.0, 0.25, 0.6, 1.0}) {
        q << xs;
        const auto p = posterior(m, q);
        EXPECT_NEAR(p.mean, 2.5, 1e-12);
        EXPECT_GE(p.variance, 0.0);
    }
}

TEST(Gp, RecoversLengthScaleOrdering) {
    // f varies fast along x0 and slowly along x1.
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd x(40, 2);
    Eigen::VectorXd y(40);
    for (int i = 0; i < 40; ++i) {
        x(i, 0) = u(rng);
        x(i, 1) = u(rng);
        y(i) = std::sin(8 * x(i, 0)) + 0.3 * x(i, 1);
    }
    const auto m = fit_gp(x, y);
    EXPECT_LT(m.hyper.length_scales(0), m.hyper.length_scales(1));
}

TEST(Gp, BestStartWins) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd x(15, 3);
    Eigen::VectorXd y(15);
    for (int i = 0; i < 15; ++i) {
        for (int d = 0; d < 3; ++d) x(i, d) = u(rng);
        y(i) = (x.row(i).array() - 0.4).square().sum();
    }
    const auto m = fit_gp(x, y);
    ASSERT_EQ(m.start_likelihoods.size(), 8u);
    for (double v : m.start_likelihoods) EXPECT_GE(m.log_marginal_likelihood, v);
    const auto b = GpBounds{};
    for (Eigen::Index d = 0; d < 3; ++d) {
        EXPECT_GE(m.hyper.length_scales(d), b.length_min * (1 - 1e-12));
        EXPECT_LE(m.hyper.length_scales(d), b.length_max * (1 + 1e-12));
    }
    EXPECT_GE(m.hyper.noise_variance, b.noise_min * (1 - 1e-12));
}

TEST(Gp, DeterministicForSeed) {
    Eigen::MatrixXd x(6, 2);
    x << 0.1, 0.2, 0.5, 0.9, 0.3, 0.3, 0.8, 0.1, 0.6, 0.6, 0.0, 1.0;
    const Eigen::VectorXd y = vec({1, 3, 2, 0.5, 2.2, 4});
    GpFitOptions o;
    o.seed = 42;
    const auto a = fit_gp(x, y, o), b = fit_gp(x, y, o);
    EXPECT_EQ(a.log_marginal_likelihood, b.log_marginal_likelihood);
    EXPECT_EQ(a.hyper.length_scales, b.hyper.length_scales);
}

TEST(Gp, RejectsBadInput) {
    EXPECT_THROW(fit_gp(column({0.5}), vec({1.0})), std::invalid_argument);
    EXPECT_THROW(fit_gp(column({0.1, 0.5}), vec({1.0})), std::invalid_argument);
    EXPECT_THROW(fit_gp(column({0.1, 0.5}), vec({1.0, NAN})), std::invalid_argument);
}

TEST(ExpectedImprovement, ClosedForms) {
    EXPECT_EQ(expected_improvement(1.0, 0.0, 0.5), 0.0);
    EXPECT_EQ(expected_improvement(0.0, 0.0, 1.0), 1.0);
    EXPECT_NEAR(expected_improvement(0.0, 1.0, 0.0), 1.0 / std::sqrt(2 * std::numbers::pi), 1e-15);
    EXPECT_NEAR(expected_improvement(0.0, 4.0, 0.0), 2.0 / std::sqrt(2 * std::numbers::pi), 1e-15);
    // gap 1, sigma 1: Phi(1) + phi(1)
    EXPECT_NEAR(expected_improvement(0.0, 1.0, 1.0), 0.8413447460685429 + 0.24197072451914337, 1e-14);
    EXPECT_GE(expected_improvement(10.0, 1e-4, 0.0), 0.0);
}

TEST(ExpectedImprovement, VanishesAtObservedMinimum) {
    const auto m = fit_gp(column({0.1, 0.5, 0.9}), vec({2.0, 1.0, 3.0}), fixed(1.0, 0.2, 1e-10));
    Eigen::RowVectorXd at(1), away(1);
    at << 0.5;
    away << 0.35;
    EXPECT_LT(expected_improvement(m, at, 1.0), 1e-4);
    EXPECT_GT(expected_improvement(m, away, 1.0), expected_improvement(m, at, 1.0));
}

TEST(Gp, InconsistentDuplicatesRaiseNoise) {
    const auto m = fit_gp(column({0.4, 0.4}), vec({0.0, 1.0}));
    EXPECT_GT(m.hyper.noise_variance, 0.1);
    Eigen::RowVectorXd q(1);
    q << 0.4;
    EXPECT_NEAR(posterior(m, q).mean, 0.5, 0.1);
}

TEST(Gp, RecoversLengthScalesOfKnownProcess) {
    GpHyperparameters truth;
    truth.signal_variance = 1.0;
    truth.length_scales = Eigen::Vector2d(0.15, 0.5);
    truth.noise_variance = 1e-8;
    int ok = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> n01(0.0, 1.0);
        Eigen::MatrixXd x(50, 2);
        for (Eigen::Index i = 0; i < 50; ++i) x.row(i) << u(rng), u(rng);
        Eigen::MatrixXd k(50, 50);
        for (Eigen::Index i = 0; i < 50; ++i)
            for (Eigen::Index j = 0; j < 50; ++j) {
                const double r2 = std::pow((x(i, 0) - x(j, 0)) / 0.15, 2) + std::pow((x(i, 1) - x(j, 1)) / 0.5, 2);
                k(i, j) = std::exp(-0.5 * r2) + (i == j ? 1e-8 : 0.0);
            }
        Eigen::VectorXd z(50);
        for (Eigen::Index i = 0; i < 50; ++i) z(i) = n01(rng);
        const Eigen::VectorXd y = Eigen::LLT<Eigen::MatrixXd>(k).matrixL() * z;
        const auto m = fit_gp(x, y);
        const Eigen::ArrayXd ratio = m.hyper.length_scales.array() / truth.length_scales.array();
        if ((ratio > 0.5).all() && (ratio < 2.0).all()) ++ok;
    }
    EXPECT_GE(ok, 4);
}
