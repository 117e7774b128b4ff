#include <gtest/gtest.h>

#include <cmath>

#include "../support/error_probe.hpp"
#include "oodlens/epistemic_laplace.hpp"

using namespace oodlens;

namespace {

std::pair<Matrix, std::vector<int>> circle_data(std::uint64_t seed, Eigen::Index n, double radius, double stddev) {
    Rng rng(seed, 0);
    Matrix x(n, 2);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        y[i] = static_cast<int>(i % 3);
        const double angle = 2.0 * std::numbers::pi * y[i] / 3.0;
        x(i, 0) = radius * std::cos(angle) + stddev * rng.normal();
        x(i, 1) = radius * std::sin(angle) + stddev * rng.normal();
    }
    return {x, y};
}

Matrix repeat_rows(const Matrix& x, int m) {
    Matrix out(x.rows() * m, x.cols());
    for (int r = 0; r < m; ++r) out.middleRows(r * x.rows(), x.rows()) = x;
    return out;
}

}  // namespace

TEST(EpistemicLaplace, NoDataGivesPrior) {
    const Matrix x(0, 2);
    const auto map = fit_map(x, {}, 3, 2.0);
    EXPECT_EQ(map.theta, Vector::Zero(9));
    const auto post = laplace_fit(map, x, 2.0);
    EXPECT_TRUE(post.covariance.isApprox(Matrix::Identity(9, 9) * 0.5, 1e-15));
}

TEST(EpistemicLaplace, StrongPriorShrinksWeights) {
    const auto [x, y] = circle_data(1, 90, 2.0, 0.5);
    const auto weak = fit_map(x, y, 3, 1e-2);
    const auto strong = fit_map(x, y, 3, 1e6);
    EXPECT_LT(strong.theta.norm(), 1e-3);
    EXPECT_GT(weak.theta.norm(), 1.0);
    EXPECT_LE(weak.gradient_norm, 1e-8);
}

TEST(EpistemicLaplace, MapSeparatesThreeClasses) {
    const auto [x, y] = circle_data(2, 600, 3.0, 0.6);
    const auto map = fit_map(x, y, 3, 1.0);
    const Matrix w = detail::weight_matrix(map.theta, 3, 3);
    const Matrix logits = detail::with_bias(x) * w.transpose();
    int correct = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index arg;
        logits.row(i).maxCoeff(&arg);
        correct += arg == y[i];
    }
    EXPECT_GE(correct / 600.0, 0.95);
}

TEST(EpistemicLaplace, DuplicationContractsPosterior) {
    const auto [x, y] = circle_data(3, 60, 2.0, 1.0);
    double previous = std::numeric_limits<double>::infinity();
    for (int m : {1, 2, 4}) {
        const Matrix xm = repeat_rows(x, m);
        std::vector<int> ym;
        for (int r = 0; r < m; ++r) ym.insert(ym.end(), y.begin(), y.end());
        const auto post = laplace_fit(fit_map(xm, ym, 3, 1.0), xm, 1.0);
        EXPECT_LT(post.covariance.trace(), previous);
        previous = post.covariance.trace();
    }
}

TEST(EpistemicLaplace, DecompositionIdentity) {
    const auto [x, y] = circle_data(4, 90, 2.0, 1.0);
    const auto post = laplace_fit(fit_map(x, y, 3, 1.0), x, 1.0);
    Rng rng(5, 0);
    Matrix probe(20, 2);
    for (Eigen::Index i = 0; i < 20; ++i) probe.row(i) << 4.0 * rng.normal(), 4.0 * rng.normal();
    const auto pred = predictive(post, probe, 500, 9);
    for (const auto& u : pred.uncertainty) {
        EXPECT_NEAR(u.predictive, u.aleatoric + u.epistemic, 1e-12);
        EXPECT_NEAR(u.epistemic, u.epistemic_kl, 1e-10);
        EXPECT_GE(u.epistemic, -3.0 * u.mc_std_err - 1e-12);
        EXPECT_LE(u.predictive, std::log(3.0) + 1e-12);
        EXPECT_EQ(u.mc_samples, 500u);
    }
    for (Eigen::Index i = 0; i < 20; ++i) EXPECT_NEAR(pred.class_probs.row(i).sum(), 1.0, 1e-12);
}

TEST(EpistemicLaplace, PredictiveIsSeeded) {
    const auto [x, y] = circle_data(6, 60, 2.0, 1.0);
    const auto post = laplace_fit(fit_map(x, y, 3, 1.0), x, 1.0);
    const Matrix probe = x.topRows(5);
    EXPECT_EQ(predictive(post, probe, 200, 1).class_probs, predictive(post, probe, 200, 1).class_probs);
    EXPECT_NE(predictive(post, probe, 200, 1).class_probs, predictive(post, probe, 200, 2).class_probs);
}

TEST(EpistemicLaplace, CollapsedPosteriorHasNoEpistemic) {
    const auto [x, y] = circle_data(7, 60, 2.0, 1.0);
    const auto map = fit_map(x, y, 3, 1.0);
    auto post = laplace_fit(map, x, 1.0);
    post.covariance_cholesky.setZero();
    const auto pred = predictive(post, x.topRows(10), 100, 0);
    for (const auto& u : pred.uncertainty) {
        EXPECT_NEAR(u.epistemic, 0.0, 1e-14);
        EXPECT_NEAR(u.epistemic_kl, 0.0, 1e-14);
    }
}

TEST(EpistemicLaplace, SymmetricPointIsMaximallyUncertain) {
    // Two mirror-image classes: the MAP is odd-symmetric, so at the origin
    // every draw has a mirror draw and the predictive is uniform.
    Matrix x(4, 1);
    x << -2, -1, 1, 2;
    const std::vector<int> y{0, 0, 1, 1};
    const auto post = laplace_fit(fit_map(x, y, 2, 1.0), x, 1.0);
    const auto pred = predictive(post, Matrix::Zero(1, 1), 20000, 3);
    EXPECT_NEAR(pred.uncertainty[0].predictive, std::log(2.0), 1e-3);
}

TEST(EpistemicLaplace, Validation) {
    const auto [x, y] = circle_data(8, 30, 2.0, 1.0);
    EXPECT_EQ(oracle::code_of([&] { fit_map(x, y, 3, 0.0); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(oracle::code_of([&] { fit_map(x, y, 1, 1.0); }), ErrorCode::SingleClass);
    EXPECT_EQ(oracle::code_of([&] { fit_map(x, y, 2, 1.0); }), ErrorCode::InvalidArgument);
    const auto post = laplace_fit(fit_map(x, y, 3, 1.0), x, 1.0);
    EXPECT_EQ(oracle::code_of([&] { predictive(post, x, 50, 0); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(oracle::code_of([&] { predictive(post, Matrix::Zero(2, 3), 100, 0); }), ErrorCode::DimensionMismatch);
    ContractionConfig c;
    c.n_grid = {50, 40};
    EXPECT_EQ(oracle::code_of([&] { contraction_experiment(c); }), ErrorCode::InvalidArgument);
}

TEST(EpistemicLaplace, MspGridShape) {
    const auto [x, y] = circle_data(9, 60, 2.0, 1.0);
    const auto post = laplace_fit(fit_map(x, y, 3, 1.0), x, 1.0);
    const auto grid = msp_grid(post, x, 5, 4.0, 100, 0);
    ASSERT_EQ(grid.size(), 25u);
    EXPECT_EQ(grid.front().u, -4.0);
    EXPECT_EQ(grid.back().v, 4.0);
    for (const auto& g : grid) {
        EXPECT_GE(g.msp, 1.0 / 3.0 - 1e-12);
        EXPECT_LE(g.msp, 1.0);
    }
}
