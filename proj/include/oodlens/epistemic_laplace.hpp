#pragma once

// Last-layer Bayesian multinomial logistic regression via a full Laplace
// approximation, Monte Carlo predictive uncertainty, and the posterior
// contraction experiment.
//
// Parameters are theta[c * (D + 1) + j], j = D being the bias column.
// Negative log-posterior: sum_i NLL_i(theta) + (prior_precision / 2) |theta|^2.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "oodlens/detect_metrics.hpp"
#include "oodlens/error.hpp"
#include "oodlens/linalg.hpp"
#include "oodlens/logit_scores.hpp"
#include "oodlens/rng.hpp"
#include "oodlens/types.hpp"

namespace oodlens {

struct MapFit {
    Vector theta;
    Eigen::Index num_classes = 0;
    Eigen::Index dim = 0;
    double gradient_norm = 0.0;
    int iterations = 0;
};

namespace detail {

inline Matrix with_bias(const Matrix& x) {
    Matrix xa(x.rows(), x.cols() + 1);
    xa.leftCols(x.cols()) = x;
    xa.col(x.cols()).setOnes();
    return xa;
}

// K x (D + 1) weight matrix view of theta.
inline Matrix weight_matrix(const Vector& theta, Eigen::Index k, Eigen::Index d1) {
    Matrix w(k, d1);
    for (Eigen::Index c = 0; c < k; ++c) w.row(c) = theta.segment(c * d1, d1).transpose();
    return w;
}

struct Objective {
    double value = 0.0;
    Vector grad;
};

inline Objective neg_log_posterior(const Vector& theta, const Matrix& xa, const std::vector<int>& labels,
                                   Eigen::Index k, double prior_precision, bool with_grad) {
    const Eigen::Index d1 = xa.cols();
    const Matrix z = xa * weight_matrix(theta, k, d1).transpose();  // N x K
    Objective out;
    out.value = 0.5 * prior_precision * theta.squaredNorm();
    Matrix resid(z.rows(), k);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double lse = logsumexp(z.row(i).array());
        out.value += lse - z(i, labels[i]);
        if (with_grad) {
            resid.row(i) = (z.row(i).array() - lse).exp();
            resid(i, labels[i]) -= 1.0;
        }
    }
    if (with_grad) {
        const Matrix g = resid.transpose() * xa;  // K x (D + 1)
        out.grad = prior_precision * theta;
        for (Eigen::Index c = 0; c < k; ++c) out.grad.segment(c * d1, d1) += g.row(c).transpose();
    }
    return out;
}

// Hessian of the summed NLL (prior excluded).
inline Matrix nll_hessian(const Vector& theta, const Matrix& xa, Eigen::Index k) {
    const Eigen::Index d1 = xa.cols();
    const Matrix z = xa * weight_matrix(theta, k, d1).transpose();
    Matrix h = Matrix::Zero(k * d1, k * d1);
    Matrix p(z.rows(), k);
    for (Eigen::Index i = 0; i < z.rows(); ++i) p.row(i) = softmax(z.row(i).transpose()).transpose();
    for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = a; b < k; ++b) {
            Vector w = -(p.col(a).array() * p.col(b).array()).matrix();
            if (a == b) w += p.col(a);
            const Matrix block = xa.transpose() * w.asDiagonal() * xa;
            h.block(a * d1, b * d1, d1, d1) = block;
            if (a != b) h.block(b * d1, a * d1, d1, d1) = block.transpose();
        }
    }
    return h;
}

}  // namespace detail

// Newton iterations with backtracking to gradient norm <= tolerance.
inline MapFit fit_map(const Matrix& features, const std::vector<int>& labels, Eigen::Index num_classes,
                      double prior_precision, double tolerance = 1e-8, int max_iterations = 100) {
    require(prior_precision > 0.0, ErrorCode::InvalidArgument, "prior precision must be > 0");
    require(num_classes >= 2, ErrorCode::SingleClass, "need at least 2 classes");
    require(static_cast<Eigen::Index>(labels.size()) == features.rows(), ErrorCode::ShapeMismatch,
            "label count differs from features");
    for (int y : labels) require(y >= 0 && y < num_classes, ErrorCode::InvalidArgument, "label out of range");
    const Matrix xa = detail::with_bias(features);
    const Eigen::Index p = num_classes * xa.cols();

    MapFit fit;
    fit.num_classes = num_classes;
    fit.dim = features.cols();
    fit.theta = Vector::Zero(p);
    auto obj = detail::neg_log_posterior(fit.theta, xa, labels, num_classes, prior_precision, true);
    for (int it = 0;; ++it) {
        fit.gradient_norm = obj.grad.norm();
        fit.iterations = it;
        if (fit.gradient_norm <= tolerance) break;
        if (it == max_iterations) {
            char msg[96];
            std::snprintf(msg, sizeof msg, "MAP fit hit the iteration cap with gradient norm %.3e", fit.gradient_norm);
            fail(ErrorCode::NonConvergence, msg);
        }
        Matrix h = detail::nll_hessian(fit.theta, xa, num_classes);
        h.diagonal().array() += prior_precision;
        const Vector step = h.llt().solve(obj.grad);
        const double slope = obj.grad.dot(step);
        Vector candidate = fit.theta - step;
        auto next = detail::neg_log_posterior(candidate, xa, labels, num_classes, prior_precision, true);
        if (slope <= 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(obj.value))) {
            // The objective is flat to rounding here; judge the full step by its gradient.
            if (!(next.grad.norm() < fit.gradient_norm)) {
                char msg[96];
                std::snprintf(msg, sizeof msg, "MAP line search stalled with gradient norm %.3e", fit.gradient_norm);
                fail(ErrorCode::NonConvergence, msg);
            }
        } else {
            double t = 1.0;
            while (next.value > obj.value - 1e-4 * t * slope && t > 1e-10) {
                t *= 0.5;
                candidate = fit.theta - t * step;
                next = detail::neg_log_posterior(candidate, xa, labels, num_classes, prior_precision, true);
            }
            if (next.value > obj.value - 1e-4 * t * slope) {
                char msg[96];
                std::snprintf(msg, sizeof msg, "MAP line search failed with gradient norm %.3e", fit.gradient_norm);
                fail(ErrorCode::NonConvergence, msg);
            }
        }
        fit.theta = std::move(candidate);
        obj = std::move(next);
    }
    return fit;
}

struct LaplacePosterior {
    Vector map_weights;
    Matrix covariance;
    Matrix covariance_cholesky;  // L with covariance = L L'
    double prior_precision = 0.0;
    Eigen::Index n_train = 0;
    Eigen::Index num_classes = 0;
    Eigen::Index dim = 0;
};

// covariance = (Hessian of NLL at the MAP + prior_precision I)^-1.
inline LaplacePosterior laplace_fit(const MapFit& map, const Matrix& features, double prior_precision) {
    require(prior_precision > 0.0, ErrorCode::InvalidArgument, "prior precision must be > 0");
    require(features.cols() == map.dim, ErrorCode::DimensionMismatch, "feature dim differs from MAP fit");
    const Matrix xa = detail::with_bias(features);
    Matrix precision = detail::nll_hessian(map.theta, xa, map.num_classes);
    precision.diagonal().array() += prior_precision;
    precision = 0.5 * (precision + precision.transpose());

    Eigen::SelfAdjointEigenSolver<Matrix> eig(precision, Eigen::EigenvaluesOnly);
    const double min_ev = eig.eigenvalues().minCoeff();
    require(min_ev > 0.0, ErrorCode::HessianNotPD,
            "posterior precision not PD, smallest eigenvalue " + std::to_string(min_ev));
    Eigen::LLT<Matrix> llt(precision);
    require(llt.info() == Eigen::Success, ErrorCode::HessianNotPD, "Cholesky of posterior precision failed");

    LaplacePosterior post;
    post.map_weights = map.theta;
    post.prior_precision = prior_precision;
    post.n_train = features.rows();
    post.num_classes = map.num_classes;
    post.dim = map.dim;
    post.covariance = llt.solve(Matrix::Identity(precision.rows(), precision.rows()));
    post.covariance = 0.5 * (post.covariance + post.covariance.transpose());
    Eigen::LLT<Matrix> cov_llt(post.covariance);
    require(cov_llt.info() == Eigen::Success, ErrorCode::HessianNotPD, "posterior covariance not SPD");
    post.covariance_cholesky = cov_llt.matrixL();
    return post;
}

struct UncertaintyDecomposition {
    double predictive = 0.0;     // H(E_q p)
    double aleatoric = 0.0;      // E_q H(p)
    double epistemic = 0.0;      // predictive - aleatoric, on the same draws
    double epistemic_kl = 0.0;   // E_q KL(p || E_q p), the same quantity by another route
    std::size_t mc_samples = 0;
    double mc_std_err = 0.0;     // standard error of the per-draw KL terms
};

struct PredictiveResult {
    Matrix class_probs;  // N x K posterior predictive
    std::vector<UncertaintyDecomposition> uncertainty;
};

inline double entropy(const Eigen::Ref<const Vector>& p) {
    double h = 0.0;
    for (Eigen::Index c = 0; c < p.size(); ++c)
        if (p(c) > 0.0) h -= p(c) * std::log(p(c));
    return h;
}

// Monte Carlo over `samples` posterior draws shared by every row of x.
inline PredictiveResult predictive(const LaplacePosterior& post, const Matrix& x, std::size_t samples,
                                   std::uint64_t seed) {
    require(samples >= 100, ErrorCode::InvalidArgument, "predictive needs >= 100 posterior samples");
    require(x.cols() == post.dim, ErrorCode::DimensionMismatch, "feature dim differs from posterior");
    const Eigen::Index k = post.num_classes;
    const Eigen::Index d1 = post.dim + 1;
    const Eigen::Index n = x.rows();
    const Matrix xa = detail::with_bias(x);

    Rng rng(seed, 51);
    std::vector<Vector> thetas(samples);
    Vector z(post.map_weights.size());
    for (auto& theta : thetas) {
        for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = rng.normal();
        theta = post.map_weights + post.covariance_cholesky * z;
    }
    auto draw_probs = [&](const Vector& theta) {
        const Matrix logits = xa * detail::weight_matrix(theta, k, d1).transpose();
        Matrix p(n, k);
        for (Eigen::Index i = 0; i < n; ++i) p.row(i) = softmax(logits.row(i).transpose()).transpose();
        return p;
    };

    // Pass 1: mean probabilities and mean entropy. Pass 2: KL to the mean.
    PredictiveResult out;
    out.class_probs = Matrix::Zero(n, k);
    Vector sum_h = Vector::Zero(n);
    for (const auto& theta : thetas) {
        const Matrix p = draw_probs(theta);
        out.class_probs += p;
        for (Eigen::Index i = 0; i < n; ++i) sum_h(i) += entropy(p.row(i).transpose());
    }
    const double s_d = static_cast<double>(samples);
    out.class_probs /= s_d;
    const Matrix log_mean = out.class_probs.array().log().matrix();
    Vector sum_kl = Vector::Zero(n), sum_kl2 = Vector::Zero(n);
    for (const auto& theta : thetas) {
        const Matrix p = draw_probs(theta);
        for (Eigen::Index i = 0; i < n; ++i) {
            double kl = 0.0;
            for (Eigen::Index c = 0; c < k; ++c)
                if (p(i, c) > 0.0) kl += p(i, c) * (std::log(p(i, c)) - log_mean(i, c));
            sum_kl(i) += kl;
            sum_kl2(i) += kl * kl;
        }
    }

    out.uncertainty.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        UncertaintyDecomposition u;
        u.mc_samples = samples;
        u.predictive = entropy(out.class_probs.row(i).transpose());
        u.aleatoric = sum_h(i) / s_d;
        u.epistemic = u.predictive - u.aleatoric;
        u.epistemic_kl = sum_kl(i) / s_d;
        const double var = std::max(0.0, (sum_kl2(i) - s_d * u.epistemic_kl * u.epistemic_kl) / (s_d - 1.0));
        u.mc_std_err = std::sqrt(var / s_d);
        out.uncertainty[i] = u;
    }
    return out;
}

// Three Gaussian classes on a circle in 2-D and a fixed OOD probe blob.
struct ContractionConfig {
    std::vector<Eigen::Index> n_grid{50, 500, 5000};
    double prior_precision = 1.0;
    std::size_t samples = 2000;
    std::uint64_t seed = 0;
    double class_radius = 2.0;
    double class_std = 1.0;
    Eigen::Index n_eval = 300;
    Vector ood_center = (Vector(2) << 6.0, 0.0).finished();
    double ood_std = 0.5;
    bool ood_same_as_id = false;
};

struct ContractionRow {
    Eigen::Index n = 0;
    double mean_epistemic_ood = 0.0;
    double mean_epistemic_id = 0.0;
    double auroc = 0.0;  // ID-ness score = -epistemic
    double covariance_trace = 0.0;
};

namespace detail {

inline void draw_circle_classes(const ContractionConfig& c, Eigen::Index n, Rng& rng, Matrix& x, std::vector<int>& y) {
    x.resize(n, 2);
    y.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 3);
        const double angle = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * label / 3.0;
        x(i, 0) = c.class_radius * std::cos(angle) + c.class_std * rng.normal();
        x(i, 1) = c.class_radius * std::sin(angle) + c.class_std * rng.normal();
        y[i] = label;
    }
}

}  // namespace detail

// Training sets are nested prefixes of one draw, so larger n strictly adds data.
inline std::vector<ContractionRow> contraction_experiment(const ContractionConfig& c) {
    require(!c.n_grid.empty(), ErrorCode::EmptyGrid, "n_grid is empty");
    for (std::size_t i = 1; i < c.n_grid.size(); ++i)
        require(c.n_grid[i] > c.n_grid[i - 1], ErrorCode::InvalidArgument, "n_grid must be ascending");
    Rng rng(c.seed, 61);
    Matrix train_x, eval_x, ood_x;
    std::vector<int> train_y, eval_y, ood_y;
    detail::draw_circle_classes(c, c.n_grid.back(), rng, train_x, train_y);
    detail::draw_circle_classes(c, c.n_eval, rng, eval_x, eval_y);
    if (c.ood_same_as_id) {
        detail::draw_circle_classes(c, c.n_eval, rng, ood_x, ood_y);
    } else {
        ood_x.resize(c.n_eval, 2);
        for (Eigen::Index i = 0; i < c.n_eval; ++i)
            for (Eigen::Index j = 0; j < 2; ++j) ood_x(i, j) = c.ood_center(j) + c.ood_std * rng.normal();
    }

    std::vector<ContractionRow> rows;
    for (const Eigen::Index n : c.n_grid) {
        const Matrix x = train_x.topRows(n);
        const std::vector<int> y(train_y.begin(), train_y.begin() + n);
        const auto map = fit_map(x, y, 3, c.prior_precision);
        const auto post = laplace_fit(map, x, c.prior_precision);
        const auto id_pred = predictive(post, eval_x, c.samples, c.seed);
        const auto ood_pred = predictive(post, ood_x, c.samples, c.seed);
        ContractionRow row;
        row.n = n;
        row.covariance_trace = post.covariance.trace();
        ScoreVector id_scores, ood_scores;
        for (const auto& u : id_pred.uncertainty) {
            id_scores.push_back(-u.epistemic);
            row.mean_epistemic_id += u.epistemic;
        }
        for (const auto& u : ood_pred.uncertainty) {
            ood_scores.push_back(-u.epistemic);
            row.mean_epistemic_ood += u.epistemic;
        }
        row.mean_epistemic_id /= static_cast<double>(id_scores.size());
        row.mean_epistemic_ood /= static_cast<double>(ood_scores.size());
        row.auroc = auroc(id_scores, ood_scores);
        rows.push_back(row);
    }
    return rows;
}

struct MspGridPoint {
    double u = 0.0;
    double v = 0.0;
    double msp = 0.0;
};

// Posterior-predictive MSP over a square grid in the top-2 PCA plane of the
// training features, mapped back to feature space.
inline std::vector<MspGridPoint> msp_grid(const LaplacePosterior& post, const Matrix& train_features,
                                          Eigen::Index resolution, double extent, std::size_t samples,
                                          std::uint64_t seed) {
    require(resolution >= 2, ErrorCode::InvalidArgument, "grid resolution must be >= 2");
    require(train_features.cols() >= 2, ErrorCode::InvalidArgument, "msp grid needs feature dim >= 2");
    const PcaBasis basis = pca(train_features, 2);
    Matrix points(resolution * resolution, train_features.cols());
    std::vector<MspGridPoint> grid;
    for (Eigen::Index a = 0; a < resolution; ++a) {
        for (Eigen::Index b = 0; b < resolution; ++b) {
            const double u = -extent + 2.0 * extent * a / (resolution - 1);
            const double v = -extent + 2.0 * extent * b / (resolution - 1);
            points.row(a * resolution + b) =
                (basis.center + basis.components.col(0) * u + basis.components.col(1) * v).transpose();
            grid.push_back({u, v, 0.0});
        }
    }
    const auto pred = predictive(post, points, samples, seed);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i].msp = pred.class_probs.row(static_cast<Eigen::Index>(i)).maxCoeff();
    return grid;
}

}  // namespace oodlens
