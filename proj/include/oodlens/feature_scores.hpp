#pragma once

// Feature-space scores: Mahalanobis, Relative Mahalanobis, ViM, and the
// Hybrid-Add combination of a feature score with a logit score.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "oodlens/error.hpp"
#include "oodlens/linalg.hpp"
#include "oodlens/logit_scores.hpp"
#include "oodlens/tensor_io.hpp"
#include "oodlens/types.hpp"

namespace oodlens {

inline constexpr double kDefaultShrinkage = 1e-3;

// Class-conditional Gaussians sharing one pooled covariance, plus a single
// background Gaussian over all training features.
struct GaussianClassModel {
    Matrix class_means;   // K x D
    Matrix covariance;    // pooled within-class, after shrinkage
    Matrix precision;
    Matrix precision_cholesky;
    double shrinkage = 0.0;
    Vector global_mean;
    Matrix global_covariance;
    Matrix global_precision;
    Matrix global_precision_cholesky;

    Eigen::Index num_classes() const { return class_means.rows(); }
    Eigen::Index dim() const { return class_means.cols(); }
};

// Means accumulate rows in index order; the scatter matrix is a single
// C' C product of the class-centred rows, so repeated fits are bit-identical.
inline GaussianClassModel fit_gaussian_class_model(const Matrix& features, const std::vector<int>& labels,
                                                   double shrinkage = kDefaultShrinkage) {
    require(static_cast<Eigen::Index>(labels.size()) == features.rows(), ErrorCode::ShapeMismatch,
            "label count differs from feature rows");
    require(features.rows() > 0, ErrorCode::EmptyClass, "no training rows");
    require(shrinkage >= 0.0 && shrinkage <= 1.0, ErrorCode::InvalidArgument, "shrinkage must lie in [0, 1]");
    const int k = *std::max_element(labels.begin(), labels.end()) + 1;
    const Eigen::Index d = features.cols();
    const Eigen::Index n = features.rows();

    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    Matrix sums = Matrix::Zero(k, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[i];
        require(y >= 0, ErrorCode::InvalidArgument, "negative label");
        sums.row(y) += features.row(i);
        ++counts[y];
    }
    for (int c = 0; c < k; ++c)
        require(counts[c] >= 2, ErrorCode::EmptyClass,
                "class " + std::to_string(c) + " has " + std::to_string(counts[c]) + " samples, need >= 2");

    GaussianClassModel m;
    m.shrinkage = shrinkage;
    m.class_means = sums;
    for (int c = 0; c < k; ++c) m.class_means.row(c) /= static_cast<double>(counts[c]);

    Matrix centered(n, d);
    for (Eigen::Index i = 0; i < n; ++i) centered.row(i) = features.row(i) - m.class_means.row(labels[i]);
    Matrix pooled = (centered.transpose() * centered) / static_cast<double>(n - k);
    pooled = 0.5 * (pooled + pooled.transpose());
    m.covariance = shrink_covariance(pooled, shrinkage);
    auto inv = spd_inverse(m.covariance, "pooled covariance");
    m.precision = std::move(inv.inverse);
    m.precision_cholesky = std::move(inv.inverse_cholesky);

    m.global_mean = column_mean(features);
    m.global_covariance = shrink_covariance(row_covariance(features), shrinkage);
    auto ginv = spd_inverse(m.global_covariance, "global covariance");
    m.global_precision = std::move(ginv.inverse);
    m.global_precision_cholesky = std::move(ginv.inverse_cholesky);
    return m;
}

inline GaussianClassModel fit_gaussian_class_model(const DatasetBundle& train, double shrinkage = kDefaultShrinkage) {
    require(train.labels.has_value(), ErrorCode::InvalidArgument, "training bundle has no labels");
    return fit_gaussian_class_model(train.features, *train.labels, shrinkage);
}

namespace detail {

// Squared distances of every row of x to `mean` under precision L L'.
// The difference is formed before the product so x == mean gives exactly 0.
inline Vector quadratic_forms(const Matrix& x, const Eigen::RowVectorXd& mean, const Matrix& precision_cholesky) {
    const Matrix whitened = (x.rowwise() - mean) * precision_cholesky;
    return whitened.rowwise().squaredNorm();
}

inline void check_dim(const GaussianClassModel& m, const Matrix& x) {
    require(x.cols() == m.dim(), ErrorCode::DimensionMismatch,
            "feature dim " + std::to_string(x.cols()) + " != model dim " + std::to_string(m.dim()));
}

inline Matrix class_distances(const GaussianClassModel& m, const Matrix& x) {
    Matrix dist(x.rows(), m.num_classes());
    for (Eigen::Index c = 0; c < m.num_classes(); ++c)
        dist.col(c) = quadratic_forms(x, m.class_means.row(c), m.precision_cholesky);
    return dist;
}

}  // namespace detail

// s(x) = -min_c (x - mu_c)' Sigma^-1 (x - mu_c); no square root.
inline ScoreVector maha_score(const GaussianClassModel& m, const Matrix& x) {
    detail::check_dim(m, x);
    const Matrix dist = detail::class_distances(m, x);
    ScoreVector out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = -dist.row(i).minCoeff();
    return out;
}

// s(x) = -min_c [d_c(x) - d_0(x)], d_0 under the background Gaussian.
inline ScoreVector rel_maha_score(const GaussianClassModel& m, const Matrix& x) {
    detail::check_dim(m, x);
    const Matrix dist = detail::class_distances(m, x);
    const Vector background = detail::quadratic_forms(x, m.global_mean.transpose(), m.global_precision_cholesky);
    ScoreVector out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = -(dist.row(i).array() - background(i)).minCoeff();
    return out;
}

struct VimModel {
    Matrix principal_basis;  // D x m
    double residual_scale = 0.0;
    Eigen::Index subspace_dim = 0;
    Vector center;
};

inline Vector vim_residuals(const VimModel& vim, const Matrix& x) {
    require(x.cols() == vim.center.size(), ErrorCode::DimensionMismatch, "feature dim differs from ViM model");
    const Matrix centered = x.rowwise() - vim.center.transpose();
    const Matrix residual = centered - (centered * vim.principal_basis) * vim.principal_basis.transpose();
    return residual.rowwise().norm();
}

// center = mean feature; basis = top-m eigenvectors of the feature covariance;
// alpha = mean(max logit) / mean(residual norm) over the training rows.
inline VimModel fit_vim(const Matrix& features, const Matrix& logits, Eigen::Index m) {
    require(features.rows() >= 2, ErrorCode::TooFewSamples, "ViM fit needs at least 2 rows");
    require(logits.rows() == features.rows(), ErrorCode::ShapeMismatch, "logits row count differs from features");
    require(m >= 1 && m < features.cols(), ErrorCode::InvalidArgument, "ViM subspace dim must satisfy 1 <= m < D");

    const Matrix cov = row_covariance(features);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    const Vector evals = eig.eigenvalues();
    const double tol = std::max(evals.cwiseAbs().maxCoeff(), 1.0) * 1e-12;
    const auto positive = (evals.array() > tol).count();
    require(positive >= m, ErrorCode::RankDeficient,
            "only " + std::to_string(positive) + " positive eigenvalues for subspace dim " + std::to_string(m));

    VimModel vim;
    vim.subspace_dim = m;
    vim.center = column_mean(features);
    vim.principal_basis = eig.eigenvectors().rightCols(m);
    const Vector residuals = vim_residuals(vim, features);
    const double mean_residual = residuals.mean();
    const double scale = std::max(features.cwiseAbs().maxCoeff(), 1.0);
    require(mean_residual > 1e-10 * scale, ErrorCode::DegenerateResidual,
            "training features lie in the principal subspace; residual scale undefined");
    const ScoreVector ml = max_logit(logits);
    double mean_max_logit = 0.0;
    for (double v : ml) mean_max_logit += v;
    mean_max_logit /= static_cast<double>(ml.size());
    vim.residual_scale = mean_max_logit / mean_residual;
    require(vim.residual_scale > 0.0, ErrorCode::DegenerateResidual,
            "mean training max-logit is not positive; residual scale would be <= 0");
    return vim;
}

inline VimModel fit_vim(const DatasetBundle& train, Eigen::Index m) {
    require(train.logits.has_value(), ErrorCode::InvalidArgument, "ViM fit needs training logits");
    return fit_vim(train.features, *train.logits, m);
}

// Negative softmax mass on the virtual logit alpha * r(x) appended to f(x).
inline ScoreVector vim_score(const VimModel& vim, const Matrix& features, const Matrix& logits) {
    require(logits.rows() == features.rows(), ErrorCode::DimensionMismatch, "logits row count differs from features");
    const Vector r = vim_residuals(vim, features);
    ScoreVector out(static_cast<std::size_t>(features.rows()));
    Vector row(logits.cols() + 1);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        row.head(logits.cols()) = logits.row(i).transpose();
        row(logits.cols()) = vim.residual_scale * r(i);
        out[i] = -std::exp(row(logits.cols()) - logsumexp(row.array()));
    }
    return out;
}

struct HybridNormalizer {
    double maha_mean = 0.0;
    double maha_std = 1.0;
    double msp_mean = 0.0;
    double msp_std = 1.0;
};

namespace detail {

inline std::pair<double, double> mean_and_std(const ScoreVector& v, const char* what) {
    require(v.size() >= 2, ErrorCode::TooFewSamples, std::string(what) + " reference split needs >= 2 scores");
    double mean = 0.0;
    for (double s : v) mean += s;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double s : v) ss += (s - mean) * (s - mean);
    const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    require(sd > 0.0, ErrorCode::ZeroVariance, std::string(what) + " score is constant on the reference split");
    return {mean, sd};
}

}  // namespace detail

// z-score statistics over an ID reference split held out from evaluation.
inline HybridNormalizer fit_hybrid_normalizer(const ScoreVector& maha_ref, const ScoreVector& msp_ref) {
    HybridNormalizer norm;
    std::tie(norm.maha_mean, norm.maha_std) = detail::mean_and_std(maha_ref, "maha");
    std::tie(norm.msp_mean, norm.msp_std) = detail::mean_and_std(msp_ref, "msp");
    return norm;
}

inline ScoreVector hybrid_add(const ScoreVector& maha, const ScoreVector& msp_scores, const HybridNormalizer& norm) {
    require(maha.size() == msp_scores.size(), ErrorCode::ShapeMismatch, "constituent score lengths differ");
    require(norm.maha_std > 0.0 && norm.msp_std > 0.0, ErrorCode::ZeroVariance, "normalizer has zero variance");
    ScoreVector out(maha.size());
    for (std::size_t i = 0; i < maha.size(); ++i)
        out[i] = (maha[i] - norm.maha_mean) / norm.maha_std + (msp_scores[i] - norm.msp_mean) / norm.msp_std;
    return out;
}

}  // namespace oodlens
