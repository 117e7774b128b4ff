#pragma once

// Oracle diagnostics for feature-based detection.
//
// Three AUROCs bracket what a Mahalanobis detector leaves on the table:
//   maha          Mahalanobis on all features (ID-only information)
//   maha_pca      Mahalanobis on the PCA subspace of ID+OOD that scores best
//   oracle        a linear probe trained on ID vs OOD, scored on held-out rows
// and the error 1 - AUROC(maha) splits telescopically into
//   indistinguishable = 1 - oracle
//   other             = oracle - maha_pca
//   irrelevant        = maha_pca - maha

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <cstdint>
#include <string>
#include <vector>

#include "oodlens/detect_metrics.hpp"
#include "oodlens/error.hpp"
#include "oodlens/feature_scores.hpp"
#include "oodlens/linalg.hpp"
#include "oodlens/parallel.hpp"
#include "oodlens/rng.hpp"
#include "oodlens/tensor_io.hpp"
#include "oodlens/types.hpp"

namespace oodlens {

struct ProbeConfig {
    double l2 = 1e-2;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    int max_iterations = 200;
    double gradient_tolerance = 1e-8;
};

struct OracleProbe {
    Vector weights;
    double bias = 0.0;
    double l2 = 0.0;
    double train_fraction = 0.0;
    double heldout_auroc = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
    std::vector<Eigen::Index> id_train_rows, id_heldout_rows;
    std::vector<Eigen::Index> ood_train_rows, ood_heldout_rows;

    // Positive = ID side of the hyperplane.
    Vector decision(const Matrix& x) const { return (x * weights).array() + bias; }
};

namespace detail {

inline double softplus(double z) {
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> split_rows(Eigen::Index n, double fraction,
                                                                                 Rng& rng) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    auto n_train = static_cast<Eigen::Index>(std::floor(fraction * static_cast<double>(n)));
    n_train = std::clamp<Eigen::Index>(n_train, 1, n - 1);
    std::vector<Eigen::Index> train(idx.begin(), idx.begin() + n_train);
    std::vector<Eigen::Index> heldout(idx.begin() + n_train, idx.end());
    std::sort(train.begin(), train.end());
    std::sort(heldout.begin(), heldout.end());
    return {train, heldout};
}

inline Matrix take_rows(const Matrix& x, const std::vector<Eigen::Index>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    return out;
}

}  // namespace detail

struct LogisticFit {
    Vector weights;
    double bias = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
};

// Minimizes mean logistic loss + (l2 / 2) |w|^2 (bias unpenalized) by damped
// Newton steps with Armijo backtracking. targets are 0/1.
inline LogisticFit fit_logistic(const Matrix& x, const Vector& targets, double l2, int max_iterations,
                                double gradient_tolerance) {
    require(l2 > 0.0, ErrorCode::InvalidArgument, "l2 strength must be positive");
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    Matrix xa(n, d + 1);
    xa.leftCols(d) = x;
    xa.col(d).setOnes();
    Vector theta = Vector::Zero(d + 1);
    Vector penalty = Vector::Constant(d + 1, l2);
    penalty(d) = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);

    auto objective = [&](const Vector& th) {
        const Vector z = xa * th;
        double loss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) loss += detail::softplus(z(i)) - targets(i) * z(i);
        return loss * inv_n + 0.5 * th.head(d).squaredNorm() * l2;
    };

    auto gradient = [&](const Vector& th, Vector* weights) {
        const Vector z = xa * th;
        Vector resid(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double p = detail::sigmoid(z(i));
            resid(i) = p - targets(i);
            if (weights) (*weights)(i) = p * (1.0 - p);
        }
        return Vector(inv_n * (xa.transpose() * resid) + penalty.cwiseProduct(th));
    };

    LogisticFit fit;
    double f = objective(theta);
    Vector w(n);
    Vector grad = gradient(theta, &w);
    for (int it = 0;; ++it) {
        fit.gradient_norm = grad.norm();
        fit.iterations = it;
        if (fit.gradient_norm <= gradient_tolerance) break;
        if (it == max_iterations) {
            char msg[96];
            std::snprintf(msg, sizeof msg, "probe hit the iteration cap with gradient norm %.3e", fit.gradient_norm);
            fail(ErrorCode::NonConvergence, msg);
        }
        Matrix hess = inv_n * (xa.transpose() * w.asDiagonal() * xa);
        hess.diagonal() += penalty;
        const Vector step = hess.ldlt().solve(grad);
        const double slope = grad.dot(step);
        if (slope <= 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f))) {
            // The objective is flat to rounding here; judge the full step by its gradient.
            const Vector candidate = theta - step;
            Vector w_full(n);
            const Vector g_full = gradient(candidate, &w_full);
            if (!(g_full.norm() < fit.gradient_norm)) {
                char msg[96];
                std::snprintf(msg, sizeof msg, "line search stalled with gradient norm %.3e", fit.gradient_norm);
                fail(ErrorCode::NonConvergence, msg);
            }
            theta = candidate;
            f = objective(theta);
            grad = g_full;
            w = w_full;
            continue;
        }
        double t = 1.0;
        Vector candidate = theta - step;
        double f_new = objective(candidate);
        while (f_new > f - 1e-4 * t * slope && t > 1e-10) {
            t *= 0.5;
            candidate = theta - t * step;
            f_new = objective(candidate);
        }
        if (f_new > f - 1e-4 * t * slope) {
            char msg[96];
            std::snprintf(msg, sizeof msg, "line search failed with gradient norm %.3e", fit.gradient_norm);
            fail(ErrorCode::NonConvergence, msg);
        }
        theta = candidate;
        f = f_new;
        grad = gradient(theta, &w);
    }
    fit.weights = theta.head(d);
    fit.bias = theta(d);
    return fit;
}

// Binary linear classifier for ID (positive) vs OOD features, trained on a
// seeded split of each side and scored on the remaining rows only.
inline OracleProbe fit_oracle_probe(const Matrix& id, const Matrix& ood, const ProbeConfig& cfg = {}) {
    require(id.rows() >= 20 && ood.rows() >= 20, ErrorCode::TooFewSamples, "oracle probe needs >= 20 rows per side");
    require(id.cols() == ood.cols(), ErrorCode::DimensionMismatch, "ID and OOD feature dims differ");
    require(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0, ErrorCode::InvalidArgument,
            "train_fraction must lie in (0, 1)");

    OracleProbe probe;
    probe.l2 = cfg.l2;
    probe.train_fraction = cfg.train_fraction;
    Rng id_rng(cfg.seed, 101), ood_rng(cfg.seed, 102);
    std::tie(probe.id_train_rows, probe.id_heldout_rows) = detail::split_rows(id.rows(), cfg.train_fraction, id_rng);
    std::tie(probe.ood_train_rows, probe.ood_heldout_rows) = detail::split_rows(ood.rows(), cfg.train_fraction, ood_rng);

    const Matrix id_tr = detail::take_rows(id, probe.id_train_rows);
    const Matrix ood_tr = detail::take_rows(ood, probe.ood_train_rows);
    Matrix x(id_tr.rows() + ood_tr.rows(), id.cols());
    x << id_tr, ood_tr;
    Vector t(x.rows());
    t.head(id_tr.rows()).setOnes();
    t.tail(ood_tr.rows()).setZero();

    const LogisticFit fit = fit_logistic(x, t, cfg.l2, cfg.max_iterations, cfg.gradient_tolerance);
    probe.weights = fit.weights;
    probe.bias = fit.bias;
    probe.gradient_norm = fit.gradient_norm;
    probe.iterations = fit.iterations;

    const Vector s_id = probe.decision(detail::take_rows(id, probe.id_heldout_rows));
    const Vector s_ood = probe.decision(detail::take_rows(ood, probe.ood_heldout_rows));
    probe.heldout_auroc = auroc(ScoreVector(s_id.begin(), s_id.end()), ScoreVector(s_ood.begin(), s_ood.end()));
    return probe;
}

// AUROC of Mahalanobis fitted on `train` (features + labels), ID eval vs OOD.
inline double maha_auroc(const Matrix& train, const std::vector<int>& labels, const Matrix& id_eval,
                         const Matrix& ood, double shrinkage) {
    const auto model = fit_gaussian_class_model(train, labels, shrinkage);
    return auroc(maha_score(model, id_eval), maha_score(model, ood));
}

struct PcaMahaResult {
    double auroc = 0.0;
    Eigen::Index chosen_k = 0;
    std::vector<Eigen::Index> ks;       // grid actually evaluated
    std::vector<double> aurocs;         // one per k
};

inline const std::vector<Eigen::Index> kDefaultKGrid{32, 64, 128, 256};

// PCA basis from the ID eval rows stacked on the OOD rows, centred by their
// joint mean. For each k the class model is refit on projected training
// features; the best AUROC wins, ties going to the smaller k.
inline PcaMahaResult oracle_pca_maha(const DatasetBundle& id_train, const Matrix& id_eval, const Matrix& ood,
                                     std::vector<Eigen::Index> k_grid = kDefaultKGrid,
                                     double shrinkage = kDefaultShrinkage) {
    require(id_train.labels.has_value(), ErrorCode::InvalidArgument, "training bundle has no labels");
    const Eigen::Index d = id_train.dim();
    require(id_eval.cols() == d && ood.cols() == d, ErrorCode::DimensionMismatch, "feature dims differ");
    std::sort(k_grid.begin(), k_grid.end());
    k_grid.erase(std::unique(k_grid.begin(), k_grid.end()), k_grid.end());
    std::erase_if(k_grid, [d](Eigen::Index k) { return k < 1 || k >= d; });
    require(!k_grid.empty(), ErrorCode::EmptyGrid, "no k in the grid is below the feature dim " + std::to_string(d));

    Matrix joint(id_eval.rows() + ood.rows(), d);
    joint << id_eval, ood;
    const PcaBasis full = pca(joint, k_grid.back());

    PcaMahaResult result;
    result.ks = k_grid;
    result.aurocs.assign(k_grid.size(), 0.0);
    parallel_for(k_grid.size(), [&](std::size_t i) {
        PcaBasis basis{full.center, full.components.leftCols(k_grid[i]), full.eigenvalues.head(k_grid[i])};
        result.aurocs[i] = maha_auroc(project(basis, id_train.features), *id_train.labels, project(basis, id_eval),
                                      project(basis, ood), shrinkage);
    });
    std::size_t best = 0;
    for (std::size_t i = 1; i < k_grid.size(); ++i)
        if (result.aurocs[i] > result.aurocs[best]) best = i;
    result.auroc = result.aurocs[best];
    result.chosen_k = k_grid[best];
    return result;
}

struct ErrorDecomposition {
    double auroc_maha = 0.0;
    double auroc_maha_pca = 0.0;
    double auroc_oracle = 0.0;
    double total_error = 0.0;
    double indistinguishable = 0.0;
    double other = 0.0;
    double irrelevant = 0.0;
    Eigen::Index chosen_k = 0;
    // Components are stored unclamped; these flag the cases worth a look.
    std::vector<std::string> warnings;
};

inline ErrorDecomposition decompose_aurocs(double auroc_maha, double auroc_maha_pca, double auroc_oracle,
                                           Eigen::Index chosen_k) {
    ErrorDecomposition e;
    e.auroc_maha = auroc_maha;
    e.auroc_maha_pca = auroc_maha_pca;
    e.auroc_oracle = auroc_oracle;
    e.chosen_k = chosen_k;
    e.total_error = 1.0 - auroc_maha;
    e.indistinguishable = 1.0 - auroc_oracle;
    e.other = auroc_oracle - auroc_maha_pca;
    e.irrelevant = auroc_maha_pca - auroc_maha;
    if (e.indistinguishable < 0) e.warnings.emplace_back("indistinguishable component is negative");
    if (e.other < 0) e.warnings.emplace_back("other component is negative: oracle probe AUROC below oracle-PCA Maha");
    if (e.irrelevant < 0) e.warnings.emplace_back("irrelevant component is negative");
    return e;
}

inline ErrorDecomposition error_decomposition(const DatasetBundle& id_train, const Matrix& id_eval, const Matrix& ood,
                                              double shrinkage = kDefaultShrinkage,
                                              const std::vector<Eigen::Index>& k_grid = kDefaultKGrid,
                                              const ProbeConfig& probe_cfg = {}) {
    require(id_train.labels.has_value(), ErrorCode::InvalidArgument, "training bundle has no labels");
    const double a_maha = maha_auroc(id_train.features, *id_train.labels, id_eval, ood, shrinkage);
    const PcaMahaResult pca_result = oracle_pca_maha(id_train, id_eval, ood, k_grid, shrinkage);
    const OracleProbe probe = fit_oracle_probe(id_eval, ood, probe_cfg);
    return decompose_aurocs(a_maha, pca_result.auroc, probe.heldout_auroc, pca_result.chosen_k);
}

inline nlohmann::json to_json(const ErrorDecomposition& e) {
    return {{"auroc_maha", e.auroc_maha},
            {"auroc_maha_pca", e.auroc_maha_pca},
            {"auroc_oracle", e.auroc_oracle},
            {"chosen_k", e.chosen_k},
            {"components",
             {{"total_error", e.total_error},
              {"indistinguishable", e.indistinguishable},
              {"other", e.other},
              {"irrelevant", e.irrelevant}}},
            {"warnings", e.warnings}};
}

// Entry (i, j): Maha AUROC against OOD set j inside the top-k PCA basis of
// ID eval + OOD set i.
inline Matrix feature_transfer_matrix(const DatasetBundle& id_train, const Matrix& id_eval,
                                      const std::vector<Matrix>& ood_sets, Eigen::Index k,
                                      double shrinkage = kDefaultShrinkage) {
    require(id_train.labels.has_value(), ErrorCode::InvalidArgument, "training bundle has no labels");
    require(ood_sets.size() >= 2, ErrorCode::TooFewSets, "transfer matrix needs at least 2 OOD sets");
    const Eigen::Index d = id_train.dim();
    require(k >= 1 && k < d, ErrorCode::InvalidArgument, "k must satisfy 1 <= k < D");
    for (const auto& o : ood_sets) require(o.cols() == d, ErrorCode::DimensionMismatch, "OOD feature dim differs");

    const auto s = static_cast<Eigen::Index>(ood_sets.size());
    Matrix out(s, s);
    parallel_for(ood_sets.size(), [&](std::size_t i) {
        Matrix joint(id_eval.rows() + ood_sets[i].rows(), d);
        joint << id_eval, ood_sets[i];
        const PcaBasis basis = pca(joint, k);
        const auto model = fit_gaussian_class_model(project(basis, id_train.features), *id_train.labels, shrinkage);
        const ScoreVector id_scores = maha_score(model, project(basis, id_eval));
        for (Eigen::Index j = 0; j < s; ++j)
            out(static_cast<Eigen::Index>(i), j) = auroc(id_scores, maha_score(model, project(basis, ood_sets[j])));
    });
    return out;
}

}  // namespace oodlens
