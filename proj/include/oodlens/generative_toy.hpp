#pragma once

// Generative-model pathologies at desk scale: the 1-D Gaussian mean sweep,
// GMM covariance interpolation, and coarse-grained typicality statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "oodlens/detect_metrics.hpp"
#include "oodlens/error.hpp"
#include "oodlens/feature_scores.hpp"
#include "oodlens/linalg.hpp"
#include "oodlens/logit_scores.hpp"
#include "oodlens/rng.hpp"
#include "oodlens/types.hpp"

namespace oodlens {

inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

inline double normal_logpdf(double x, double mean, double stddev) {
    const double z = (x - mean) / stddev;
    return -0.5 * z * z - std::log(stddev) - 0.5 * std::log(2.0 * std::numbers::pi);
}

// ID ~ N(id_mean, id_std^2), OOD ~ N(ood_mean, ood_std^2); the model is
// N(mu, 1) and the detector scores log p_mu(x).
struct Toy1dConfig {
    double id_mean = 0.0;
    double id_std = 1.0;
    double ood_mean = 2.0;
    double ood_std = 1.0;
    std::size_t n_mc = 100000;
    std::uint64_t seed = 0;
};

struct Toy1dRow {
    double mu = 0.0;
    double mean_id_loglik = 0.0;  // closed form
    double kl = 0.0;              // KL(ID || N(mu, 1)), closed form
    double auroc = 0.0;           // Monte Carlo rank statistic
    double auroc_quadrature = 0.0;
};

// E_ID[log N(x | mu, 1)] = -log(2 pi)/2 - (id_std^2 + (id_mean - mu)^2)/2
inline double toy1d_mean_loglik(const Toy1dConfig& c, double mu) {
    return -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * (c.id_std * c.id_std + (c.id_mean - mu) * (c.id_mean - mu));
}

// KL(N(m, s^2) || N(mu, 1)) = -log s + (s^2 + (m - mu)^2)/2 - 1/2; mu^2/2 for the default ID law.
inline double toy1d_kl(const Toy1dConfig& c, double mu) {
    return -std::log(c.id_std) + 0.5 * (c.id_std * c.id_std - 1.0) + 0.5 * (c.id_mean - mu) * (c.id_mean - mu);
}

// P(|X - mu| < |Y - mu|) for X ~ ID, Y ~ OOD by Simpson quadrature over y.
// The score is continuous, so ties have probability zero.
inline double toy1d_auroc_quadrature(const Toy1dConfig& c, double mu, int intervals = 20000) {
    const double lo = c.ood_mean - 12.0 * c.ood_std;
    const double hi = c.ood_mean + 12.0 * c.ood_std;
    const double h = (hi - lo) / intervals;
    auto integrand = [&](double y) {
        const double r = std::abs(y - mu);
        const double p_closer =
            normal_cdf((mu + r - c.id_mean) / c.id_std) - normal_cdf((mu - r - c.id_mean) / c.id_std);
        return std::exp(normal_logpdf(y, c.ood_mean, c.ood_std)) * p_closer;
    };
    double sum = integrand(lo) + integrand(hi);
    for (int i = 1; i < intervals; ++i) sum += integrand(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return sum * h / 3.0;
}

// Grid point i draws from its own stream, so rows are independent of grid order.
inline std::vector<Toy1dRow> toy1d_sweep(const Toy1dConfig& c, const std::vector<double>& mu_grid) {
    require(c.id_std > 0.0 && c.ood_std > 0.0, ErrorCode::InvalidArgument, "standard deviations must be > 0");
    require(c.n_mc >= 1, ErrorCode::InvalidArgument, "n_mc must be >= 1");
    std::vector<Toy1dRow> rows;
    rows.reserve(mu_grid.size());
    for (std::size_t g = 0; g < mu_grid.size(); ++g) {
        const double mu = mu_grid[g];
        require(std::isfinite(mu), ErrorCode::InvalidArgument, "mu grid must be finite");
        Rng rng(c.seed, 1000 + g);
        ScoreVector id(c.n_mc), ood(c.n_mc);
        for (auto& s : id) s = normal_logpdf(c.id_mean + c.id_std * rng.normal(), mu, 1.0);
        for (auto& s : ood) s = normal_logpdf(c.ood_mean + c.ood_std * rng.normal(), mu, 1.0);
        rows.push_back({mu, toy1d_mean_loglik(c, mu), toy1d_kl(c, mu), auroc(id, ood), toy1d_auroc_quadrature(c, mu)});
    }
    return rows;
}

// log sum_c w_c N(x | mu_c, Sigma) per row, with a stable logsumexp.
inline ScoreVector gmm_loglik(const GaussianClassModel& model, const Vector& weights, const Matrix& x) {
    require(x.cols() == model.dim(), ErrorCode::DimensionMismatch, "feature dim differs from model");
    require(weights.size() == model.num_classes(), ErrorCode::DimensionMismatch, "one weight per component required");
    require((weights.array() >= 0.0).all() && std::abs(weights.sum() - 1.0) < 1e-9, ErrorCode::InvalidArgument,
            "weights must lie on the simplex");
    const double d = static_cast<double>(model.dim());
    // precision = L L'  =>  log|Sigma| = -2 sum log diag(L)
    const double log_det_cov = -2.0 * model.precision_cholesky.diagonal().array().log().sum();
    const double base = -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det_cov);
    Matrix terms(x.rows(), model.num_classes());
    for (Eigen::Index c = 0; c < model.num_classes(); ++c) {
        const Matrix whitened = (x.rowwise() - model.class_means.row(c)) * model.precision_cholesky;
        const double log_w = weights(c) > 0.0 ? std::log(weights(c)) : -std::numeric_limits<double>::infinity();
        terms.col(c) = (base - 0.5 * whitened.rowwise().squaredNorm().array() + log_w).matrix();
    }
    ScoreVector out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = logsumexp(terms.row(i).array());
    return out;
}

inline ScoreVector gmm_loglik(const GaussianClassModel& model, const Matrix& x) {
    const auto k = model.num_classes();
    return gmm_loglik(model, Vector::Constant(k, 1.0 / static_cast<double>(k)), x);
}

// Same class means, covariance replaced by (1 - t) Sigma + t I.
inline GaussianClassModel interpolate_covariance(const GaussianClassModel& base, double t) {
    require(t >= 0.0 && t <= 1.0, ErrorCode::InvalidArgument, "t must lie in [0, 1]");
    GaussianClassModel m = base;
    m.covariance = (1.0 - t) * base.covariance;
    m.covariance.diagonal().array() += t;
    auto inv = spd_inverse(m.covariance, "interpolated covariance");
    m.precision = std::move(inv.inverse);
    m.precision_cholesky = std::move(inv.inverse_cholesky);
    return m;
}

struct GmmInterpRow {
    double t = 0.0;
    double mean_id_loglik = 0.0;
    double auroc = 0.0;       // GMM log-likelihood as the score
    double maha_auroc = 0.0;  // Mahalanobis under the same covariance
};

inline std::vector<double> default_t_grid() {
    std::vector<double> t;
    for (int i = 0; i <= 10; ++i) t.push_back(i / 10.0);
    return t;
}

inline std::vector<GmmInterpRow> gmm_interp_experiment(const GaussianClassModel& base, const Matrix& id_eval,
                                                       const Matrix& ood,
                                                       const std::vector<double>& t_grid = default_t_grid()) {
    require(!t_grid.empty() && std::is_sorted(t_grid.begin(), t_grid.end()), ErrorCode::InvalidArgument,
            "t grid must be sorted");
    require(t_grid.front() == 0.0 && t_grid.back() == 1.0, ErrorCode::InvalidArgument, "t grid must include 0 and 1");
    std::vector<GmmInterpRow> rows;
    for (double t : t_grid) {
        const auto model = interpolate_covariance(base, t);
        const ScoreVector id_ll = gmm_loglik(model, id_eval);
        const ScoreVector ood_ll = gmm_loglik(model, ood);
        double mean = 0.0;
        for (double v : id_ll) mean += v;
        mean /= static_cast<double>(id_ll.size());
        rows.push_back({t, mean, auroc(id_ll, ood_ll), auroc(maha_score(model, id_eval), maha_score(model, ood))});
    }
    return rows;
}

// An anisotropic instance: the OOD offset lies along the single
// high-variance axis, while many low-variance axes carry only ID noise.
// Whitening by the fitted covariance inflates those noise axes, so moving
// toward the identity covariance trades ID likelihood for detection.
struct AnisotropicInstance {
    Matrix train;
    std::vector<int> labels;
    Matrix id_eval;
    Matrix ood;
};

struct AnisotropicConfig {
    std::uint64_t seed = 0;
    Eigen::Index n = 4000;
    Eigen::Index noise_dims = 20;
    double signal_std = 2.0;
    double noise_std = 0.3;
    double ood_offset = 4.0;
    double class_separation = 2.0;  // between the two class means, along the first noise axis
};

inline AnisotropicInstance make_anisotropic_instance(const AnisotropicConfig& c) {
    Rng rng(c.seed, 71);
    const Eigen::Index d = 1 + c.noise_dims;
    auto draw = [&](Eigen::Index n, double offset, std::vector<int>* labels) {
        Matrix x(n, d);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int y = static_cast<int>(i % 2);
            x(i, 0) = offset + c.signal_std * rng.normal();
            for (Eigen::Index j = 1; j < d; ++j) x(i, j) = c.noise_std * rng.normal();
            x(i, 1) += (y == 0 ? -0.5 : 0.5) * c.class_separation;
            if (labels) labels->push_back(y);
        }
        return x;
    };
    AnisotropicInstance inst;
    inst.train = draw(c.n, 0.0, &inst.labels);
    inst.id_eval = draw(c.n, 0.0, nullptr);
    inst.ood = draw(c.n, c.ood_offset, nullptr);
    return inst;
}

enum class TypicalityMode { Norm, Mean };

// norm: -| |x| - sqrt(D) |;  mean: -| mean_i x_i |
inline ScoreVector typicality_scores(const Matrix& x, TypicalityMode mode) {
    require(x.cols() >= 1, ErrorCode::InvalidArgument, "typicality needs D >= 1");
    const double sqrt_d = std::sqrt(static_cast<double>(x.cols()));
    ScoreVector out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        out[i] = mode == TypicalityMode::Norm ? -std::abs(x.row(i).norm() - sqrt_d) : -std::abs(x.row(i).mean());
    return out;
}

}  // namespace oodlens
