#pragma once

// Uncertainty scores computed from a logit matrix (one row per sample).
// All are oriented so that higher means more in-distribution; entropy is
// therefore negated. Entropy is in nats.

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

#include "oodlens/error.hpp"
#include "oodlens/types.hpp"

namespace oodlens {

enum class LogitMethod { Msp, MaxLogit, Entropy, Energy };

struct LogitScoreConfig {
    LogitMethod method = LogitMethod::Msp;
    double temperature = 1.0;  // energy only
};

namespace detail {

inline void check_logits(const Matrix& logits, bool need_two_classes) {
    require(logits.allFinite(), ErrorCode::NonFiniteValue, "logits contain non-finite values");
    if (need_two_classes)
        require(logits.cols() >= 2, ErrorCode::SingleClass, "need at least 2 classes, got " + std::to_string(logits.cols()));
    else
        require(logits.cols() >= 1, ErrorCode::ShapeMismatch, "logit matrix has no columns");
}

}  // namespace detail

// log(sum(exp(row))) with the max subtracted first.
template <typename Row>
double logsumexp(const Row& row) {
    const double m = row.maxCoeff();
    return m + std::log((row.array() - m).exp().sum());
}

inline Vector softmax(const Eigen::Ref<const Vector>& logits) {
    Vector p = (logits.array() - logits.maxCoeff()).exp();
    return p / p.sum();
}

inline ScoreVector msp(const Matrix& logits) {
    detail::check_logits(logits, true);
    ScoreVector out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const auto row = logits.row(i).array();
        const double m = row.maxCoeff();
        // max softmax = exp(m - lse) = 1 / sum(exp(row - m))
        out[i] = 1.0 / (row - m).exp().sum();
    }
    return out;
}

inline ScoreVector max_logit(const Matrix& logits) {
    detail::check_logits(logits, false);
    ScoreVector out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) out[i] = logits.row(i).maxCoeff();
    return out;
}

inline ScoreVector entropy_score(const Matrix& logits) {
    detail::check_logits(logits, true);
    ScoreVector out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const auto row = logits.row(i).array();
        const double lse = logsumexp(row);
        const auto logp = row - lse;
        // H = -sum p log p
        out[i] = (logp.exp() * logp).sum();
    }
    return out;
}

// Negative free energy: T * logsumexp(f / T).
inline ScoreVector energy_score(const Matrix& logits, double temperature = 1.0) {
    require(temperature > 0.0 && std::isfinite(temperature), ErrorCode::NonPositiveTemperature,
            "temperature must be a positive finite number");
    detail::check_logits(logits, false);
    ScoreVector out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
        out[i] = temperature * logsumexp(logits.row(i).array() / temperature);
    return out;
}

inline ScoreVector logit_score(const Matrix& logits, const LogitScoreConfig& cfg) {
    switch (cfg.method) {
        case LogitMethod::Msp: return msp(logits);
        case LogitMethod::MaxLogit: return max_logit(logits);
        case LogitMethod::Entropy: return entropy_score(logits);
        case LogitMethod::Energy: return energy_score(logits, cfg.temperature);
    }
    fail(ErrorCode::InvalidArgument, "unknown logit method");
}

}  // namespace oodlens
