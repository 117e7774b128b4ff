#pragma once

// Synthetic stand-in for extracted features.
//
// ID class c draws x = mu_c + diag(stddev) z. OOD draws come from the same
// class mixture translated by a shift vector. Under the planted covariance
// the first k coordinates carry the ID/OOD contrast (unit variance, shift g)
// and the remaining D - k coordinates are pure noise of scale sigma.
// Logits are the Bayes-optimal (LDA) logits of the generating model with
// equal class priors, so logit scores have a well-defined classifier behind
// them without any training.

#include <cmath>
#include <cstdint>
#include <optional>
#include <tuple>
#include <variant>
#include <vector>

#include "oodlens/error.hpp"
#include "oodlens/rng.hpp"
#include "oodlens/tensor_io.hpp"
#include "oodlens/types.hpp"

namespace oodlens {

struct IdentityCov {};

// Per-coordinate variances.
struct DiagonalCov {
    std::vector<double> variances;
};

struct PlantedCov {
    std::size_t signal_dims = 0;
    double signal_gap = 0.0;
    double noise_scale = 1.0;
};

using CovSpec = std::variant<IdentityCov, DiagonalCov, PlantedCov>;

struct SynthSpec {
    std::size_t n_per_class = 0;
    std::size_t dim = 0;
    Matrix class_means;  // K x D
    CovSpec cov = IdentityCov{};
    std::uint64_t seed = 0;
    // Overrides the planted shift when set.
    std::optional<Vector> ood_shift;

    Eigen::Index num_classes() const { return class_means.rows(); }
};

// Stream ids used by synth_dataset; extra OOD sets should use ids >= kFirstExtraStream.
inline constexpr std::uint64_t kTrainStream = 1;
inline constexpr std::uint64_t kHeldoutStream = 2;
inline constexpr std::uint64_t kOodStream = 3;
inline constexpr std::uint64_t kFirstExtraStream = 16;

inline void validate(const SynthSpec& spec) {
    require(spec.n_per_class >= 2, ErrorCode::DegenerateSpec, "n_per_class must be >= 2");
    require(spec.dim >= 1, ErrorCode::DegenerateSpec, "dim must be >= 1");
    require(spec.class_means.rows() >= 1 && spec.class_means.cols() == static_cast<Eigen::Index>(spec.dim),
            ErrorCode::DegenerateSpec, "class_means must be K x dim with K >= 1");
    if (const auto* p = std::get_if<PlantedCov>(&spec.cov)) {
        require(p->signal_dims <= spec.dim, ErrorCode::DegenerateSpec, "signal_dims exceeds dim");
        require(p->signal_gap >= 0.0, ErrorCode::DegenerateSpec, "signal_gap must be >= 0");
        require(p->noise_scale > 0.0, ErrorCode::DegenerateSpec, "noise_scale must be > 0");
    }
    if (const auto* d = std::get_if<DiagonalCov>(&spec.cov)) {
        require(d->variances.size() == spec.dim, ErrorCode::DegenerateSpec, "diagonal variances must have dim entries");
        for (double v : d->variances) require(v > 0.0, ErrorCode::DegenerateSpec, "diagonal variances must be > 0");
    }
    if (spec.ood_shift)
        require(spec.ood_shift->size() == static_cast<Eigen::Index>(spec.dim), ErrorCode::DegenerateSpec,
                "ood_shift must have dim entries");
}

inline Vector noise_variances(const SynthSpec& spec) {
    Vector var = Vector::Ones(static_cast<Eigen::Index>(spec.dim));
    if (const auto* d = std::get_if<DiagonalCov>(&spec.cov)) {
        for (std::size_t j = 0; j < spec.dim; ++j) var(j) = d->variances[j];
    } else if (const auto* p = std::get_if<PlantedCov>(&spec.cov)) {
        for (std::size_t j = p->signal_dims; j < spec.dim; ++j) var(j) = p->noise_scale * p->noise_scale;
    }
    return var;
}

inline Vector planted_shift(const SynthSpec& spec) {
    if (spec.ood_shift) return *spec.ood_shift;
    Vector shift = Vector::Zero(static_cast<Eigen::Index>(spec.dim));
    if (const auto* p = std::get_if<PlantedCov>(&spec.cov))
        for (std::size_t j = 0; j < p->signal_dims; ++j) shift(j) = p->signal_gap;
    return shift;
}

// Class c mean = scale * e_{D-1-c}: classes sit on the trailing axes.
inline Matrix axis_class_means(Eigen::Index num_classes, Eigen::Index dim, double scale) {
    require(num_classes <= dim, ErrorCode::DegenerateSpec, "axis_class_means needs num_classes <= dim");
    Matrix means = Matrix::Zero(num_classes, dim);
    for (Eigen::Index c = 0; c < num_classes; ++c) means(c, dim - 1 - c) = scale;
    return means;
}

// LDA logits of the generating model: mu_c' S^-1 x - mu_c' S^-1 mu_c / 2.
inline Matrix generative_logits(const SynthSpec& spec, const Matrix& features) {
    const Vector inv_var = noise_variances(spec).cwiseInverse();
    const Matrix scaled_means = spec.class_means * inv_var.asDiagonal();  // K x D
    Matrix logits = features * scaled_means.transpose();
    for (Eigen::Index c = 0; c < spec.class_means.rows(); ++c)
        logits.col(c).array() -= 0.5 * spec.class_means.row(c).dot(scaled_means.row(c));
    return logits;
}

namespace detail {

// Rows are interleaved by class: row i belongs to class i % K. Values are
// rounded to f32 so in-memory bundles match what save_bundle writes.
inline DatasetBundle draw_split(const SynthSpec& spec, const Vector& shift, std::uint64_t stream, SplitTag tag) {
    const Eigen::Index k = spec.num_classes();
    const auto d = static_cast<Eigen::Index>(spec.dim);
    const Eigen::Index n = static_cast<Eigen::Index>(spec.n_per_class) * k;
    const Vector stddev = noise_variances(spec).cwiseSqrt();
    Rng rng(spec.seed, stream);
    DatasetBundle b;
    b.split = tag;
    b.features.resize(n, d);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index c = i % k;
        labels[i] = static_cast<int>(c);
        for (Eigen::Index j = 0; j < d; ++j) {
            const double v = spec.class_means(c, j) + shift(j) + stddev(j) * rng.normal();
            b.features(i, j) = static_cast<double>(static_cast<float>(v));
        }
    }
    Matrix logits = generative_logits(spec, b.features);
    b.logits = logits.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
    if (tag != SplitTag::Ood) b.labels = std::move(labels);
    return b;
}

}  // namespace detail

// Returns (train, heldout, ood). Pure function of spec, seed included.
inline std::tuple<DatasetBundle, DatasetBundle, DatasetBundle> synth_dataset(const SynthSpec& spec) {
    validate(spec);
    const Vector zero = Vector::Zero(static_cast<Eigen::Index>(spec.dim));
    return {detail::draw_split(spec, zero, kTrainStream, SplitTag::Train),
            detail::draw_split(spec, zero, kHeldoutStream, SplitTag::Heldout),
            detail::draw_split(spec, planted_shift(spec), kOodStream, SplitTag::Ood)};
}

// An additional OOD set: the ID mixture translated by `shift`, from its own stream.
inline DatasetBundle synth_ood(const SynthSpec& spec, const Vector& shift, std::uint64_t stream) {
    validate(spec);
    require(shift.size() == static_cast<Eigen::Index>(spec.dim), ErrorCode::DimensionMismatch, "shift length != dim");
    return detail::draw_split(spec, shift, stream, SplitTag::Ood);
}

}  // namespace oodlens
