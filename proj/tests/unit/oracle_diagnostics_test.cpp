#include <gtest/gtest.h>

#include <set>

#include "../support/error_probe.hpp"
#include "oodlens/oracle_diagnostics.hpp"
#include "oodlens/synth.hpp"

using namespace oodlens;

namespace {

Matrix gaussian(Rng& rng, Eigen::Index n, Eigen::Index d, double shift0) {
    Matrix x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rng.normal() + (j == 0 ? shift0 : 0.0);
    return x;
}

SynthSpec small_spec(std::size_t dim) {
    SynthSpec spec;
    spec.n_per_class = 200;
    spec.dim = dim;
    spec.class_means = axis_class_means(2, static_cast<Eigen::Index>(dim), 3.0);
    spec.ood_shift = Vector::Zero(static_cast<Eigen::Index>(dim));
    (*spec.ood_shift)(0) = 2.0;
    return spec;
}

}  // namespace

TEST(OracleDiagnostics, ProbeNeedsEnoughRows) {
    Rng rng(1, 0);
    EXPECT_EQ(oracle::code_of([&] { fit_oracle_probe(gaussian(rng, 5, 2, 0), gaussian(rng, 50, 2, 1)); }),
              ErrorCode::TooFewSamples);
    EXPECT_EQ(oracle::code_of([&] { fit_oracle_probe(gaussian(rng, 50, 2, 0), gaussian(rng, 50, 3, 1)); }),
              ErrorCode::DimensionMismatch);
    ProbeConfig bad;
    bad.train_fraction = 1.0;
    EXPECT_EQ(oracle::code_of([&] { fit_oracle_probe(gaussian(rng, 50, 2, 0), gaussian(rng, 50, 2, 1), bad); }),
              ErrorCode::InvalidArgument);
}

TEST(OracleDiagnostics, ProbeSplitsAreDisjointAndComplete) {
    Rng rng(2, 0);
    const auto probe = fit_oracle_probe(gaussian(rng, 103, 3, 0), gaussian(rng, 61, 3, 2));
    for (const auto& [train, held, n] : {std::tuple{probe.id_train_rows, probe.id_heldout_rows, 103},
                                         std::tuple{probe.ood_train_rows, probe.ood_heldout_rows, 61}}) {
        std::set<Eigen::Index> all(train.begin(), train.end());
        for (auto i : held) EXPECT_TRUE(all.insert(i).second) << "row " << i << " on both sides";
        EXPECT_EQ(static_cast<int>(all.size()), n);
        EXPECT_EQ(*all.rbegin(), n - 1);
        EXPECT_FALSE(held.empty());
    }
    EXPECT_EQ(probe.id_train_rows.size(), 82u);
}

TEST(OracleDiagnostics, ProbeReachesStationaryPoint) {
    Rng rng(3, 0);
    const Matrix id = gaussian(rng, 200, 3, 0), ood = gaussian(rng, 200, 3, 1.5);
    ProbeConfig cfg;
    const auto probe = fit_oracle_probe(id, ood, cfg);
    EXPECT_LE(probe.gradient_norm, cfg.gradient_tolerance);
    EXPECT_GT(probe.heldout_auroc, 0.75);
    EXPECT_GT(probe.weights(0), 0.0 - 1e9);
    // The ID side scores higher along the separating axis.
    EXPECT_LT(probe.weights(0), 0.0);

    // Stationarity checked independently: mean (p - t) x + l2 w = 0 on the training rows.
    Matrix x(probe.id_train_rows.size() + probe.ood_train_rows.size(), 3);
    Vector t(x.rows());
    Eigen::Index r = 0;
    for (auto i : probe.id_train_rows) x.row(r) = id.row(i), t(r++) = 1.0;
    for (auto i : probe.ood_train_rows) x.row(r) = ood.row(i), t(r++) = 0.0;
    Vector gw = cfg.l2 * probe.weights;
    double gb = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-(x.row(i).dot(probe.weights) + probe.bias)));
        gw += (p - t(i)) * x.row(i).transpose() / static_cast<double>(x.rows());
        gb += (p - t(i)) / static_cast<double>(x.rows());
    }
    EXPECT_LT(gw.norm(), 1e-7);
    EXPECT_LT(std::abs(gb), 1e-7);
}

TEST(OracleDiagnostics, ProbeIsDeterministic) {
    Rng rng(4, 0);
    const Matrix id = gaussian(rng, 100, 4, 0), ood = gaussian(rng, 100, 4, 1);
    const auto a = fit_oracle_probe(id, ood), b = fit_oracle_probe(id, ood);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_EQ(a.heldout_auroc, b.heldout_auroc);
}

TEST(OracleDiagnostics, DecompositionTelescopes) {
    const auto e = decompose_aurocs(0.7, 0.85, 0.97, 8);
    EXPECT_NEAR(e.total_error, 0.3, 1e-15);
    EXPECT_NEAR(e.indistinguishable + e.other + e.irrelevant, e.total_error, 1e-15);
    EXPECT_NEAR(e.indistinguishable, 0.03, 1e-15);
    EXPECT_NEAR(e.irrelevant, 0.15, 1e-15);
    EXPECT_TRUE(e.warnings.empty());
    const auto neg = decompose_aurocs(0.9, 0.8, 0.75, 4);
    EXPECT_EQ(neg.warnings.size(), 2u);
    EXPECT_LT(neg.irrelevant, 0.0);
    const auto j = to_json(neg);
    EXPECT_EQ(j["components"]["irrelevant"].get<double>(), neg.irrelevant);
    EXPECT_EQ(j["chosen_k"].get<int>(), 4);
}

TEST(OracleDiagnostics, PcaGridFiltering) {
    auto spec = small_spec(16);
    const auto [train, held, ood] = synth_dataset(spec);
    EXPECT_EQ(oracle::code_of([&] { oracle_pca_maha(train, held.features, ood.features); }), ErrorCode::EmptyGrid);
    const auto r = oracle_pca_maha(train, held.features, ood.features, {20, 8, 4, 8, 0});
    EXPECT_EQ(r.ks, (std::vector<Eigen::Index>{4, 8}));
    EXPECT_EQ(r.aurocs.size(), 2u);
    EXPECT_EQ(r.auroc, std::max(r.aurocs[0], r.aurocs[1]));
}

TEST(OracleDiagnostics, FullDecompositionSumsExactly) {
    auto spec = small_spec(12);
    const auto [train, held, ood] = synth_dataset(spec);
    const auto e = error_decomposition(train, held.features, ood.features, kDefaultShrinkage, {2, 4, 8});
    EXPECT_NEAR(e.indistinguishable + e.other + e.irrelevant, e.total_error, 1e-12);
    EXPECT_NEAR(e.total_error, 1.0 - e.auroc_maha, 0.0);
    EXPECT_GT(e.auroc_oracle, 0.8);
}

TEST(OracleDiagnostics, TransferMatrixStructure) {
    auto spec = small_spec(10);
    const auto [train, held, ood] = synth_dataset(spec);
    EXPECT_EQ(oracle::code_of([&] { feature_transfer_matrix(train, held.features, {ood.features}, 3); }),
              ErrorCode::TooFewSets);
    EXPECT_EQ(oracle::code_of([&] {
                  feature_transfer_matrix(train, held.features, {ood.features, ood.features}, 10);
              }),
              ErrorCode::InvalidArgument);
    Vector other_shift = Vector::Zero(10);
    other_shift(5) = 2.0;
    const auto other = synth_ood(spec, other_shift, kFirstExtraStream);
    const Matrix m = feature_transfer_matrix(train, held.features, {ood.features, ood.features, other.features}, 3);
    ASSERT_EQ(m.rows(), 3);
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(m(i, 0), m(i, 1));
    EXPECT_EQ(m.row(0), m.row(1));
    EXPECT_GT(m(0, 0), m(0, 2));
    EXPECT_GT(m(2, 2), m(2, 0));
}
