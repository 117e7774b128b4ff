#include <gtest/gtest.h>

#include <random>

#include "../support/error_probe.hpp"
#include "../support/oracles.hpp"
#include "oodlens/detect_metrics.hpp"

using namespace oodlens;

TEST(DetectMetrics, AurocReferenceValues) {
    EXPECT_EQ(auroc(ScoreVector{1, 2, 3}, ScoreVector{-1, 0}), 1.0);
    EXPECT_EQ(auroc(ScoreVector{-1, 0}, ScoreVector{1, 2, 3}), 0.0);
    EXPECT_EQ(auroc(ScoreVector{5, 5, 5}, ScoreVector{5, 5}), 0.5);
    EXPECT_EQ(auroc(ScoreVector{0.9, 0.4}, ScoreVector{0.5, 0.1}), 0.75);
    EXPECT_EQ(auroc(ScoreVector{1}, ScoreVector{1}), 0.5);
}

TEST(DetectMetrics, AurocMatchesPairwiseCount) {
    std::mt19937_64 gen(1);
    for (int trial = 0; trial < 300; ++trial) {
        const auto id = oracle::tied_scores(gen, 1 + gen() % 60, 9);
        const auto ood = oracle::tied_scores(gen, 1 + gen() % 60, 9);
        EXPECT_NEAR(auroc(id, ood), oracle::pairwise_auroc(id, ood), 1e-12);
    }
}

TEST(DetectMetrics, AurocSymmetryAndMonotoneInvariance) {
    std::mt19937_64 gen(2);
    std::normal_distribution<double> z;
    for (int trial = 0; trial < 100; ++trial) {
        ScoreVector id(40), ood(30);
        for (auto& s : id) s = z(gen) + 0.5;
        for (auto& s : ood) s = z(gen);
        EXPECT_NEAR(auroc(id, ood) + auroc(ood, id), 1.0, 1e-12);
        ScoreVector id_t = id, ood_t = ood;
        for (auto& s : id_t) s = std::exp(3.0 * s) - 7.0;
        for (auto& s : ood_t) s = std::exp(3.0 * s) - 7.0;
        EXPECT_EQ(auroc(id_t, ood_t), auroc(id, ood));
    }
}

TEST(DetectMetrics, FprReferenceValues) {
    EXPECT_EQ(fpr_at_tpr(ScoreVector{3, 2, 1, 0}, ScoreVector{0.5, -1}, 0.95), 0.5);
    EXPECT_EQ(fpr_at_tpr(ScoreVector{3, 2, 1, 0}, ScoreVector{0.5, -1}, 0.5), 0.0);
    EXPECT_EQ(fpr_at_tpr(ScoreVector{1, 2}, ScoreVector{0, 0}, 1.0), 0.0);
    // Ties at the threshold count as accepted.
    EXPECT_EQ(fpr_at_tpr(ScoreVector{1, 1, 1}, ScoreVector{1, 0}, 0.95), 0.5);
}

TEST(DetectMetrics, FprMatchesThresholdSweep) {
    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 300; ++trial) {
        const auto id = oracle::tied_scores(gen, 1 + gen() % 60, 7);
        const auto ood = oracle::tied_scores(gen, 1 + gen() % 60, 7);
        for (double target : {0.05, 0.5, 0.8, 0.95, 1.0})
            EXPECT_EQ(fpr_at_tpr(id, ood, target), oracle::sweep_fpr(id, ood, target));
    }
}

TEST(DetectMetrics, ValidationErrors) {
    EXPECT_EQ(oracle::code_of([] { auroc(ScoreVector{}, ScoreVector{1}); }), ErrorCode::EmptyInput);
    EXPECT_EQ(oracle::code_of([] { auroc(ScoreVector{1}, ScoreVector{}); }), ErrorCode::EmptyInput);
    EXPECT_EQ(oracle::code_of([] { auroc(ScoreVector{NAN}, ScoreVector{1}); }), ErrorCode::NonFiniteValue);
    EXPECT_EQ(oracle::code_of([] { fpr_at_tpr(ScoreVector{1}, ScoreVector{1}, 0.0); }), ErrorCode::BadTarget);
    EXPECT_EQ(oracle::code_of([] { fpr_at_tpr(ScoreVector{1}, ScoreVector{1}, 1.5); }), ErrorCode::BadTarget);
}

TEST(DetectMetrics, RocCurveShape) {
    const auto c = roc_curve(ScoreVector{2, 1}, ScoreVector{0});
    ASSERT_EQ(c.tpr.size(), 4u);
    EXPECT_TRUE(std::isinf(c.thresholds[0]));
    EXPECT_EQ(c.tpr, (std::vector<double>{0, 0.5, 1, 1}));
    EXPECT_EQ(c.fpr, (std::vector<double>{0, 0, 0, 1}));
    EXPECT_EQ(c.area(), 1.0);

    const auto tied = roc_curve(ScoreVector{1}, ScoreVector{1});
    EXPECT_EQ(tied.tpr, (std::vector<double>{0, 1}));
    EXPECT_EQ(tied.fpr, (std::vector<double>{0, 1}));
    EXPECT_EQ(tied.area(), 0.5);
}

TEST(DetectMetrics, RocAreaEqualsAuroc) {
    std::mt19937_64 gen(4);
    for (int trial = 0; trial < 200; ++trial) {
        const auto id = oracle::tied_scores(gen, 1 + gen() % 50, 11);
        const auto ood = oracle::tied_scores(gen, 1 + gen() % 50, 11);
        const auto c = roc_curve(id, ood);
        EXPECT_NEAR(c.area(), auroc(id, ood), 1e-9);
        for (std::size_t i = 1; i < c.tpr.size(); ++i) {
            EXPECT_GE(c.tpr[i], c.tpr[i - 1]);
            EXPECT_GE(c.fpr[i], c.fpr[i - 1]);
            EXPECT_LT(c.thresholds[i], c.thresholds[i - 1]);
        }
        EXPECT_EQ(c.tpr.back(), 1.0);
        EXPECT_EQ(c.fpr.back(), 1.0);
    }
}

TEST(DetectMetrics, ReportJsonRoundTrip) {
    const auto r = evaluate_detection("msp", ScoreVector{0.9, 0.4, 0.7}, ScoreVector{0.5, 0.1}, 0.95, "far");
    const auto back = report_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_EQ(back.method, "msp");
    EXPECT_EQ(back.ood_set, "far");
    EXPECT_EQ(back.auroc, r.auroc);
    EXPECT_EQ(back.fpr_at_tpr, r.fpr_at_tpr);
    EXPECT_EQ(back.n_id, 3u);
    EXPECT_EQ(back.n_ood, 2u);
    EXPECT_EQ(back.curve.thresholds.size(), r.curve.thresholds.size());
    EXPECT_TRUE(std::isinf(back.curve.thresholds[0]));
    EXPECT_EQ(back.curve.tpr, r.curve.tpr);

    const auto j = to_json(r, false);
    EXPECT_FALSE(j.contains("curve"));
    EXPECT_EQ(j["fpr_at_95"].get<double>(), r.fpr_at_tpr);
    EXPECT_TRUE(to_json(evaluate_detection("m", ScoreVector{1}, ScoreVector{0}, 0.9))["fpr_at_95"].is_null());
}

TEST(DetectMetrics, CsvRowFormat) {
    const auto r = evaluate_detection("energy", ScoreVector{1, 2}, ScoreVector{0}, 0.95, "near");
    EXPECT_EQ(to_csv_row(r), "energy,near,1,0,0.94999999999999996,2,1");
    EXPECT_EQ(std::string(kReportCsvHeader), "method,ood_set,auroc,fpr_at_tpr,tpr_target,n_id,n_ood");
}
