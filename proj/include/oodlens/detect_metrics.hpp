#pragma once

// Threshold-free detection metrics.
//
// Conventions: the positive class is ID, scores are "higher = more ID", and a
// sample is accepted as ID when its score is >= the threshold.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oodlens/error.hpp"
#include "oodlens/types.hpp"

namespace oodlens {

namespace detail {

inline void check_scores(std::span<const double> scores, const char* what) {
    require(!scores.empty(), ErrorCode::EmptyInput, std::string(what) + " scores are empty");
    for (double s : scores)
        require(std::isfinite(s), ErrorCode::NonFiniteValue, std::string(what) + " scores contain non-finite values");
}

}  // namespace detail

// P(s_id > s_ood) + P(s_id == s_ood) / 2 via the Mann-Whitney rank sum with
// mid-ranks for ties. O(N log N).
inline double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    detail::check_scores(id_scores, "ID");
    detail::check_scores(ood_scores, "OOD");
    const std::size_t n_id = id_scores.size();
    const std::size_t n_ood = ood_scores.size();
    const std::size_t n = n_id + n_ood;

    std::vector<std::pair<double, bool>> all;
    all.reserve(n);
    for (double s : id_scores) all.emplace_back(s, true);
    for (double s : ood_scores) all.emplace_back(s, false);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    // Ranks are doubled so mid-ranks stay integral: sum of 2*rank over ID.
    long double twice_rank_sum = 0.0L;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        std::size_t ids_in_group = 0;
        while (j < n && all[j].first == all[i].first) {
            ids_in_group += all[j].second ? 1 : 0;
            ++j;
        }
        // ranks i+1 .. j, mid-rank (i+1+j)/2
        twice_rank_sum += static_cast<long double>(ids_in_group) * static_cast<long double>(i + 1 + j);
        i = j;
    }
    const long double twice_u = twice_rank_sum - static_cast<long double>(n_id) * (n_id + 1);
    return static_cast<double>(twice_u / (2.0L * n_id * n_ood));
}

inline double auroc(const ScoreVector& id_scores, const ScoreVector& ood_scores) {
    return auroc(std::span<const double>(id_scores), std::span<const double>(ood_scores));
}

// FPR at the largest threshold tau with |{s_id >= tau}| / n_id >= tpr_target.
inline double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double tpr_target) {
    detail::check_scores(id_scores, "ID");
    detail::check_scores(ood_scores, "OOD");
    require(tpr_target > 0.0 && tpr_target <= 1.0, ErrorCode::BadTarget, "tpr_target must lie in (0, 1]");
    std::vector<double> id(id_scores.begin(), id_scores.end());
    std::sort(id.begin(), id.end(), std::greater<>());
    const auto n_id = static_cast<double>(id.size());

    // Smallest keep-count meeting the target; tau is the keep-count-th largest score.
    std::size_t keep = 1;
    while (keep < id.size() && static_cast<double>(keep) / n_id < tpr_target) ++keep;
    const double tau = id[keep - 1];

    const auto accepted = std::count_if(ood_scores.begin(), ood_scores.end(), [tau](double s) { return s >= tau; });
    return static_cast<double>(accepted) / static_cast<double>(ood_scores.size());
}

inline double fpr_at_tpr(const ScoreVector& id_scores, const ScoreVector& ood_scores, double tpr_target) {
    return fpr_at_tpr(std::span<const double>(id_scores), std::span<const double>(ood_scores), tpr_target);
}

struct RocCurve {
    std::vector<double> thresholds;  // descending; first is +inf
    std::vector<double> tpr;
    std::vector<double> fpr;

    // Trapezoid rule over (fpr, tpr).
    double area() const {
        double a = 0.0;
        for (std::size_t i = 1; i < fpr.size(); ++i) a += (fpr[i] - fpr[i - 1]) * (tpr[i] + tpr[i - 1]) * 0.5;
        return a;
    }
};

// One point per distinct score value, swept from high to low, plus (0,0).
inline RocCurve roc_curve(std::span<const double> id_scores, std::span<const double> ood_scores) {
    detail::check_scores(id_scores, "ID");
    detail::check_scores(ood_scores, "OOD");
    std::vector<std::pair<double, bool>> all;
    all.reserve(id_scores.size() + ood_scores.size());
    for (double s : id_scores) all.emplace_back(s, true);
    for (double s : ood_scores) all.emplace_back(s, false);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    const auto n_id = static_cast<double>(id_scores.size());
    const auto n_ood = static_cast<double>(ood_scores.size());
    RocCurve curve;
    curve.thresholds.push_back(std::numeric_limits<double>::infinity());
    curve.tpr.push_back(0.0);
    curve.fpr.push_back(0.0);
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < all.size()) {
        const double tau = all[i].first;
        while (i < all.size() && all[i].first == tau) {
            (all[i].second ? tp : fp) += 1;
            ++i;
        }
        curve.thresholds.push_back(tau);
        curve.tpr.push_back(static_cast<double>(tp) / n_id);
        curve.fpr.push_back(static_cast<double>(fp) / n_ood);
    }
    return curve;
}

inline RocCurve roc_curve(const ScoreVector& id_scores, const ScoreVector& ood_scores) {
    return roc_curve(std::span<const double>(id_scores), std::span<const double>(ood_scores));
}

struct DetectionReport {
    std::string method;
    std::string ood_set;
    double auroc = 0.0;
    double fpr_at_tpr = 0.0;
    double tpr_target = 0.95;
    std::size_t n_id = 0;
    std::size_t n_ood = 0;
    RocCurve curve;
};

inline DetectionReport evaluate_detection(std::string method, const ScoreVector& id_scores,
                                          const ScoreVector& ood_scores, double tpr_target = 0.95,
                                          std::string ood_set = "ood") {
    DetectionReport r;
    r.method = std::move(method);
    r.ood_set = std::move(ood_set);
    r.auroc = auroc(id_scores, ood_scores);
    r.fpr_at_tpr = fpr_at_tpr(id_scores, ood_scores, tpr_target);
    r.tpr_target = tpr_target;
    r.n_id = id_scores.size();
    r.n_ood = ood_scores.size();
    r.curve = roc_curve(id_scores, ood_scores);
    return r;
}

// JSON schema: {method, ood_set, auroc, fpr_at_95 (or fpr_at_tpr), tpr_target,
// n_id, n_ood, curve: {thresholds, tpr, fpr}}. The +inf threshold is written as null.
inline nlohmann::json to_json(const DetectionReport& r, bool include_curve = true) {
    nlohmann::json j;
    j["method"] = r.method;
    j["ood_set"] = r.ood_set;
    j["auroc"] = r.auroc;
    j["fpr_at_95"] = r.tpr_target == 0.95 ? nlohmann::json(r.fpr_at_tpr) : nlohmann::json(nullptr);
    j["fpr_at_tpr"] = r.fpr_at_tpr;
    j["tpr_target"] = r.tpr_target;
    j["n_id"] = r.n_id;
    j["n_ood"] = r.n_ood;
    if (include_curve) {
        nlohmann::json thresholds = nlohmann::json::array();
        for (double t : r.curve.thresholds)
            thresholds.push_back(std::isfinite(t) ? nlohmann::json(t) : nlohmann::json(nullptr));
        j["curve"] = {{"thresholds", thresholds}, {"tpr", r.curve.tpr}, {"fpr", r.curve.fpr}};
    }
    return j;
}

inline DetectionReport report_from_json(const nlohmann::json& j) {
    DetectionReport r;
    r.method = j.at("method").get<std::string>();
    r.ood_set = j.value("ood_set", std::string("ood"));
    r.auroc = j.at("auroc").get<double>();
    r.fpr_at_tpr = j.at("fpr_at_tpr").get<double>();
    r.tpr_target = j.at("tpr_target").get<double>();
    r.n_id = j.at("n_id").get<std::size_t>();
    r.n_ood = j.at("n_ood").get<std::size_t>();
    if (j.contains("curve")) {
        for (const auto& t : j["curve"]["thresholds"])
            r.curve.thresholds.push_back(t.is_null() ? std::numeric_limits<double>::infinity() : t.get<double>());
        r.curve.tpr = j["curve"]["tpr"].get<std::vector<double>>();
        r.curve.fpr = j["curve"]["fpr"].get<std::vector<double>>();
    }
    return r;
}

inline constexpr const char* kReportCsvHeader = "method,ood_set,auroc,fpr_at_tpr,tpr_target,n_id,n_ood";

inline std::string to_csv_row(const DetectionReport& r) {
    char buf[64];
    std::string row = r.method + "," + r.ood_set;
    for (double v : {r.auroc, r.fpr_at_tpr, r.tpr_target}) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        row += buf;
    }
    row += "," + std::to_string(r.n_id) + "," + std::to_string(r.n_ood);
    return row;
}

}  // namespace oodlens
