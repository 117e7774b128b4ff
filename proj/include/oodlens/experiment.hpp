#pragma once

// Config-driven experiment runner: dataset -> methods -> detection reports.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "oodlens/detect_metrics.hpp"
#include "oodlens/error.hpp"
#include "oodlens/feature_scores.hpp"
#include "oodlens/generative_toy.hpp"
#include "oodlens/logit_scores.hpp"
#include "oodlens/parallel.hpp"
#include "oodlens/rng.hpp"
#include "oodlens/synth.hpp"
#include "oodlens/tensor_io.hpp"

namespace oodlens {

inline constexpr const char* kToolkitVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

using nlohmann::json;

// Exit codes of the runner and the CLI.
enum class FailureKind { ConfigInvalid = 2, DataError = 3, MethodError = 4 };

constexpr std::string_view to_string(FailureKind k) {
    switch (k) {
        case FailureKind::ConfigInvalid: return "ConfigInvalid";
        case FailureKind::DataError: return "DataError";
        case FailureKind::MethodError: return "MethodError";
    }
    return "?";
}

class ExperimentFailure : public std::runtime_error {
public:
    ExperimentFailure(FailureKind kind, std::string code, std::string context, const std::string& message)
        : std::runtime_error(message), kind_(kind), code_(std::move(code)), context_(std::move(context)) {}

    FailureKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

    json to_json() const {
        return {{"error", {{"kind", std::string(to_string(kind_))},
                           {"code", code_},
                           {"context", context_},
                           {"message", what()},
                           {"exit_code", exit_code()}}}};
    }

private:
    FailureKind kind_;
    std::string code_;
    std::string context_;
};

[[noreturn]] inline void config_invalid(const std::string& msg) {
    throw ExperimentFailure(FailureKind::ConfigInvalid, "ConfigInvalid", "config", msg);
}

// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- synthetic dataset specs in JSON ----

// {"n_per_class", "dim", "class_means": [[...]] | ("num_classes", "mean_scale"),
//  "cov": {"kind": "identity"} | {"kind": "diagonal", "variances": [...]} |
//         {"kind": "planted", "signal_dims", "signal_gap", "noise_scale"},
//  "ood_shift": [...] (optional), "seed" (optional)}
inline SynthSpec synth_spec_from_json(const json& j, std::uint64_t default_seed) {
    try {
        SynthSpec s;
        s.n_per_class = j.at("n_per_class").get<std::size_t>();
        s.dim = j.at("dim").get<std::size_t>();
        s.seed = j.value("seed", default_seed);
        const auto d = static_cast<Eigen::Index>(s.dim);
        if (j.contains("class_means")) {
            const auto rows = j["class_means"].get<std::vector<std::vector<double>>>();
            s.class_means.resize(static_cast<Eigen::Index>(rows.size()), d);
            for (std::size_t c = 0; c < rows.size(); ++c) {
                if (rows[c].size() != s.dim) config_invalid("class_means rows must have dim entries");
                for (std::size_t k = 0; k < s.dim; ++k) s.class_means(c, k) = rows[c][k];
            }
        } else {
            s.class_means = axis_class_means(j.at("num_classes").get<Eigen::Index>(), d, j.value("mean_scale", 3.0));
        }
        const json cov = j.value("cov", json{{"kind", "identity"}});
        const auto kind = cov.at("kind").get<std::string>();
        if (kind == "identity") {
            s.cov = IdentityCov{};
        } else if (kind == "diagonal") {
            s.cov = DiagonalCov{cov.at("variances").get<std::vector<double>>()};
        } else if (kind == "planted") {
            s.cov = PlantedCov{cov.at("signal_dims").get<std::size_t>(), cov.at("signal_gap").get<double>(),
                               cov.value("noise_scale", 1.0)};
        } else {
            config_invalid("unknown cov kind '" + kind + "'");
        }
        if (j.contains("ood_shift")) {
            const auto v = j["ood_shift"].get<std::vector<double>>();
            s.ood_shift = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
        }
        validate(s);
        return s;
    } catch (const json::exception& e) {
        config_invalid(std::string("synth spec: ") + e.what());
    } catch (const Error& e) {
        config_invalid(std::string("synth spec: ") + e.what());
    }
}

inline json to_json(const SynthSpec& s) {
    json j;
    j["n_per_class"] = s.n_per_class;
    j["dim"] = s.dim;
    j["seed"] = s.seed;
    std::vector<std::vector<double>> means;
    for (Eigen::Index c = 0; c < s.class_means.rows(); ++c) {
        const Vector row = s.class_means.row(c).transpose();
        means.emplace_back(row.data(), row.data() + row.size());
    }
    j["class_means"] = means;
    std::visit(
        [&](const auto& cov) {
            using T = std::decay_t<decltype(cov)>;
            if constexpr (std::is_same_v<T, IdentityCov>) {
                j["cov"] = {{"kind", "identity"}};
            } else if constexpr (std::is_same_v<T, DiagonalCov>) {
                j["cov"] = {{"kind", "diagonal"}, {"variances", cov.variances}};
            } else {
                j["cov"] = {{"kind", "planted"},
                            {"signal_dims", cov.signal_dims},
                            {"signal_gap", cov.signal_gap},
                            {"noise_scale", cov.noise_scale}};
            }
        },
        s.cov);
    if (s.ood_shift) j["ood_shift"] = std::vector<double>(s.ood_shift->data(), s.ood_shift->data() + s.ood_shift->size());
    return j;
}

// ---- methods ----

struct MethodSpec {
    std::string name;
    std::string label;  // report name; defaults to name
    json options;       // resolved, defaults filled in
};

inline const std::map<std::string, json>& method_defaults() {
    static const std::map<std::string, json> defaults{
        {"msp", json::object()},
        {"max_logit", json::object()},
        {"entropy", json::object()},
        {"energy", {{"temperature", 1.0}}},
        {"maha", {{"shrinkage", kDefaultShrinkage}}},
        {"rel_maha", {{"shrinkage", kDefaultShrinkage}}},
        {"vim", {{"dim", 0}}},  // 0 = D/2
        {"hybrid_add", {{"shrinkage", kDefaultShrinkage}, {"ref_split", "train"}}},
        {"typicality_norm", json::object()},
        {"typicality_mean", json::object()},
    };
    return defaults;
}

inline MethodSpec method_from_json(const json& j) {
    MethodSpec m;
    if (j.is_string()) {
        m.name = j.get<std::string>();
    } else if (j.is_object() && j.contains("name") && j["name"].is_string()) {
        m.name = j["name"].get<std::string>();
    } else {
        config_invalid("each method must be a name or an object with a 'name'");
    }
    const auto& defaults = method_defaults();
    const auto it = defaults.find(m.name);
    if (it == defaults.end()) config_invalid("unknown method '" + m.name + "'");
    m.label = j.is_object() ? j.value("label", m.name) : m.name;
    m.options = it->second;
    if (j.is_object()) {
        for (const auto& [key, value] : j.items()) {
            if (key == "name" || key == "label") continue;
            if (!m.options.contains(key)) config_invalid("method '" + m.name + "' has no option '" + key + "'");
            if (value.type() != m.options[key].type() &&
                !(value.is_number() && m.options[key].is_number()))
                config_invalid("option '" + key + "' of method '" + m.name + "' has the wrong type");
            m.options[key] = value;
        }
    }
    if (m.options.contains("temperature") && !(m.options["temperature"].get<double>() > 0.0))
        config_invalid("energy temperature must be > 0");
    if (m.options.contains("shrinkage")) {
        const double l = m.options["shrinkage"].get<double>();
        if (!(l >= 0.0 && l <= 1.0)) config_invalid("shrinkage must lie in [0, 1]");
    }
    if (m.options.contains("dim") && m.options["dim"].get<long long>() < 0) config_invalid("vim dim must be >= 0");
    if (m.options.contains("ref_split")) {
        const auto r = m.options["ref_split"].get<std::string>();
        if (r != "train" && r != "heldout") config_invalid("ref_split must be 'train' or 'heldout'");
    }
    return m;
}

// ---- config ----

struct FileDataset {
    std::filesystem::path dir;
    std::string train = "train";
    std::string heldout = "heldout";
    std::vector<std::string> ood{"ood"};
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::variant<SynthSpec, FileDataset> dataset;
    std::vector<MethodSpec> methods;
    double tpr_target = 0.95;
    bool include_curve = true;
    std::filesystem::path out_dir = "out";
    json canonical;  // resolved config without out_dir; hashed
};

inline ExperimentConfig config_from_json(const json& j) {
    if (!j.is_object()) config_invalid("config must be a JSON object");
    static const std::set<std::string> known{"schema_version", "seed", "dataset", "methods", "metrics", "out_dir"};
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) config_invalid("unknown config key '" + key + "'");
    if (j.value("schema_version", kSchemaVersion) != kSchemaVersion) config_invalid("unsupported schema_version");
    ExperimentConfig c;
    try {
        c.seed = j.value("seed", std::uint64_t{0});
        c.out_dir = j.value("out_dir", std::string("out"));
        const json metrics = j.value("metrics", json::object());
        c.tpr_target = metrics.value("tpr_target", 0.95);
        c.include_curve = metrics.value("curve", true);
    } catch (const json::exception& e) {
        config_invalid(e.what());
    }
    if (!(c.tpr_target > 0.0 && c.tpr_target <= 1.0)) config_invalid("tpr_target must lie in (0, 1]");

    if (!j.contains("dataset") || !j["dataset"].is_object()) config_invalid("missing 'dataset' object");
    const json& ds = j["dataset"];
    json ds_canonical;
    if (ds.contains("synth")) {
        const SynthSpec spec = synth_spec_from_json(ds["synth"], c.seed);
        ds_canonical = {{"synth", to_json(spec)}};
        c.dataset = spec;
    } else if (ds.contains("files")) {
        try {
            const json& f = ds["files"];
            FileDataset fd;
            fd.dir = f.at("dir").get<std::string>();
            fd.train = f.value("train", fd.train);
            fd.heldout = f.value("heldout", fd.heldout);
            if (f.contains("ood"))
                fd.ood = f["ood"].is_string() ? std::vector<std::string>{f["ood"].get<std::string>()}
                                              : f["ood"].get<std::vector<std::string>>();
            if (fd.ood.empty()) config_invalid("files dataset needs at least one ood prefix");
            ds_canonical = {{"files", {{"dir", fd.dir.string()}, {"train", fd.train}, {"heldout", fd.heldout}, {"ood", fd.ood}}}};
            c.dataset = fd;
        } catch (const json::exception& e) {
            config_invalid(std::string("files dataset: ") + e.what());
        }
    } else {
        config_invalid("dataset must contain 'synth' or 'files'");
    }

    const json methods = j.value("methods", json::array());
    if (!methods.is_array()) config_invalid("'methods' must be an array");
    std::set<std::string> labels;
    json methods_canonical = json::array();
    for (const auto& m : methods) {
        c.methods.push_back(method_from_json(m));
        if (!labels.insert(c.methods.back().label).second)
            config_invalid("duplicate method label '" + c.methods.back().label + "'");
        json mc = c.methods.back().options;
        mc["name"] = c.methods.back().name;
        mc["label"] = c.methods.back().label;
        methods_canonical.push_back(mc);
    }
    c.canonical = {{"schema_version", kSchemaVersion},
                   {"seed", c.seed},
                   {"dataset", ds_canonical},
                   {"methods", methods_canonical},
                   {"metrics", {{"tpr_target", c.tpr_target}, {"curve", c.include_curve}}}};
    return c;
}

inline std::string config_hash(const ExperimentConfig& c) {
    return "fnv1a64:" + fnv1a_hex(c.canonical.dump());
}

// ---- data ----

struct ExperimentData {
    DatasetBundle train;
    DatasetBundle heldout;
    std::vector<std::pair<std::string, DatasetBundle>> ood;
};

inline ExperimentData load_data(const ExperimentConfig& c) {
    try {
        ExperimentData d;
        if (const auto* spec = std::get_if<SynthSpec>(&c.dataset)) {
            auto [train, heldout, ood] = synth_dataset(*spec);
            d.train = std::move(train);
            d.heldout = std::move(heldout);
            d.ood.emplace_back("ood", std::move(ood));
        } else {
            const auto& f = std::get<FileDataset>(c.dataset);
            d.train = load_bundle(f.dir, f.train, SplitTag::Train);
            d.heldout = load_bundle(f.dir, f.heldout, SplitTag::Heldout);
            for (const auto& name : f.ood) d.ood.emplace_back(name, load_bundle(f.dir, name, SplitTag::Ood));
        }
        require(d.train.rows() > 0 && d.heldout.rows() > 0, ErrorCode::EmptyInput, "empty ID split");
        for (const auto& [name, b] : d.ood) {
            require(b.rows() > 0, ErrorCode::EmptyInput, "empty ood set '" + name + "'");
            require(b.dim() == d.train.dim() && d.heldout.dim() == d.train.dim(), ErrorCode::ShapeMismatch,
                    "feature widths differ between splits");
        }
        return d;
    } catch (const Error& e) {
        throw ExperimentFailure(FailureKind::DataError, std::string(to_string(e.code())), "dataset", e.what());
    }
}

// ---- scoring ----

inline const Matrix& need_logits(const DatasetBundle& b, const std::string& method) {
    require(b.logits.has_value(), ErrorCode::InvalidArgument, method + " needs logits");
    return *b.logits;
}

inline const std::vector<int>& need_labels(const DatasetBundle& b, const std::string& method) {
    require(b.labels.has_value(), ErrorCode::InvalidArgument, method + " needs training labels");
    return *b.labels;
}

// A fitted method: scores any bundle.
using Scorer = std::function<ScoreVector(const DatasetBundle&)>;

inline Scorer make_scorer(const MethodSpec& m, const ExperimentData& d) {
    const std::string& n = m.name;
    if (n == "msp") return [n](const DatasetBundle& b) { return msp(need_logits(b, n)); };
    if (n == "max_logit") return [n](const DatasetBundle& b) { return max_logit(need_logits(b, n)); };
    if (n == "entropy") return [n](const DatasetBundle& b) { return entropy_score(need_logits(b, n)); };
    if (n == "energy") {
        const double t = m.options["temperature"].get<double>();
        return [n, t](const DatasetBundle& b) { return energy_score(need_logits(b, n), t); };
    }
    if (n == "typicality_norm")
        return [](const DatasetBundle& b) { return typicality_scores(b.features, TypicalityMode::Norm); };
    if (n == "typicality_mean")
        return [](const DatasetBundle& b) { return typicality_scores(b.features, TypicalityMode::Mean); };
    if (n == "maha" || n == "rel_maha" || n == "hybrid_add") {
        auto model = std::make_shared<GaussianClassModel>(
            fit_gaussian_class_model(d.train.features, need_labels(d.train, n), m.options["shrinkage"].get<double>()));
        if (n == "maha") return [model](const DatasetBundle& b) { return maha_score(*model, b.features); };
        if (n == "rel_maha") return [model](const DatasetBundle& b) { return rel_maha_score(*model, b.features); };
        const DatasetBundle& ref = m.options["ref_split"] == "train" ? d.train : d.heldout;
        const auto norm = fit_hybrid_normalizer(maha_score(*model, ref.features), msp(need_logits(ref, n)));
        return [model, norm, n](const DatasetBundle& b) {
            return hybrid_add(maha_score(*model, b.features), msp(need_logits(b, n)), norm);
        };
    }
    if (n == "vim") {
        Eigen::Index dim = m.options["dim"].get<Eigen::Index>();
        if (dim == 0) dim = std::max<Eigen::Index>(1, d.train.dim() / 2);
        auto vim = std::make_shared<VimModel>(fit_vim(d.train.features, need_logits(d.train, n), dim));
        return [vim, n](const DatasetBundle& b) { return vim_score(*vim, b.features, need_logits(b, n)); };
    }
    fail(ErrorCode::InvalidArgument, "unknown method '" + n + "'");
}

// ---- manifest ----

struct StageTiming {
    std::string stage;
    double milliseconds = 0.0;
};

struct RunManifest {
    std::string toolkit_version = kToolkitVersion;
    std::string config_hash;
    std::string rng_algorithm = std::string(kRngAlgorithm);
    std::uint64_t seed = 0;
    json config;  // resolved config, every default echoed
    std::vector<DetectionReport> reports;
    std::vector<StageTiming> timings;
    bool include_curve = true;
};

// Deterministic part: no wall-clock fields.
inline json reports_json(const RunManifest& m) {
    json reports = json::array();
    for (const auto& r : m.reports) reports.push_back(to_json(r, m.include_curve));
    return {{"schema_version", kSchemaVersion},
            {"toolkit_version", m.toolkit_version},
            {"config_hash", m.config_hash},
            {"reports", reports}};
}

inline json to_json(const RunManifest& m) {
    json j = reports_json(m);
    j["rng"] = {{"algorithm", m.rng_algorithm}, {"seed", m.seed}};
    j["config"] = m.config;
    json t = json::array();
    for (const auto& s : m.timings) t.push_back({{"stage", s.stage}, {"ms", s.milliseconds}});
    j["timings"] = t;
    return j;
}

inline RunManifest manifest_from_json(const json& j) {
    RunManifest m;
    m.toolkit_version = j.at("toolkit_version").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.rng_algorithm = j.at("rng").at("algorithm").get<std::string>();
    m.seed = j.at("rng").at("seed").get<std::uint64_t>();
    m.config = j.at("config");
    m.include_curve = m.config.at("metrics").value("curve", true);
    for (const auto& r : j.at("reports")) m.reports.push_back(report_from_json(r));
    for (const auto& t : j.at("timings")) m.timings.push_back({t.at("stage").get<std::string>(), t.at("ms").get<double>()});
    return m;
}

// Columns: method, ood_set, auroc, fpr_at_tpr, tpr_target, n_id, n_ood. One row per (method, ood set).
inline std::string reports_csv(const RunManifest& m) {
    std::string out = std::string(kReportCsvHeader) + "\n";
    for (const auto& r : m.reports) out += to_csv_row(r) + "\n";
    return out;
}

// Writes reports.json, reports.csv and manifest.json, each atomically.
inline void emit_report(const RunManifest& m, const std::filesystem::path& out_dir) {
    try {
        std::filesystem::create_directories(out_dir);
        detail::write_atomically(out_dir / "reports.json", reports_json(m).dump(2) + "\n");
        detail::write_atomically(out_dir / "reports.csv", reports_csv(m));
        detail::write_atomically(out_dir / "manifest.json", to_json(m).dump(2) + "\n");
    } catch (const std::filesystem::filesystem_error& e) {
        fail(ErrorCode::IoFailure, e.what());
    }
}

inline RunManifest run_experiment(const ExperimentConfig& c) {
    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };
    RunManifest m;
    m.config_hash = config_hash(c);
    m.seed = c.seed;
    m.config = c.canonical;
    m.include_curve = c.include_curve;

    auto t0 = clock::now();
    const ExperimentData data = load_data(c);
    m.timings.push_back({"load_data", ms_since(t0)});

    // One slot per method; slots are filled in parallel and assembled in config order.
    struct Slot {
        std::vector<DetectionReport> reports;
        double ms = 0.0;
        std::optional<ExperimentFailure> failure;
    };
    std::vector<Slot> slots(c.methods.size());
    parallel_for(c.methods.size(), [&](std::size_t i) {
        const auto& method = c.methods[i];
        const auto start = clock::now();
        try {
            const Scorer score = make_scorer(method, data);
            const ScoreVector id = score(data.heldout);
            for (const auto& [name, ood] : data.ood) {
                auto r = evaluate_detection(method.label, id, score(ood), c.tpr_target, name);
                if (!c.include_curve) r.curve = {};
                slots[i].reports.push_back(std::move(r));
            }
        } catch (const Error& e) {
            slots[i].failure.emplace(FailureKind::MethodError, std::string(to_string(e.code())), method.label, e.what());
        }
        slots[i].ms = ms_since(start);
    });
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].failure) throw *slots[i].failure;
        for (auto& r : slots[i].reports) m.reports.push_back(std::move(r));
        m.timings.push_back({"method:" + c.methods[i].label, slots[i].ms});
    }
    return m;
}

}  // namespace oodlens
