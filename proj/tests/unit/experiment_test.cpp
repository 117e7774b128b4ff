#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "../support/oracles.hpp"
#include "oodlens/experiment.hpp"

using namespace oodlens;
namespace fs = std::filesystem;

namespace {

json synth_config(const fs::path& out) {
    return {{"seed", 3},
            {"dataset",
             {{"synth",
               {{"n_per_class", 150},
                {"dim", 8},
                {"num_classes", 2},
                {"cov", {{"kind", "planted"}, {"signal_dims", 8}, {"signal_gap", 2.0}, {"noise_scale", 1.0}}}}}}},
            {"methods", {"msp", "energy", {{"name", "maha"}, {"shrinkage", 0.01}}, "rel_maha", "vim", "hybrid_add",
                         "typicality_norm"}},
            {"metrics", {{"tpr_target", 0.95}, {"curve", false}}},
            {"out_dir", out.string()}};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

struct CliResult {
    int code = -1;
    std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
    const fs::path err = scratch / "stderr.txt";
    const std::string cmd = std::string(OODLENS_CLI_PATH) + " " + args + " > " + (scratch / "stdout.txt").string() +
                            " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream(p) << j.dump(2);
}

std::optional<FailureKind> failure_of(auto&& fn) {
    try {
        fn();
    } catch (const ExperimentFailure& f) {
        return f.kind();
    }
    return std::nullopt;
}

}  // namespace

TEST(Experiment, RunsEveryMethodInConfigOrder) {
    const auto dir = oracle::scratch_dir("exp_order");
    const auto cfg = config_from_json(synth_config(dir / "out"));
    const auto m = run_experiment(cfg);
    ASSERT_EQ(m.reports.size(), 7u);
    EXPECT_EQ(m.reports[0].method, "msp");
    EXPECT_EQ(m.reports[2].method, "maha");
    EXPECT_EQ(m.reports[6].method, "typicality_norm");
    for (const auto& r : m.reports) {
        EXPECT_EQ(r.ood_set, "ood");
        EXPECT_EQ(r.n_id, 300u);
        EXPECT_TRUE(r.curve.tpr.empty());
    }
    // All eight dims carry the planted shift, which Mahalanobis sees directly.
    EXPECT_GE(m.reports[2].auroc, 0.95);
}

TEST(Experiment, ResolvedConfigEchoesDefaults) {
    const auto cfg = config_from_json(synth_config("x"));
    const json& methods = cfg.canonical["methods"];
    EXPECT_EQ(methods[1]["temperature"].get<double>(), 1.0);
    EXPECT_EQ(methods[2]["shrinkage"].get<double>(), 0.01);
    EXPECT_EQ(methods[5]["ref_split"].get<std::string>(), "train");
    EXPECT_EQ(cfg.canonical["dataset"]["synth"]["seed"].get<int>(), 3);
    EXPECT_FALSE(cfg.canonical.contains("out_dir"));
    // The hash ignores where output goes but not what is computed.
    EXPECT_EQ(config_hash(cfg), config_hash(config_from_json(synth_config("elsewhere"))));
    auto j = synth_config("x");
    j["seed"] = 4;
    EXPECT_NE(config_hash(cfg), config_hash(config_from_json(j)));
    EXPECT_EQ(config_hash(cfg).rfind("fnv1a64:", 0), 0u);
}

TEST(Experiment, FnvReferenceValues) {
    EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
    EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Experiment, ConfigErrors) {
    auto bad = [](auto mutate) {
        json j = synth_config("x");
        mutate(j);
        return failure_of([&] { config_from_json(j); });
    };
    EXPECT_EQ(bad([](json& j) { j["bogus"] = 1; }), FailureKind::ConfigInvalid);
    EXPECT_EQ(bad([](json& j) { j["methods"] = {"nope"}; }), FailureKind::ConfigInvalid);
    EXPECT_EQ(bad([](json& j) { j["methods"] = {{{"name", "energy"}, {"temperature", 0}}}; }),
              FailureKind::ConfigInvalid);
    EXPECT_EQ(bad([](json& j) { j["methods"] = {{{"name", "msp"}, {"temperature", 2}}}; }),
              FailureKind::ConfigInvalid);
    EXPECT_EQ(bad([](json& j) { j["methods"] = {"msp", "msp"}; }), FailureKind::ConfigInvalid);
    EXPECT_EQ(bad([](json& j) { j["metrics"]["tpr_target"] = 0; }), FailureKind::ConfigInvalid);
    EXPECT_EQ(bad([](json& j) { j["dataset"]["synth"]["dim"] = 1; }), FailureKind::ConfigInvalid);
    EXPECT_EQ(bad([](json& j) { j["dataset"] = json::object(); }), FailureKind::ConfigInvalid);
    EXPECT_EQ(bad([](json& j) { j["methods"] = {{{"name", "maha"}, {"shrinkage", "big"}}}; }),
              FailureKind::ConfigInvalid);
    EXPECT_FALSE(bad([](json&) {}));
}

TEST(Experiment, MissingFilesAreDataErrors) {
    json j = synth_config("x");
    j["dataset"] = {{"files", {{"dir", "/nonexistent_dir_oodlens"}, {"ood", "far"}}}};
    const auto cfg = config_from_json(j);
    EXPECT_EQ(failure_of([&] { run_experiment(cfg); }), FailureKind::DataError);
}

TEST(Experiment, MethodFailureNamesTheMethod) {
    const auto dir = oracle::scratch_dir("exp_method_fail");
    // Bundles without logits: msp cannot run.
    DatasetBundle b;
    b.features = Matrix::Random(10, 3);
    b.labels = std::vector<int>{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    save_bundle(b, dir, "train");
    save_bundle(b, dir, "heldout");
    DatasetBundle o;
    o.split = SplitTag::Ood;
    o.features = Matrix::Random(6, 3);
    save_bundle(o, dir, "ood");
    json j = synth_config("x");
    j["dataset"] = {{"files", {{"dir", dir.string()}, {"ood", {"ood"}}}}};
    j["methods"] = {"typicality_mean", "msp"};
    try {
        run_experiment(config_from_json(j));
        FAIL() << "expected a method error";
    } catch (const ExperimentFailure& f) {
        EXPECT_EQ(f.kind(), FailureKind::MethodError);
        EXPECT_EQ(f.exit_code(), 4);
        EXPECT_EQ(f.to_json()["error"]["context"], "msp");
    }
}

TEST(Experiment, EmptyMethodListWritesHeaderOnly) {
    const auto dir = oracle::scratch_dir("exp_empty");
    json j = synth_config(dir / "out");
    j["methods"] = json::array();
    const auto cfg = config_from_json(j);
    const auto m = run_experiment(cfg);
    emit_report(m, cfg.out_dir);
    EXPECT_EQ(slurp(dir / "out" / "reports.csv"), std::string(kReportCsvHeader) + "\n");
    EXPECT_TRUE(json::parse(slurp(dir / "out" / "reports.json"))["reports"].empty());
}

TEST(Experiment, ReportsAreDeterministicAndRoundTrip) {
    const auto dir = oracle::scratch_dir("exp_determinism");
    const auto cfg = config_from_json(synth_config(dir / "a"));
    const auto m1 = run_experiment(cfg);
    emit_report(m1, dir / "a");
    emit_report(run_experiment(cfg), dir / "b");
    EXPECT_EQ(slurp(dir / "a" / "reports.json"), slurp(dir / "b" / "reports.json"));
    EXPECT_EQ(slurp(dir / "a" / "reports.csv"), slurp(dir / "b" / "reports.csv"));

    const std::string csv = slurp(dir / "a" / "reports.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);

    const auto back = manifest_from_json(json::parse(slurp(dir / "a" / "manifest.json")));
    EXPECT_EQ(back.config_hash, m1.config_hash);
    EXPECT_EQ(back.seed, 3u);
    EXPECT_EQ(back.toolkit_version, kToolkitVersion);
    ASSERT_EQ(back.reports.size(), m1.reports.size());
    for (std::size_t i = 0; i < back.reports.size(); ++i) EXPECT_EQ(back.reports[i].auroc, m1.reports[i].auroc);
    EXPECT_EQ(back.config, cfg.canonical);
    EXPECT_FALSE(back.timings.empty());
}

TEST(Cli, EvalWritesReports) {
    const auto dir = oracle::scratch_dir("cli_eval");
    write_json(dir / "cfg.json", synth_config(dir / "out"));
    const auto r = run_cli("eval --config " + (dir / "cfg.json").string(), dir);
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "out" / "reports.json"));
    EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
}

TEST(Cli, ExitCodesByFailureClass) {
    const auto dir = oracle::scratch_dir("cli_exit");
    EXPECT_EQ(run_cli("eval --config " + (dir / "missing.json").string(), dir).code, 2);
    EXPECT_EQ(run_cli("eval", dir).code, 2);
    EXPECT_EQ(run_cli("no-such-command", dir).code, 2);

    json j = synth_config(dir / "out");
    j["dataset"] = {{"files", {{"dir", "/nonexistent_dir_oodlens"}, {"ood", "far"}}}};
    write_json(dir / "data.json", j);
    const auto data = run_cli("eval --config " + (dir / "data.json").string(), dir);
    EXPECT_EQ(data.code, 3);
    const auto err = json::parse(data.err);
    EXPECT_EQ(err["error"]["kind"], "DataError");
    EXPECT_EQ(err["error"]["exit_code"], 3);

    std::ofstream(dir / "garbage.json") << "{not json";
    EXPECT_EQ(run_cli("eval --config " + (dir / "garbage.json").string(), dir).code, 2);
}

TEST(Cli, MethodErrorExitCode) {
    const auto dir = oracle::scratch_dir("cli_method");
    DatasetBundle b;
    b.features = Matrix::Random(10, 3);
    b.labels = std::vector<int>{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    save_bundle(b, dir, "train");
    save_bundle(b, dir, "heldout");
    DatasetBundle o;
    o.split = SplitTag::Ood;
    o.features = Matrix::Random(6, 3);
    save_bundle(o, dir, "ood");
    const auto r = run_cli("score --method msp --data-dir " + dir.string() + " --out-dir " + (dir / "s").string(), dir);
    EXPECT_EQ(r.code, 4) << r.err;
    const auto ok = run_cli("score --method maha --data-dir " + dir.string() + " --out-dir " + (dir / "s").string(), dir);
    EXPECT_EQ(ok.code, 0) << ok.err;
    const std::string csv = slurp(dir / "s" / "maha_ood.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Cli, SynthThenEvalFromFiles) {
    const auto dir = oracle::scratch_dir("cli_synth");
    write_json(dir / "spec.json", synth_config("x")["dataset"]["synth"]);
    ASSERT_EQ(run_cli("synth --seed 3 --spec " + (dir / "spec.json").string() + " --out-dir " + (dir / "data").string(), dir).code,
              0);
    for (const char* f : {"train_features.oodt", "train_logits.oodt", "train_labels.oodt", "ood_features.oodt"})
        EXPECT_TRUE(fs::exists(dir / "data" / f)) << f;

    json j = synth_config(dir / "out");
    j["dataset"] = {{"files", {{"dir", (dir / "data").string()}, {"ood", "ood"}}}};
    const auto from_files = run_experiment(config_from_json(j));
    const auto in_memory = run_experiment(config_from_json(synth_config("x")));
    ASSERT_EQ(from_files.reports.size(), in_memory.reports.size());
    for (std::size_t i = 0; i < in_memory.reports.size(); ++i)
        EXPECT_EQ(from_files.reports[i].auroc, in_memory.reports[i].auroc) << in_memory.reports[i].method;
}

TEST(Cli, ToyAndTypicalityOutputs) {
    const auto dir = oracle::scratch_dir("cli_toy");
    ASSERT_EQ(run_cli("toy1d --n-mc 2000 --mu 0 --mu 1 --out-dir " + dir.string(), dir).code, 0);
    const std::string csv = slurp(dir / "toy1d.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    ASSERT_EQ(run_cli("typicality --dim 16 --n 200 --out-dir " + dir.string(), dir).code, 0);
    EXPECT_TRUE(fs::exists(dir / "typicality.csv"));
}
