// oodlens command-line front end. One subcommand per experiment family.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oodlens/oodlens.hpp"

namespace fs = std::filesystem;
using namespace oodlens;

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    detail::write_atomically(path, text);
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) config_invalid("cannot open config '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        config_invalid("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
}

// Data source shared by the diagnostic subcommands: either OODT bundles in a
// directory, or a synthetic spec generated in memory.
struct DataOptions {
    std::string data_dir;
    std::string synth;
    std::string train = "train";
    std::string heldout = "heldout";
    std::vector<std::string> ood{"ood"};
    std::uint64_t seed = 0;

    void add(CLI::App* app) {
        app->add_option("--data-dir", data_dir, "Directory with <prefix>_{features,logits,labels}.oodt bundles");
        app->add_option("--synth", synth, "Synthetic dataset spec (JSON file) instead of --data-dir");
        app->add_option("--train", train, "Training split prefix")->capture_default_str();
        app->add_option("--heldout", heldout, "Held-out ID split prefix")->capture_default_str();
        app->add_option("--ood", ood, "OOD split prefix(es)")->capture_default_str();
    }

    ExperimentData load() const {
        ExperimentConfig c;
        c.seed = seed;
        if (!synth.empty()) {
            if (!data_dir.empty()) config_invalid("--synth and --data-dir are exclusive");
            c.dataset = synth_spec_from_json(read_json_file(synth), seed);
        } else {
            if (data_dir.empty()) config_invalid("one of --data-dir or --synth is required");
            c.dataset = FileDataset{data_dir, train, heldout, ood};
        }
        return load_data(c);
    }
};

ExperimentFailure classify(const Error& e, const std::string& context) {
    switch (e.code()) {
        case ErrorCode::MagicMismatch:
        case ErrorCode::TruncatedPayload:
        case ErrorCode::NonFiniteValue:
        case ErrorCode::IoFailure:
        case ErrorCode::BadFormat:
        case ErrorCode::ShapeMismatch:
        case ErrorCode::EmptyInput:
            return {FailureKind::DataError, std::string(to_string(e.code())), context, e.what()};
        case ErrorCode::ConfigInvalid:
        case ErrorCode::DegenerateSpec:
            return {FailureKind::ConfigInvalid, std::string(to_string(e.code())), context, e.what()};
        default:
            return {FailureKind::MethodError, std::string(to_string(e.code())), context, e.what()};
    }
}

// ---- subcommands ----

int cmd_eval(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
    json j = read_json_file(config_path);
    if (seed) j["seed"] = *seed;
    if (!out_dir.empty()) j["out_dir"] = out_dir;
    const ExperimentConfig cfg = config_from_json(j);
    const RunManifest m = run_experiment(cfg);
    emit_report(m, cfg.out_dir);
    for (const auto& r : m.reports)
        std::printf("%-16s %-10s auroc=%.4f fpr@%.2f=%.4f\n", r.method.c_str(), r.ood_set.c_str(), r.auroc,
                    r.tpr_target, r.fpr_at_tpr);
    std::printf("reports written to %s\n", cfg.out_dir.string().c_str());
    return 0;
}

int cmd_score(const DataOptions& data, const std::string& method_name, double temperature, double shrinkage,
              long vim_dim, const std::string& ref_split, const std::string& out_dir) {
    json mj{{"name", method_name}};
    const auto& defaults = method_defaults();
    if (defaults.contains(method_name)) {
        const json& d = defaults.at(method_name);
        if (d.contains("temperature")) mj["temperature"] = temperature;
        if (d.contains("shrinkage")) mj["shrinkage"] = shrinkage;
        if (d.contains("dim")) mj["dim"] = vim_dim;
        if (d.contains("ref_split")) mj["ref_split"] = ref_split;
    }
    const MethodSpec method = method_from_json(mj);
    const ExperimentData d = data.load();
    Scorer scorer;
    try {
        scorer = make_scorer(method, d);
    } catch (const Error& e) {
        throw classify(e, method.label);
    }
    auto emit = [&](const std::string& split, const DatasetBundle& b) {
        std::string csv = "row,score\n";
        ScoreVector s;
        try {
            s = scorer(b);
        } catch (const Error& e) {
            throw classify(e, method.label);
        }
        for (std::size_t i = 0; i < s.size(); ++i) csv += std::to_string(i) + "," + fmt(s[i]) + "\n";
        write_text(fs::path(out_dir) / (method.label + "_" + split + ".csv"), csv);
    };
    emit("heldout", d.heldout);
    for (const auto& [name, b] : d.ood) emit(name, b);
    std::printf("scores written to %s\n", out_dir.c_str());
    return 0;
}

std::vector<Eigen::Index> parse_k_grid(const std::vector<long>& ks) {
    if (ks.empty()) return kDefaultKGrid;
    return {ks.begin(), ks.end()};
}

int cmd_decompose(const DataOptions& data, double shrinkage, const std::vector<long>& ks, const std::string& out_dir) {
    const ExperimentData d = data.load();
    ProbeConfig probe;
    probe.seed = data.seed;
    json all = json::array();
    for (const auto& [name, ood] : d.ood) {
        try {
            const auto e = error_decomposition(d.train, d.heldout.features, ood.features, shrinkage, parse_k_grid(ks), probe);
            json j = to_json(e);
            j["ood_set"] = name;
            all.push_back(j);
            std::printf("%s: maha=%.4f maha+pca=%.4f oracle=%.4f (k=%ld)\n", name.c_str(), e.auroc_maha,
                        e.auroc_maha_pca, e.auroc_oracle, static_cast<long>(e.chosen_k));
        } catch (const Error& e) {
            throw classify(e, "decompose:" + name);
        }
    }
    write_text(fs::path(out_dir) / "decomposition.json", (all.size() == 1 ? all[0] : all).dump(2) + "\n");
    return 0;
}

int cmd_transfer(const DataOptions& data, double shrinkage, long k, const std::string& out_dir) {
    const ExperimentData d = data.load();
    std::vector<Matrix> sets;
    for (const auto& [_, b] : d.ood) sets.push_back(b.features);
    Matrix t;
    try {
        t = feature_transfer_matrix(d.train, d.heldout.features, sets, k, shrinkage);
    } catch (const Error& e) {
        throw classify(e, "transfer");
    }
    // Rows: basis fitted on (ID eval + OOD set i). Columns: OOD set j evaluated.
    std::string csv = "basis";
    for (const auto& [name, _] : d.ood) csv += "," + name;
    csv += "\n";
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
        csv += d.ood[static_cast<std::size_t>(i)].first;
        for (Eigen::Index j = 0; j < t.cols(); ++j) csv += "," + fmt(t(i, j));
        csv += "\n";
    }
    write_text(fs::path(out_dir) / "transfer.csv", csv);
    std::fputs(csv.c_str(), stdout);
    return 0;
}

// {"data_dir", "train", "outliers", "architecture": "linear"|"hidden", "hidden_width",
//  "loss": "ce"|"ce_plus_oe", "alpha", "extra_class", "epochs", "batch_size",
//  "outlier_batch_size", "step_size", "seed"}
int cmd_train(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
    const json j = read_json_file(config_path);
    TrainConfig cfg;
    std::string data_dir, train_prefix, outlier_prefix, arch_name;
    long hidden_width = kDefaultHiddenWidth;
    try {
        data_dir = j.at("data_dir").get<std::string>();
        train_prefix = j.value("train", std::string("train"));
        outlier_prefix = j.value("outliers", std::string());
        arch_name = j.value("architecture", std::string("hidden"));
        hidden_width = j.value("hidden_width", hidden_width);
        const auto loss = j.value("loss", std::string("ce"));
        if (loss != "ce" && loss != "ce_plus_oe") config_invalid("loss must be 'ce' or 'ce_plus_oe'");
        cfg.loss = loss == "ce" ? LossKind::Ce : LossKind::CePlusOe;
        cfg.alpha = j.value("alpha", cfg.alpha);
        cfg.extra_class = j.value("extra_class", cfg.extra_class);
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.outlier_batch_size = j.value("outlier_batch_size", cfg.outlier_batch_size);
        cfg.step_size = j.value("step_size", cfg.step_size);
        cfg.seed = j.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
        config_invalid(std::string("train config: ") + e.what());
    }
    if (seed) cfg.seed = *seed;
    if (arch_name != "linear" && arch_name != "hidden") config_invalid("architecture must be 'linear' or 'hidden'");
    DatasetBundle train_b;
    try {
        train_b = load_bundle(data_dir, train_prefix, SplitTag::Train);
        if (!outlier_prefix.empty()) cfg.outliers = load_bundle(data_dir, outlier_prefix, SplitTag::Ood).features;
    } catch (const Error& e) {
        throw classify(e, "dataset");
    }
    if (!train_b.labels) throw ExperimentFailure(FailureKind::DataError, "EmptyInput", "dataset", "training labels missing");
    try {
        validate(cfg);
    } catch (const Error& e) {
        config_invalid(e.what());
    }
    const auto arch = arch_name == "linear" ? Architecture::Linear : Architecture::Hidden;
    try {
        const auto net0 = make_net(arch, train_b.dim(), train_b.num_classes(), cfg.extra_class, hidden_width, cfg.seed);
        const auto result = train(net0, train_b.features, *train_b.labels, cfg);
        const fs::path out(out_dir);
        fs::create_directories(out);
        const Vector p = result.net.parameters();
        save_tensor(from_vector(std::vector<double>(p.data(), p.data() + p.size())), out / "parameters.oodt");
        json meta{{"architecture", arch_name},
                  {"input_dim", result.net.input_dim},
                  {"hidden_width", result.net.hidden_width},
                  {"num_classes", result.net.num_classes},
                  {"extra_class", result.net.extra_class},
                  {"parameter_order", "w1 (column-major), b1, w2 (column-major), b2"},
                  {"config", j}};
        meta["config"]["seed"] = cfg.seed;
        write_text(out / "net.json", meta.dump(2) + "\n");
        std::string csv = "epoch,loss\n";
        for (std::size_t e = 0; e < result.loss_trace.size(); ++e)
            csv += std::to_string(e + 1) + "," + fmt(result.loss_trace[e]) + "\n";
        write_text(out / "loss_trace.csv", csv);
        std::printf("final loss %.6f, train accuracy %.4f\n", result.loss_trace.back(),
                    accuracy(result.net, train_b.features, *train_b.labels));
    } catch (const Error& e) {
        throw classify(e, "train");
    }
    return 0;
}

int cmd_oe_tradeoff(std::uint64_t seed, int seeds, double alpha, const std::string& out_dir) {
    std::string csv = "seed,erm_detection_auroc,oe_detection_auroc,erm_shift_accuracy,oe_shift_accuracy,erm_id_accuracy,oe_id_accuracy\n";
    json runs = json::array();
    int sign_ok = 0;
    for (int s = 0; s < seeds; ++s) {
        OeTradeoffConfig c;
        c.seed = seed + static_cast<std::uint64_t>(s);
        c.alpha = alpha;
        const auto r = oe_tradeoff_experiment(c);
        csv += std::to_string(c.seed) + "," + fmt(r.erm.detection_auroc) + "," + fmt(r.oe.detection_auroc) + "," +
               fmt(r.erm.shift_accuracy) + "," + fmt(r.oe.shift_accuracy) + "," + fmt(r.erm.id_accuracy) + "," +
               fmt(r.oe.id_accuracy) + "\n";
        runs.push_back(to_json(r));
        if (r.oe.detection_auroc >= r.erm.detection_auroc && r.oe.shift_accuracy <= r.erm.shift_accuracy) ++sign_ok;
    }
    write_text(fs::path(out_dir) / "oe_tradeoff.csv", csv);
    write_text(fs::path(out_dir) / "oe_tradeoff.json",
               json{{"runs", runs}, {"seeds_with_expected_sign", sign_ok}, {"seeds", seeds}}.dump(2) + "\n");
    std::fputs(csv.c_str(), stdout);
    std::printf("expected sign in %d of %d seeds\n", sign_ok, seeds);
    return 0;
}

int cmd_kplus1(std::uint64_t seed, const std::string& out_dir) {
    KPlus1Config c;
    c.seed = seed;
    const auto r = kplus1_experiment(c);
    const json j{{"seed", seed},
                 {"near_ood_auroc", r.near_auroc},
                 {"inside_id_ood_auroc", r.inside_auroc},
                 {"id_accuracy", r.id_accuracy}};
    write_text(fs::path(out_dir) / "kplus1.json", j.dump(2) + "\n");
    std::printf("%s\n", j.dump(2).c_str());
    return 0;
}

int cmd_laplace(std::uint64_t seed, std::size_t samples, long resolution, double extent, const std::string& out_dir) {
    ContractionConfig c;
    c.seed = seed;
    c.samples = samples;
    const auto rows = contraction_experiment(c);
    std::string csv = "n,mean_epistemic_ood,mean_epistemic_id,auroc,covariance_trace\n";
    for (const auto& r : rows)
        csv += std::to_string(r.n) + "," + fmt(r.mean_epistemic_ood) + "," + fmt(r.mean_epistemic_id) + "," +
               fmt(r.auroc) + "," + fmt(r.covariance_trace) + "\n";
    write_text(fs::path(out_dir) / "contraction.csv", csv);
    std::fputs(csv.c_str(), stdout);

    // MSP landscape of the largest posterior.
    Rng rng(seed, 61);
    Matrix x;
    std::vector<int> y;
    detail::draw_circle_classes(c, c.n_grid.back(), rng, x, y);
    const auto post = laplace_fit(fit_map(x, y, 3, c.prior_precision), x, c.prior_precision);
    const auto grid = msp_grid(post, x, resolution, extent, std::min<std::size_t>(samples, 500), seed);
    std::string g = "u,v,msp\n";
    for (const auto& p : grid) g += fmt(p.u) + "," + fmt(p.v) + "," + fmt(p.msp) + "\n";
    write_text(fs::path(out_dir) / "msp_grid.csv", g);
    return 0;
}

int cmd_toy1d(std::uint64_t seed, std::size_t n_mc, std::vector<double> mu_grid, const std::string& out_dir) {
    if (mu_grid.empty())
        for (int i = -10; i <= 4; ++i) mu_grid.push_back(i);
    Toy1dConfig c;
    c.seed = seed;
    c.n_mc = n_mc;
    std::string csv = "mu,mean_id_loglik,kl,auroc,auroc_quadrature\n";
    for (const auto& r : toy1d_sweep(c, mu_grid))
        csv += fmt(r.mu) + "," + fmt(r.mean_id_loglik) + "," + fmt(r.kl) + "," + fmt(r.auroc) + "," +
               fmt(r.auroc_quadrature) + "\n";
    write_text(fs::path(out_dir) / "toy1d.csv", csv);
    std::fputs(csv.c_str(), stdout);
    return 0;
}

int cmd_gmm_interp(const DataOptions& data, bool use_data, double shrinkage, const std::string& out_dir) {
    GaussianClassModel base;
    Matrix id_eval, ood;
    if (use_data) {
        const ExperimentData d = data.load();
        if (!d.train.labels) throw ExperimentFailure(FailureKind::DataError, "EmptyInput", "dataset", "training labels missing");
        base = fit_gaussian_class_model(d.train.features, *d.train.labels, shrinkage);
        id_eval = d.heldout.features;
        ood = d.ood.front().second.features;
    } else {
        AnisotropicConfig c;
        c.seed = data.seed;
        const auto inst = make_anisotropic_instance(c);
        base = fit_gaussian_class_model(inst.train, inst.labels, shrinkage);
        id_eval = inst.id_eval;
        ood = inst.ood;
    }
    std::string csv = "t,mean_id_loglik,auroc,maha_auroc\n";
    for (const auto& r : gmm_interp_experiment(base, id_eval, ood))
        csv += fmt(r.t) + "," + fmt(r.mean_id_loglik) + "," + fmt(r.auroc) + "," + fmt(r.maha_auroc) + "\n";
    write_text(fs::path(out_dir) / "gmm_interp.csv", csv);
    std::fputs(csv.c_str(), stdout);
    return 0;
}

int cmd_typicality(std::uint64_t seed, long dim, long n, const std::string& out_dir) {
    if (dim < 1 || n < 1) config_invalid("--dim and --n must be >= 1");
    Rng rng(seed, 81);
    Matrix x(n + 1, dim);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < dim; ++j) x(i, j) = rng.normal();
    x.row(n).setZero();
    const auto norm = typicality_scores(x, TypicalityMode::Norm);
    const auto mean = typicality_scores(x, TypicalityMode::Mean);
    std::string csv = "row,is_origin,norm_score,mean_score\n";
    for (long i = 0; i <= n; ++i)
        csv += std::to_string(i) + "," + (i == n ? "1" : "0") + "," + fmt(norm[i]) + "," + fmt(mean[i]) + "\n";
    write_text(fs::path(out_dir) / "typicality.csv", csv);
    const auto norm_rank = std::count_if(norm.begin(), norm.end(), [&](double v) { return v < norm[n]; });
    const auto mean_rank = std::count_if(mean.begin(), mean.end(), [&](double v) { return v > mean[n]; });
    std::printf("origin: norm-mode points below = %ld, mean-mode points above = %ld (of %ld)\n",
                static_cast<long>(norm_rank), static_cast<long>(mean_rank), n + 1);
    return 0;
}

int cmd_synth(const std::string& spec_path, std::uint64_t seed, const std::string& out_dir) {
    const SynthSpec spec = synth_spec_from_json(read_json_file(spec_path), seed);
    auto [train, heldout, ood] = synth_dataset(spec);
    fs::create_directories(out_dir);
    save_bundle(train, out_dir, "train");
    save_bundle(heldout, out_dir, "heldout");
    save_bundle(ood, out_dir, "ood");
    write_text(fs::path(out_dir) / "synth_spec.json", to_json(spec).dump(2) + "\n");
    std::printf("wrote train/heldout/ood bundles (%ld x %ld) to %s\n", static_cast<long>(train.rows()),
                static_cast<long>(train.dim()), out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"oodlens: OOD-detection scores, metrics and diagnostics"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolkitVersion);

    std::string out_dir = "out";
    std::uint64_t seed = 0;
    std::string config;
    DataOptions data;
    auto seed_opt = [&](CLI::App* s) {
        s->add_option("--seed", seed, "Master seed")->capture_default_str();
        s->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();
    };

    auto* eval = app.add_subcommand(
        "eval",
        "Run a JSON experiment config. Writes reports.json, manifest.json and reports.csv.\n"
        "reports.csv columns: method, ood_set, auroc, fpr_at_tpr, tpr_target, n_id, n_ood\n"
        "(one row per method and OOD set; higher scores mean more in-distribution).");
    eval->add_option("--config", config, "Experiment config (JSON)")->required();
    std::string eval_out;
    std::optional<std::uint64_t> eval_seed;
    eval->add_option("--out-dir", eval_out, "Overrides out_dir from the config");
    eval->add_option("--seed", eval_seed, "Overrides seed from the config");

    std::string method = "msp", ref_split = "train";
    double temperature = 1.0, shrinkage = kDefaultShrinkage;
    long vim_dim = 0;
    auto* score = app.add_subcommand(
        "score", "Score the held-out and OOD splits with one method. CSV columns: row, score (higher = more ID).");
    data.add(score);
    seed_opt(score);
    score->add_option("--method", method,
                      "msp, max_logit, entropy, energy, maha, rel_maha, vim, hybrid_add, typicality_norm, typicality_mean")
        ->capture_default_str();
    score->add_option("--temperature", temperature, "Energy temperature")->capture_default_str();
    score->add_option("--shrinkage", shrinkage, "Covariance shrinkage toward scaled identity")->capture_default_str();
    score->add_option("--vim-dim", vim_dim, "ViM principal subspace dimension (0 = D/2)")->capture_default_str();
    score->add_option("--hybrid-ref-split", ref_split, "Normalization split for hybrid_add: train or heldout")
        ->capture_default_str();

    std::vector<long> k_grid;
    auto* decompose = app.add_subcommand(
        "decompose", "Oracle error decomposition per OOD set. Writes decomposition.json with auroc_maha, "
                     "auroc_maha_pca, auroc_oracle, chosen_k and components.");
    data.add(decompose);
    seed_opt(decompose);
    decompose->add_option("--shrinkage", shrinkage)->capture_default_str();
    decompose->add_option("--k-grid", k_grid, "PCA dimensions to search (default 32 64 128 256)");

    long transfer_k = 8;
    auto* transfer = app.add_subcommand(
        "transfer", "Feature transfer matrix over >= 2 OOD sets. transfer.csv: row = basis set, column = evaluated set.");
    data.add(transfer);
    seed_opt(transfer);
    transfer->add_option("--k", transfer_k, "PCA dimension")->capture_default_str();
    transfer->add_option("--shrinkage", shrinkage)->capture_default_str();

    auto* train_cmd = app.add_subcommand(
        "train", "Train a shallow classifier from a JSON config. Writes parameters.oodt, net.json, loss_trace.csv "
                 "(columns: epoch, loss).");
    train_cmd->add_option("--config", config, "Training config (JSON)")->required();
    std::optional<std::uint64_t> train_seed;
    train_cmd->add_option("--seed", train_seed, "Overrides seed from the config");
    train_cmd->add_option("--out-dir", out_dir)->capture_default_str();

    int n_seeds = 10;
    double alpha = 0.5;
    auto* oe = app.add_subcommand(
        "oe-tradeoff", "Matched-seed ERM vs outlier exposure. oe_tradeoff.csv columns: seed, erm_detection_auroc, "
                       "oe_detection_auroc, erm_shift_accuracy, oe_shift_accuracy, erm_id_accuracy, oe_id_accuracy.");
    seed_opt(oe);
    oe->add_option("--seeds", n_seeds, "Number of consecutive seeds")->capture_default_str();
    oe->add_option("--alpha", alpha, "OE weight")->capture_default_str();

    auto* kp1 = app.add_subcommand("kplus1", "K+1 classifier locality experiment. Writes kplus1.json.");
    seed_opt(kp1);

    std::size_t samples = 2000;
    long resolution = 41;
    double extent = 8.0;
    auto* laplace = app.add_subcommand(
        "laplace-demo", "Laplace posterior contraction. contraction.csv columns: n, mean_epistemic_ood, "
                        "mean_epistemic_id, auroc, covariance_trace. msp_grid.csv columns: u, v, msp.");
    seed_opt(laplace);
    laplace->add_option("--samples", samples, "Monte Carlo draws")->capture_default_str();
    laplace->add_option("--resolution", resolution, "MSP grid points per axis")->capture_default_str();
    laplace->add_option("--extent", extent, "MSP grid half-width")->capture_default_str();

    std::size_t n_mc = 100000;
    std::vector<double> mu_grid;
    auto* toy = app.add_subcommand(
        "toy1d", "1-D Gaussian model sweep. toy1d.csv columns: mu, mean_id_loglik, kl, auroc, auroc_quadrature.");
    seed_opt(toy);
    toy->add_option("--n-mc", n_mc, "Monte Carlo samples per side")->capture_default_str();
    toy->add_option("--mu", mu_grid, "Model means (default -10..4)");

    bool gmm_use_data = false;
    auto* gmm = app.add_subcommand(
        "gmm-interp", "Covariance interpolation toward identity. gmm_interp.csv columns: t, mean_id_loglik, auroc, "
                      "maha_auroc. Uses the built-in anisotropic instance unless --data-dir or --synth is given.");
    data.add(gmm);
    seed_opt(gmm);
    gmm->add_option("--shrinkage", shrinkage)->capture_default_str();

    long typ_dim = 100, typ_n = 10000;
    auto* typ = app.add_subcommand(
        "typicality", "Norm- and mean-mode typicality on standard normal data plus the origin. typicality.csv "
                      "columns: row, is_origin, norm_score, mean_score.");
    seed_opt(typ);
    typ->add_option("--dim", typ_dim)->capture_default_str();
    typ->add_option("--n", typ_n)->capture_default_str();

    std::string spec_path;
    auto* synth = app.add_subcommand("synth", "Generate train/heldout/ood OODT bundles from a synthetic spec (JSON).");
    synth->add_option("--spec", spec_path, "Synthetic spec (JSON)")->required();
    seed_opt(synth);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(FailureKind::ConfigInvalid);
    }

    try {
        data.seed = seed;
        if (*eval) return cmd_eval(config, eval_out, eval_seed);
        if (*score) return cmd_score(data, method, temperature, shrinkage, vim_dim, ref_split, out_dir);
        if (*decompose) return cmd_decompose(data, shrinkage, k_grid, out_dir);
        if (*transfer) return cmd_transfer(data, shrinkage, transfer_k, out_dir);
        if (*train_cmd) return cmd_train(config, out_dir, train_seed);
        if (*oe) return cmd_oe_tradeoff(seed, n_seeds, alpha, out_dir);
        if (*kp1) return cmd_kplus1(seed, out_dir);
        if (*laplace) return cmd_laplace(seed, samples, resolution, extent, out_dir);
        if (*toy) return cmd_toy1d(seed, n_mc, mu_grid, out_dir);
        if (*gmm) {
            gmm_use_data = !data.data_dir.empty() || !data.synth.empty();
            return cmd_gmm_interp(data, gmm_use_data, shrinkage, out_dir);
        }
        if (*typ) return cmd_typicality(seed, typ_dim, typ_n, out_dir);
        if (*synth) return cmd_synth(spec_path, seed, out_dir);
    } catch (const ExperimentFailure& f) {
        std::cerr << f.to_json().dump() << "\n";
        return f.exit_code();
    } catch (const Error& e) {
        const auto f = classify(e, app.get_subcommands().front()->get_name());
        std::cerr << f.to_json().dump() << "\n";
        return f.exit_code();
    } catch (const std::exception& e) {
        const ExperimentFailure f(FailureKind::MethodError, "Internal", "main", e.what());
        std::cerr << f.to_json().dump() << "\n";
        return f.exit_code();
    }
    return 0;
}
