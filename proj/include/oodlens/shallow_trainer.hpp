#pragma once

// Small deterministic classifiers for the outlier-exposure and K+1 class
// experiments. Gradients are analytic; plain fixed-step mini-batch SGD.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oodlens/detect_metrics.hpp"
#include "oodlens/error.hpp"
#include "oodlens/logit_scores.hpp"
#include "oodlens/rng.hpp"
#include "oodlens/tensor_io.hpp"
#include "oodlens/types.hpp"

namespace oodlens {

enum class Architecture { Linear, Hidden };

inline constexpr Eigen::Index kDefaultHiddenWidth = 64;

// logits = W2 tanh(W1 x + b1) + b2, or W2 x + b2 for the linear head.
struct ShallowNet {
    Architecture arch = Architecture::Linear;
    Eigen::Index input_dim = 0;
    Eigen::Index hidden_width = 0;
    Eigen::Index num_classes = 0;  // includes the extra class when present
    bool extra_class = false;
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;

    Eigen::Index num_parameters() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

    // Order: w1 (column-major), b1, w2 (column-major), b2.
    Vector parameters() const {
        Vector p(num_parameters());
        Eigen::Index o = 0;
        p.segment(o, w1.size()) = w1.reshaped();
        o += w1.size();
        p.segment(o, b1.size()) = b1;
        o += b1.size();
        p.segment(o, w2.size()) = w2.reshaped();
        o += w2.size();
        p.segment(o, b2.size()) = b2;
        return p;
    }

    void set_parameters(const Vector& p) {
        require(p.size() == num_parameters(), ErrorCode::ShapeMismatch, "parameter vector length mismatch");
        Eigen::Index o = 0;
        w1 = p.segment(o, w1.size()).reshaped(w1.rows(), w1.cols());
        o += w1.size();
        b1 = p.segment(o, b1.size());
        o += b1.size();
        w2 = p.segment(o, w2.size()).reshaped(w2.rows(), w2.cols());
        o += w2.size();
        b2 = p.segment(o, b2.size());
    }

    Matrix hidden(const Matrix& x) const {
        return ((x * w1.transpose()).rowwise() + b1.transpose()).array().tanh().matrix();
    }

    Matrix logits(const Matrix& x) const {
        require(x.cols() == input_dim, ErrorCode::ShapeMismatch, "input dim mismatch");
        if (arch == Architecture::Linear) return (x * w2.transpose()).rowwise() + b2.transpose();
        return (hidden(x) * w2.transpose()).rowwise() + b2.transpose();
    }

    Eigen::Index id_classes() const { return extra_class ? num_classes - 1 : num_classes; }
};

// Weights ~ N(0, 1 / fan_in), biases 0.
inline ShallowNet make_net(Architecture arch, Eigen::Index input_dim, Eigen::Index id_classes, bool extra_class,
                           Eigen::Index hidden_width, std::uint64_t seed) {
    require(input_dim >= 1 && id_classes >= 2, ErrorCode::InvalidArgument, "need input_dim >= 1 and >= 2 classes");
    ShallowNet net;
    net.arch = arch;
    net.input_dim = input_dim;
    net.extra_class = extra_class;
    net.num_classes = id_classes + (extra_class ? 1 : 0);
    Rng rng(seed, 0);
    auto init = [&rng](Eigen::Index rows, Eigen::Index cols) {
        Matrix m(rows, cols);
        const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
        return m;
    };
    if (arch == Architecture::Hidden) {
        require(hidden_width >= 1, ErrorCode::InvalidArgument, "hidden width must be >= 1");
        net.hidden_width = hidden_width;
        net.w1 = init(hidden_width, input_dim);
        net.b1 = Vector::Zero(hidden_width);
        net.w2 = init(net.num_classes, hidden_width);
    } else {
        net.w1.resize(0, input_dim);
        net.b1.resize(0);
        net.w2 = init(net.num_classes, input_dim);
    }
    net.b2 = Vector::Zero(net.num_classes);
    return net;
}

enum class LossKind { Ce, CePlusOe };

struct TrainConfig {
    LossKind loss = LossKind::Ce;
    double alpha = 0.5;
    bool extra_class = false;
    int epochs = 50;
    int batch_size = 64;
    int outlier_batch_size = 128;
    double step_size = 0.1;
    std::uint64_t seed = 0;
    std::optional<Matrix> outliers;
};

inline void validate(const TrainConfig& cfg) {
    require(cfg.alpha >= 0.0 && std::isfinite(cfg.alpha), ErrorCode::InvalidArgument, "alpha must be >= 0");
    require(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.outlier_batch_size >= 1, ErrorCode::InvalidArgument,
            "epochs and batch sizes must be >= 1");
    require(cfg.step_size > 0.0, ErrorCode::InvalidArgument, "step size must be > 0");
    if (cfg.loss == LossKind::CePlusOe)
        require(cfg.outliers.has_value() && cfg.outliers->rows() > 0, ErrorCode::InvalidArgument,
                "ce_plus_oe needs an outlier set");
    if (cfg.extra_class)
        require(cfg.outliers.has_value() && cfg.outliers->rows() > 0, ErrorCode::InvalidArgument,
                "extra_class needs train-time OOD examples");
}

struct Batch {
    Matrix x;
    std::vector<int> y;
    std::optional<Matrix> outliers;  // OE term inputs
};

struct LossGrad {
    double loss = 0.0;
    double ce = 0.0;
    double oe = 0.0;
    Vector grad;
};

namespace detail {

// Accumulates parameter gradients for dL/dlogits = dz over inputs x.
inline void backprop(const ShallowNet& net, const Matrix& x, const Matrix& dz, Vector& grad, double weight) {
    Eigen::Index o = 0;
    if (net.arch == Architecture::Hidden) {
        const Matrix h = net.hidden(x);
        const Matrix da = ((dz * net.w2).array() * (1.0 - h.array().square())).matrix();
        const Matrix gw1 = da.transpose() * x;
        grad.segment(o, gw1.size()) += weight * gw1.reshaped();
        o += gw1.size();
        grad.segment(o, net.b1.size()) += weight * da.colwise().sum().transpose();
        o += net.b1.size();
        const Matrix gw2 = dz.transpose() * h;
        grad.segment(o, gw2.size()) += weight * gw2.reshaped();
        o += gw2.size();
    } else {
        const Matrix gw2 = dz.transpose() * x;
        grad.segment(o, gw2.size()) += weight * gw2.reshaped();
        o += gw2.size();
    }
    grad.segment(o, net.b2.size()) += weight * dz.colwise().sum().transpose();
}

}  // namespace detail

// L = mean CE(f(x), y) + alpha * mean CE(f(x'), uniform over the ID classes).
inline LossGrad loss_and_grad(const ShallowNet& net, const Batch& batch, double alpha) {
    require(batch.x.cols() == net.input_dim, ErrorCode::ShapeMismatch, "batch feature dim differs from net");
    require(static_cast<Eigen::Index>(batch.y.size()) == batch.x.rows() && batch.x.rows() > 0, ErrorCode::ShapeMismatch,
            "batch labels do not match rows");
    const Eigen::Index k = net.num_classes;
    LossGrad out;
    out.grad = Vector::Zero(net.num_parameters());

    const Matrix z = net.logits(batch.x);
    Matrix dz(z.rows(), k);
    const double inv_n = 1.0 / static_cast<double>(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const int y = batch.y[i];
        require(y >= 0 && y < k, ErrorCode::ShapeMismatch, "label out of range for the net");
        const double lse = logsumexp(z.row(i).array());
        out.ce += lse - z(i, y);
        dz.row(i) = (z.row(i).array() - lse).exp();
        dz(i, y) -= 1.0;
    }
    out.ce *= inv_n;
    dz *= inv_n;
    detail::backprop(net, batch.x, dz, out.grad, 1.0);

    if (batch.outliers && batch.outliers->rows() > 0) {
        require(batch.outliers->cols() == net.input_dim, ErrorCode::ShapeMismatch, "outlier dim differs from net");
        const Eigen::Index k_id = net.id_classes();
        const Matrix zo = net.logits(*batch.outliers);
        Matrix dzo(zo.rows(), k);
        const double inv_m = 1.0 / static_cast<double>(zo.rows());
        for (Eigen::Index i = 0; i < zo.rows(); ++i) {
            const double lse = logsumexp(zo.row(i).array());
            out.oe += lse - zo.row(i).head(k_id).mean();
            dzo.row(i) = (zo.row(i).array() - lse).exp();
            dzo.row(i).head(k_id).array() -= 1.0 / static_cast<double>(k_id);
        }
        out.oe *= inv_m;
        dzo *= inv_m;
        Vector g_oe = Vector::Zero(net.num_parameters());
        detail::backprop(net, *batch.outliers, dzo, g_oe, 1.0);
        out.grad += alpha * g_oe;
    }
    out.loss = out.ce + alpha * out.oe;
    return out;
}

struct TrainResult {
    ShallowNet net;
    std::vector<double> loss_trace;  // mean batch loss per epoch
};

// ID order and outlier order come from separate streams, so adding an
// outlier set with alpha = 0 leaves the trajectory bit-identical.
inline TrainResult train(const ShallowNet& net0, const Matrix& features, const std::vector<int>& labels,
                         const TrainConfig& cfg) {
    validate(cfg);
    require(static_cast<Eigen::Index>(labels.size()) == features.rows(), ErrorCode::ShapeMismatch,
            "label count differs from features");
    require(net0.extra_class == cfg.extra_class, ErrorCode::InvalidArgument, "net and config disagree on extra_class");

    Matrix x = features;
    std::vector<int> y = labels;
    if (cfg.extra_class) {
        const Matrix& o = *cfg.outliers;
        x.conservativeResize(features.rows() + o.rows(), Eigen::NoChange);
        x.bottomRows(o.rows()) = o;
        y.insert(y.end(), static_cast<std::size_t>(o.rows()), static_cast<int>(net0.num_classes - 1));
    }
    const bool use_oe = cfg.loss == LossKind::CePlusOe;

    TrainResult result{net0, {}};
    ShallowNet& net = result.net;
    Vector params = net.parameters();
    Rng order_rng(cfg.seed, 7);
    Rng outlier_rng(cfg.seed, 8);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) order[i] = i;
    std::vector<Eigen::Index> outlier_order;
    std::size_t outlier_pos = 0;
    if (use_oe) {
        outlier_order.resize(static_cast<std::size_t>(cfg.outliers->rows()));
        for (Eigen::Index i = 0; i < cfg.outliers->rows(); ++i) outlier_order[i] = i;
        outlier_rng.shuffle(outlier_order);
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            Batch batch;
            batch.x.resize(static_cast<Eigen::Index>(end - start), x.cols());
            for (std::size_t i = start; i < end; ++i) {
                batch.x.row(static_cast<Eigen::Index>(i - start)) = x.row(order[i]);
                batch.y.push_back(y[order[i]]);
            }
            if (use_oe) {
                Matrix ob(cfg.outlier_batch_size, x.cols());
                for (int i = 0; i < cfg.outlier_batch_size; ++i) {
                    if (outlier_pos == outlier_order.size()) {
                        outlier_rng.shuffle(outlier_order);
                        outlier_pos = 0;
                    }
                    ob.row(i) = cfg.outliers->row(outlier_order[outlier_pos++]);
                }
                batch.outliers = std::move(ob);
            }
            const LossGrad lg = loss_and_grad(net, batch, use_oe ? cfg.alpha : 0.0);
            if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
                fail(ErrorCode::DivergenceDetected, "loss became non-finite at epoch " + std::to_string(epoch));
            params -= cfg.step_size * lg.grad;
            if (!params.allFinite())
                fail(ErrorCode::DivergenceDetected, "parameters became non-finite at epoch " + std::to_string(epoch));
            net.set_parameters(params);
            epoch_loss += lg.loss;
            ++batches;
        }
        result.loss_trace.push_back(epoch_loss / batches);
    }
    return result;
}

inline ScoreVector kplus1_detect(const ShallowNet& net, const Matrix& x) {
    require(net.extra_class, ErrorCode::NotKPlus1Model, "net was not trained with an extra OOD class");
    const Matrix z = net.logits(x);
    ScoreVector out(static_cast<std::size_t>(x.rows()));
    const Eigen::Index last = net.num_classes - 1;
    for (Eigen::Index i = 0; i < z.rows(); ++i) out[i] = -std::exp(z(i, last) - logsumexp(z.row(i).array()));
    return out;
}

inline double accuracy(const ShallowNet& net, const Matrix& x, const std::vector<int>& labels) {
    const Matrix z = net.logits(x);
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Eigen::Index best;
        z.row(i).head(net.id_classes()).maxCoeff(&best);
        correct += best == labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(z.rows());
}

// ID-class softmax maximum; the extra class (if any) is excluded.
inline ScoreVector net_msp(const ShallowNet& net, const Matrix& x) {
    return msp(net.logits(x).leftCols(net.id_classes()));
}

// Isotropic Gaussian blob around `center`.
inline Matrix gaussian_blob(const Vector& center, double stddev, Eigen::Index n, Rng& rng) {
    Matrix out(n, center.size());
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < center.size(); ++j) out(i, j) = center(j) + stddev * rng.normal();
    return out;
}

// Two ID classes along the first axis; exposure outliers in a band offset
// along the second axis; covariate shift = noise plus a drift toward that band.
struct OeTradeoffConfig {
    std::uint64_t seed = 0;
    double alpha = 0.5;
    Eigen::Index n_per_class = 400;
    Eigen::Index n_outliers = 800;
    Eigen::Index hidden_width = kDefaultHiddenWidth;
    int epochs = 60;
    int batch_size = 32;
    int outlier_batch_size = 64;
    double step_size = 0.1;
    double class_offset = 2.0;
    double class_std = 0.8;
    double outlier_offset = 4.0;
    double outlier_spread = 6.0;
    double shift_noise_std = 0.5;
    double shift_drift = 2.5;
};

struct OeRun {
    double detection_auroc = 0.0;  // MSP, heldout ID vs exposure-like OOD
    double shift_accuracy = 0.0;   // covariate-shifted heldout ID
    double id_accuracy = 0.0;
};

struct OeTradeoffReport {
    OeTradeoffConfig config;
    OeRun erm;
    OeRun oe;
};

namespace detail {

struct OeData {
    Matrix train_x;
    std::vector<int> train_y;
    Matrix heldout_x;
    std::vector<int> heldout_y;
    Matrix outliers;
    Matrix exposure_ood;
    Matrix shifted_x;
};

inline Matrix outlier_band(const OeTradeoffConfig& c, Eigen::Index n, Rng& rng) {
    Matrix out(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        out(i, 0) = c.outlier_spread * (2.0 * rng.uniform() - 1.0);
        out(i, 1) = c.outlier_offset + 0.5 * rng.normal();
    }
    return out;
}

inline OeData make_oe_data(const OeTradeoffConfig& c) {
    Rng rng(c.seed, 31);
    OeData d;
    auto two_class = [&](Matrix& x, std::vector<int>& y) {
        x.resize(2 * c.n_per_class, 2);
        y.clear();
        for (Eigen::Index i = 0; i < 2 * c.n_per_class; ++i) {
            const int label = static_cast<int>(i % 2);
            x(i, 0) = (label == 0 ? -c.class_offset : c.class_offset) + c.class_std * rng.normal();
            x(i, 1) = c.class_std * rng.normal();
            y.push_back(label);
        }
    };
    two_class(d.train_x, d.train_y);
    two_class(d.heldout_x, d.heldout_y);
    d.outliers = outlier_band(c, c.n_outliers, rng);
    d.exposure_ood = outlier_band(c, 2 * c.n_per_class, rng);
    d.shifted_x = d.heldout_x;
    for (Eigen::Index i = 0; i < d.shifted_x.rows(); ++i) {
        d.shifted_x(i, 0) += c.shift_noise_std * rng.normal();
        d.shifted_x(i, 1) += c.shift_drift + c.shift_noise_std * rng.normal();
    }
    return d;
}

}  // namespace detail

// ERM and OE runs share data, initialization, and batch order.
inline OeTradeoffReport oe_tradeoff_experiment(const OeTradeoffConfig& c) {
    const auto data = detail::make_oe_data(c);
    const ShallowNet net0 = make_net(Architecture::Hidden, 2, 2, false, c.hidden_width, c.seed);
    TrainConfig base;
    base.epochs = c.epochs;
    base.batch_size = c.batch_size;
    base.outlier_batch_size = c.outlier_batch_size;
    base.step_size = c.step_size;
    base.seed = c.seed;
    base.outliers = data.outliers;

    TrainConfig erm_cfg = base;
    erm_cfg.loss = LossKind::Ce;
    TrainConfig oe_cfg = base;
    oe_cfg.loss = LossKind::CePlusOe;
    oe_cfg.alpha = c.alpha;

    auto evaluate = [&](const ShallowNet& net) {
        OeRun run;
        run.detection_auroc = auroc(net_msp(net, data.heldout_x), net_msp(net, data.exposure_ood));
        run.shift_accuracy = accuracy(net, data.shifted_x, data.heldout_y);
        run.id_accuracy = accuracy(net, data.heldout_x, data.heldout_y);
        return run;
    };
    OeTradeoffReport report;
    report.config = c;
    report.erm = evaluate(train(net0, data.train_x, data.train_y, erm_cfg).net);
    report.oe = evaluate(train(net0, data.train_x, data.train_y, oe_cfg).net);
    return report;
}

inline nlohmann::json to_json(const OeTradeoffReport& r) {
    auto run = [](const OeRun& x) {
        return nlohmann::json{{"detection_auroc", x.detection_auroc},
                              {"shift_accuracy", x.shift_accuracy},
                              {"id_accuracy", x.id_accuracy}};
    };
    const auto& c = r.config;
    return {{"config",
             {{"seed", c.seed}, {"alpha", c.alpha}, {"n_per_class", c.n_per_class}, {"n_outliers", c.n_outliers},
              {"hidden_width", c.hidden_width}, {"epochs", c.epochs}, {"batch_size", c.batch_size},
              {"outlier_batch_size", c.outlier_batch_size}, {"step_size", c.step_size},
              {"shift_noise_std", c.shift_noise_std}, {"shift_drift", c.shift_drift}}},
            {"erm", run(r.erm)},
            {"oe", run(r.oe)}};
}

// Two ID classes, train-time OOD cluster, and two test OOD sets: one drawn
// near the train-time OOD cluster, one drawn inside the ID clusters
// (inside_class = -1: split evenly over both classes; 0 or 1: that class only).
struct KPlus1Config {
    std::uint64_t seed = 0;
    Eigen::Index n_per_class = 300;
    Eigen::Index hidden_width = kDefaultHiddenWidth;
    int epochs = 60;
    int batch_size = 32;
    double step_size = 0.1;
    double cluster_std = 0.7;
    int inside_class = -1;
};

struct KPlus1Report {
    double near_auroc = 0.0;
    double inside_auroc = 0.0;
    double id_accuracy = 0.0;
};

inline KPlus1Report kplus1_experiment(const KPlus1Config& c) {
    Rng rng(c.seed, 41);
    const Vector class0 = (Vector(2) << -3.0, 0.0).finished();
    const Vector class1 = (Vector(2) << 3.0, 0.0).finished();
    const Vector ood_center = (Vector(2) << 0.0, 4.0).finished();
    auto make_id = [&](Matrix& x, std::vector<int>& y) {
        const Matrix a = gaussian_blob(class0, c.cluster_std, c.n_per_class, rng);
        const Matrix b = gaussian_blob(class1, c.cluster_std, c.n_per_class, rng);
        x.resize(2 * c.n_per_class, 2);
        x << a, b;
        y.assign(static_cast<std::size_t>(c.n_per_class), 0);
        y.insert(y.end(), static_cast<std::size_t>(c.n_per_class), 1);
    };
    Matrix train_x, heldout_x;
    std::vector<int> train_y, heldout_y;
    make_id(train_x, train_y);
    make_id(heldout_x, heldout_y);
    const Matrix train_ood = gaussian_blob(ood_center, c.cluster_std, c.n_per_class, rng);
    const Matrix near_ood = gaussian_blob(ood_center, c.cluster_std, c.n_per_class, rng);
    require(c.inside_class >= -1 && c.inside_class <= 1, ErrorCode::InvalidArgument, "inside_class must be -1, 0 or 1");
    Matrix inside_ood(c.n_per_class, 2);
    for (Eigen::Index i = 0; i < c.n_per_class; ++i) {
        const int cls = c.inside_class >= 0 ? c.inside_class : static_cast<int>(i % 2);
        inside_ood.row(i) = gaussian_blob(cls == 0 ? class0 : class1, c.cluster_std, 1, rng);
    }

    TrainConfig cfg;
    cfg.extra_class = true;
    cfg.outliers = train_ood;
    cfg.epochs = c.epochs;
    cfg.batch_size = c.batch_size;
    cfg.step_size = c.step_size;
    cfg.seed = c.seed;
    const auto net = train(make_net(Architecture::Hidden, 2, 2, true, c.hidden_width, c.seed), train_x, train_y, cfg).net;

    KPlus1Report r;
    const ScoreVector id_scores = kplus1_detect(net, heldout_x);
    r.near_auroc = auroc(id_scores, kplus1_detect(net, near_ood));
    r.inside_auroc = auroc(id_scores, kplus1_detect(net, inside_ood));
    r.id_accuracy = accuracy(net, heldout_x, heldout_y);
    return r;
}

}  // namespace oodlens
