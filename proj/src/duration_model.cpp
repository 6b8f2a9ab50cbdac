#include "availnet/duration_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "availnet/error.hpp"
#include "availnet/random.hpp"

namespace availnet {

void Stage2Config::validate() const {
    if (gamma == 0 || gamma > max_gamma)
        throw ConfigError("gamma must lie in [1, " + std::to_string(max_gamma) + "], got " + std::to_string(gamma));
    if (channels.empty() || channels.size() > 4) throw ConfigError("stage 2 needs between 1 and 4 residual stages");
    for (auto c : channels)
        if (c == 0) throw ConfigError("channel counts must be positive");
    if (!(width_factor > 0.0)) throw ConfigError("width factor must be positive");
    if (!(bn_eps > 0.0)) throw ConfigError("batch-norm epsilon must be positive");
    if (!(head_leak >= 0.0 && head_leak < 1.0)) throw ConfigError("head leaky ReLU slope must lie in [0, 1)");
    scheduler.validate();
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
    if (patience == 0) throw ConfigError("patience must be at least 1");
    if (input_size < min_input_size())
        throw ConfigError("input size " + std::to_string(input_size) + " is below the minimum " +
                          std::to_string(min_input_size()) + " for " + std::to_string(channels.size()) + " stages");
}

std::vector<std::size_t> Stage2Config::scaled_channels() const {
    std::vector<std::size_t> out;
    for (auto c : channels)
        out.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(c) * width_factor))));
    return out;
}

std::size_t Stage2Config::min_input_size() const { return std::size_t{1} << (channels.size() + 1); }

NetworkSpec build_pathway(const Stage2Config& cfg) {
    cfg.validate();
    const auto ch = cfg.scaled_channels();
    NetworkSpec spec;
    spec.push_back(Conv2dSpec{1, ch[0], 7, 7, 2, 3, !cfg.batch_norm});
    if (cfg.batch_norm) spec.push_back(BatchNormSpec{ch[0], cfg.bn_eps, cfg.bn_momentum});
    spec.push_back(LeakyReluSpec{0.0});
    spec.push_back(PoolSpec{PoolKind::max, 3, 2, 1, false});
    std::size_t in = ch[0];
    for (std::size_t s = 0; s < ch.size(); ++s) {
        spec.push_back(ResidualBlockSpec{in, ch[s], s == 0 ? 1u : 2u, cfg.batch_norm, cfg.bn_eps, cfg.bn_momentum});
        spec.push_back(ResidualBlockSpec{ch[s], ch[s], 1, cfg.batch_norm, cfg.bn_eps, cfg.bn_momentum});
        in = ch[s];
    }
    spec.push_back(PoolSpec{PoolKind::avg, 0, 0, 0, true});
    return spec;
}

DualPathNetwork::DualPathNetwork(const Stage2Config& cfg, std::uint64_t seed)
    : gasf_(build_pathway(cfg), derive_seed(seed, 1)),
      gadf_(build_pathway(cfg), derive_seed(seed, 2)),
      pathway_width_(cfg.scaled_channels().back()) {
    head_ = Sequential({DenseSpec{2 * pathway_width_, cfg.num_classes()}, LeakyReluSpec{cfg.head_leak}, SoftmaxSpec{}},
                       derive_seed(seed, 3));
}

namespace {

Tensor concat_features(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.dim(0), wa = a.dim(1), wb = b.dim(1);
    Tensor out({n, wa + wb});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(a.data() + i * wa, wa, out.data() + i * (wa + wb));
        std::copy_n(b.data() + i * wb, wb, out.data() + i * (wa + wb) + wa);
    }
    return out;
}

void check_inputs(const Tensor& gasf, const Tensor& gadf) {
    if (gasf.rank() != 4 || gasf.dim(1) != 1 || gasf.shape() != gadf.shape())
        throw ShapeError("dual-path input: expected matching [N, 1, T, T] tensors, got " + to_string(gasf.shape()) +
                         " and " + to_string(gadf.shape()));
}

}  // namespace

Tensor DualPathNetwork::forward(const Tensor& gasf, const Tensor& gadf, Mode mode) {
    check_inputs(gasf, gadf);
    return head_.forward(concat_features(gasf_.forward(gasf, mode), gadf_.forward(gadf, mode)), mode);
}

void DualPathNetwork::backward(const Tensor& grad_probs) {
    const Tensor g = head_.backward(grad_probs);
    const std::size_t n = g.dim(0), w = pathway_width_;
    Tensor ga({n, w}), gb({n, w});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(g.data() + i * 2 * w, w, ga.data() + i * w);
        std::copy_n(g.data() + i * 2 * w + w, w, gb.data() + i * w);
    }
    gasf_.backward(ga);
    gadf_.backward(gb);
}

Tensor DualPathNetwork::infer(const Tensor& gasf, const Tensor& gadf) const {
    check_inputs(gasf, gadf);
    return head_.infer(concat_features(gasf_.infer(gasf), gadf_.infer(gadf)));
}

void DualPathNetwork::visit_parameters(const ParameterVisitor& fn) {
    gasf_.visit_parameters("gasf.", fn);
    gadf_.visit_parameters("gadf.", fn);
    head_.visit_parameters("head.", fn);
}

std::vector<Parameter*> DualPathNetwork::parameters() {
    std::vector<Parameter*> out;
    visit_parameters([&](const std::string&, Parameter& p) { out.push_back(&p); });
    return out;
}

void DualPathNetwork::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

std::map<std::string, Tensor> DualPathNetwork::state() const {
    auto out = gasf_.state("gasf.");
    out.merge(gadf_.state("gadf."));
    out.merge(head_.state("head."));
    return out;
}

void DualPathNetwork::load_state(const std::map<std::string, Tensor>& state) {
    gasf_.load_state(state, "gasf.");
    gadf_.load_state(state, "gadf.");
    head_.load_state(state, "head.");
}

Stage2Model build_dual_model(const Stage2Config& cfg) {
    cfg.validate();
    return Stage2Model{cfg, DualPathNetwork(cfg, derive_seed(cfg.seed, 10))};
}

std::pair<Tensor, Tensor> stack_pairs(std::span<const LabeledPair> pairs, std::size_t input_size) {
    const std::size_t t = input_size, area = t * t;
    Tensor s({pairs.size(), 1, t, t}), d({pairs.size(), 1, t, t});
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i].pair;
        if (p.gasf.shape() != Shape{t, t} || p.gadf.shape() != Shape{t, t})
            throw ShapeError("GAF pair " + std::to_string(i) + " has shape " + to_string(p.gasf.shape()) +
                             ", model expects " + std::to_string(t) + "x" + std::to_string(t));
        std::copy_n(p.gasf.data(), area, s.data() + i * area);
        std::copy_n(p.gadf.data(), area, d.data() + i * area);
    }
    return {std::move(s), std::move(d)};
}

namespace {

std::vector<std::size_t> class_labels(std::span<const LabeledPair> pairs, std::size_t gamma) {
    std::vector<std::size_t> y;
    y.reserve(pairs.size());
    for (const auto& p : pairs) {
        if (p.label.gamma() != gamma)
            throw ValidationError("label horizon " + std::to_string(p.label.gamma()) + " does not match gamma " +
                                  std::to_string(gamma));
        y.push_back(p.label.class_index);
    }
    return y;
}

Tensor gather(const Tensor& x, std::span<const std::size_t> rows) {
    Shape shape = x.shape();
    const std::size_t stride = x.size() / shape[0];
    shape[0] = rows.size();
    Tensor out(shape);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.data() + rows[i] * stride, stride, out.data() + i * stride);
    return out;
}

}  // namespace

Stage2Training train_stage2(std::span<const LabeledPair> train, std::span<const LabeledPair> validation,
                            const Stage2Config& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train.empty()) throw DataError("stage-2 training set is empty");
    const std::size_t classes = cfg.num_classes();
    (void)class_labels(train, cfg.gamma);

    Stage2Training out;
    std::vector<LabeledPair> data(train.begin(), train.end());
    if (cfg.balance) {
        BalanceOptions opt = cfg.augmentation;
        opt.seed = derive_seed(cfg.seed, 20);
        auto balanced = balance_classes(std::move(data), classes, opt);
        data = std::move(balanced.samples);
        out.warnings = std::move(balanced.warnings);
    }
    out.class_counts = class_counts(data, classes);
    const auto present = std::count_if(out.class_counts.begin(), out.class_counts.end(), [](auto c) { return c > 0; });
    if (present < 2) throw DataError("stage-2 training data contains a single class");

    out.model = build_dual_model(cfg);
    auto& net = out.model.network;

    const auto [xs, xd] = stack_pairs(data, cfg.input_size);
    const auto y_labels = class_labels(data, cfg.gamma);
    const Tensor y = one_hot(y_labels, classes);
    const bool has_val = !validation.empty();
    Tensor vs, vd, vy;
    std::vector<std::size_t> vy_labels;
    if (has_val) {
        std::tie(vs, vd) = stack_pairs(validation, cfg.input_size);
        vy_labels = class_labels(validation, cfg.gamma);
        vy = one_hot(vy_labels, classes);
    }

    const std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, 21));

    double best = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    out.stop_reason = "max_epochs";
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = scheduler_rate(cfg.scheduler, epoch);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t begin = 0; begin < n;) {
            std::size_t end = std::min(n, begin + cfg.batch_size);
            if (n - end == 1) end = n;
            const std::span<const std::size_t> rows(order.data() + begin, end - begin);
            net.zero_grad();
            const Tensor probs = net.forward(gather(xs, rows), gather(xd, rows), Mode::train);
            const auto loss = cross_entropy_loss(probs, gather(y, rows));
            if (!std::isfinite(loss.value)) throw DataError("stage-2 training diverged (non-finite loss)");
            net.backward(loss.grad);
            sgd_step(net.parameters(), lr);
            begin = end;
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.learning_rate = lr;
        const Tensor p = net.infer(xs, xd);
        m.train_loss = cross_entropy_loss(p, y).value;
        m.train_error = classification_error(p, y_labels);
        if (has_val) {
            const Tensor pv = net.infer(vs, vd);
            m.val_loss = cross_entropy_loss(pv, vy).value;
            m.val_error = classification_error(pv, vy_labels);
        } else {
            m.val_loss = m.train_loss;
            m.val_error = m.train_error;
        }
        out.history.push_back(m);
        if (on_epoch) on_epoch(m);

        if (m.val_loss < best - cfg.stop_tol) {
            best = m.val_loss;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            out.stop_reason = "converged";
            break;
        }
    }
    return out;
}

Tensor predict_stage2(const Stage2Model& model, std::span<const LabeledPair> pairs) {
    const auto [s, d] = stack_pairs(pairs, model.config.input_size);
    return model.network.infer(s, d);
}

Forecast forecast(const Stage2Model& model, const GafImagePair& pair) {
    LabeledPair lp;
    lp.pair = pair;
    const Tensor probs = predict_stage2(model, std::span<const LabeledPair>(&lp, 1));
    Forecast f;
    f.probabilities.assign(probs.values().begin(), probs.values().end());
    f.label = decode_label(argmax_rows(probs)[0], model.config.gamma);
    return f;
}

Stage2Evaluation evaluate_stage2(const Stage2Model& model, std::span<const LabeledPair> test) {
    if (test.empty()) throw ValidationError("cannot evaluate on an empty test set");
    const auto labels = class_labels(test, model.config.gamma);
    const auto pred = argmax_rows(predict_stage2(model, test));
    Stage2Evaluation ev;
    ev.count = test.size();
    ev.bit_error.assign(model.config.gamma, 0.0);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        wrong += pred[i] != labels[i];
        for (std::size_t b = 0; b < model.config.gamma; ++b)
            ev.bit_error[b] += ((pred[i] >> b) & 1U) != ((labels[i] >> b) & 1U);
    }
    const auto total = static_cast<double>(labels.size());
    ev.error_rate = static_cast<double>(wrong) / total;
    for (double& e : ev.bit_error) e /= total;
    return ev;
}

}  // namespace availnet
