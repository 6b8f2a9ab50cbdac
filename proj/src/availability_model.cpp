#include "availnet/availability_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>

#include "availnet/error.hpp"
#include "availnet/optim.hpp"
#include "availnet/random.hpp"

namespace availnet {

std::vector<HiddenLayerConfig> ecml_pkdd15_layout() { return {{512, 0.01}, {512, 0.01}, {448, 0.02}, {448, 0.02}}; }

std::vector<HiddenLayerConfig> foursquare_layout() {
    return {{256, 0.01}, {256, 0.01}, {256, 0.01}, {128, 0.01}, {128, 0.01}};
}

std::vector<HiddenLayerConfig> uber_layout() { return {{16, 0.01}, {16, 0.01}, {8, 0.01}}; }

void SplitFractions::validate() const {
    if (train < 0 || validation < 0 || test < 0) throw ConfigError("split fractions must be non-negative");
    if (std::abs(train + validation + test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1, got " + std::to_string(train + validation + test));
}

void Stage1Config::validate() const {
    if (hidden.empty()) throw ConfigError("stage-1 network needs at least one hidden layer");
    for (const auto& h : hidden) {
        if (h.width == 0) throw ConfigError("stage-1 hidden widths must be positive");
        if (!(h.leak > 0.0 && h.leak < 1.0)) throw ConfigError("leaky ReLU slope must lie in (0, 1)");
    }
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (std::isnan(stop_tol)) throw ConfigError("stop_tol must be a number");
    if (patience == 0) throw ConfigError("patience must be at least 1");
    if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
    if (!(bn_eps > 0.0)) throw ConfigError("batch-norm epsilon must be positive");
    if (availability_threshold < 0.0 || availability_threshold > 1.0)
        throw ConfigError("availability threshold must lie in [0, 1]");
    fractions.validate();
}

NetworkSpec build_stage1_network(const Stage1Config& cfg, std::size_t in_dim, std::size_t n_services) {
    cfg.validate();
    if (in_dim == 0) throw ConfigError("stage-1 input width must be positive");
    if (n_services < 2) throw ConfigError("stage 1 needs at least two services, got " + std::to_string(n_services));
    NetworkSpec spec;
    std::size_t width = in_dim;
    for (const auto& h : cfg.hidden) {
        spec.push_back(DenseSpec{width, h.width});
        spec.push_back(LeakyReluSpec{h.leak});
        spec.push_back(BatchNormSpec{h.width, cfg.bn_eps, cfg.bn_momentum});
        width = h.width;
    }
    spec.push_back(DenseSpec{width, n_services});
    spec.push_back(SoftmaxSpec{});
    return spec;
}

Tensor encode_batch(std::span<const TrainingInstance> instances, const EncodingConfig& encoding) {
    const std::size_t width = encoding.width();
    Tensor x({instances.size(), width});
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto row = encode_input(instances[i].features, instances[i].cluster_id, encoding);
        std::copy(row.begin(), row.end(), x.data() + i * width);
    }
    return x;
}

std::vector<std::size_t> argmax_rows(const Tensor& probs) {
    if (probs.rank() != 2) throw ShapeError("argmax expects [batch, classes], got " + to_string(probs.shape()));
    std::vector<std::size_t> out(probs.dim(0));
    for (std::size_t n = 0; n < probs.dim(0); ++n) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.dim(1); ++c)
            if (probs.at(n, c) > probs.at(n, best)) best = c;
        out[n] = best;
    }
    return out;
}

double classification_error(const Tensor& probs, std::span<const std::size_t> labels) {
    if (labels.empty()) throw ValidationError("cannot evaluate on an empty set");
    const auto pred = argmax_rows(probs);
    if (pred.size() != labels.size()) throw ShapeError("prediction and label counts differ");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) wrong += pred[i] != labels[i];
    return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

namespace {

std::vector<std::size_t> labels_of(std::span<const TrainingInstance> instances) {
    std::vector<std::size_t> y;
    y.reserve(instances.size());
    for (const auto& inst : instances) y.push_back(inst.label);
    return y;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    const std::size_t width = x.dim(1);
    Tensor out({rows.size(), width});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(x.data() + rows[i] * width, width, out.data() + i * width);
    return out;
}

}  // namespace

Stage1Training train_stage1(std::span<const TrainingInstance> train, std::span<const TrainingInstance> validation,
                            const ClusterModel& clusters, const Vocabulary& vocabulary, const Stage1Config& cfg,
                            const EncodingOptions& encoding, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train.empty()) throw DataError("stage-1 training set is empty");
    const std::size_t n_services = vocabulary.size();
    std::set<std::size_t> distinct;
    for (const auto& inst : train) {
        if (inst.label >= n_services) throw ValidationError("training label outside the vocabulary");
        if (inst.cluster_id >= clusters.k()) throw ValidationError("training cluster id outside the cluster model");
        distinct.insert(inst.label);
    }
    if (distinct.size() < 2) throw DataError("stage-1 training data contains a single service");

    Stage1Training out;
    Stage1Model& model = out.model;
    model.config = cfg;
    model.clusters = clusters;
    model.vocabulary = vocabulary;
    model.encoding = fit_encoding(train, clusters.k(), encoding);
    model.network = Sequential(build_stage1_network(cfg, model.encoding.width(), n_services), derive_seed(cfg.seed, 1));

    const Tensor x_train = encode_batch(train, model.encoding);
    const auto y_train_labels = labels_of(train);
    const Tensor y_train = one_hot(y_train_labels, n_services);
    const bool has_val = !validation.empty();
    const Tensor x_val = has_val ? encode_batch(validation, model.encoding) : Tensor{};
    const auto y_val_labels = labels_of(validation);
    const Tensor y_val = has_val ? one_hot(y_val_labels, n_services) : Tensor{};

    auto val_loss = [&] {
        return has_val ? cross_entropy_loss(model.network.infer(x_val), y_val).value
                       : cross_entropy_loss(model.network.infer(x_train), y_train).value;
    };

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, 2));
    const std::size_t n = train.size();

    double previous = val_loss();
    std::size_t stalled = 0;
    out.stop_reason = "max_epochs";
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t begin = 0; begin < n;) {
            std::size_t end = std::min(n, begin + cfg.batch_size);
            if (n - end == 1) end = n;
            const std::span<const std::size_t> rows(order.data() + begin, end - begin);
            model.network.zero_grad();
            const Tensor probs = model.network.forward(gather_rows(x_train, rows), Mode::train);
            const auto loss = cross_entropy_loss(probs, gather_rows(y_train, rows));
            if (!std::isfinite(loss.value)) throw DataError("stage-1 training diverged (non-finite loss)");
            model.network.backward(loss.grad);
            sgd_step(model.network.parameters(), cfg.learning_rate);
            begin = end;
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.learning_rate = cfg.learning_rate;
        const Tensor p_train = model.network.infer(x_train);
        m.train_loss = cross_entropy_loss(p_train, y_train).value;
        m.train_error = classification_error(p_train, y_train_labels);
        if (has_val) {
            const Tensor p_val = model.network.infer(x_val);
            m.val_loss = cross_entropy_loss(p_val, y_val).value;
            m.val_error = classification_error(p_val, y_val_labels);
        } else {
            m.val_loss = m.train_loss;
            m.val_error = m.train_error;
        }
        out.history.push_back(m);
        if (on_epoch) on_epoch(m);

        stalled = previous - m.val_loss < cfg.stop_tol ? stalled + 1 : 0;
        previous = m.val_loss;
        if (stalled >= cfg.patience) {
            out.stop_reason = "converged";
            break;
        }
    }
    return out;
}

Tensor predict_probabilities(const Stage1Model& model, std::span<const TrainingInstance> instances) {
    return model.network.infer(encode_batch(instances, model.encoding));
}

std::vector<ServiceProbability> predict_availability(const Stage1Model& model, const GeoPoint& point, Timestamp t,
                                                     const HolidayCalendar& calendar) {
    validate(point);
    TrainingInstance query;
    query.features = extract_features(TraceRecord{"query", point, t}, calendar);
    query.cluster_id = model.clusters.assign(point);
    const Tensor probs = predict_probabilities(model, std::span<const TrainingInstance>(&query, 1));

    std::vector<ServiceProbability> ranked;
    ranked.reserve(model.vocabulary.size());
    for (std::size_t c = 0; c < model.vocabulary.size(); ++c) ranked.push_back({model.vocabulary.id_at(c), probs[c]});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const ServiceProbability& a, const ServiceProbability& b) { return a.probability > b.probability; });
    return ranked;
}

std::vector<std::string> available_services(const Stage1Model& model, std::span<const ServiceProbability> ranked) {
    const double threshold = model.config.availability_threshold > 0.0
                                 ? model.config.availability_threshold
                                 : 1.0 / static_cast<double>(std::max<std::size_t>(1, model.vocabulary.size()));
    std::vector<std::string> ids;
    for (const auto& r : ranked)
        if (r.probability >= threshold) ids.push_back(r.service_id);
    return ids;
}

double evaluate_stage1(const Stage1Model& model, std::span<const TrainingInstance> test) {
    if (test.empty()) throw ValidationError("cannot evaluate on an empty test set");
    return classification_error(predict_probabilities(model, test), labels_of(test));
}

void write_history_csv(std::ostream& out, std::span<const EpochMetrics> history) {
    out << "epoch,learning_rate,train_loss,train_error,val_loss,val_error\n";
    out.precision(10);
    for (const auto& m : history)
        out << m.epoch << ',' << m.learning_rate << ',' << m.train_loss << ',' << m.train_error << ',' << m.val_loss
            << ',' << m.val_error << '\n';
}

}  // namespace availnet
