#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "availnet/features.hpp"
#include "availnet/geo_cluster.hpp"
#include "availnet/network.hpp"

namespace availnet {

struct HiddenLayerConfig {
    std::size_t width = 0;
    double leak = 0.01;
};

/// 512, 512 (a = 0.01) then 448, 448 (a = 0.02).
std::vector<HiddenLayerConfig> ecml_pkdd15_layout();
/// 256 x 3 then 128 x 2, a = 0.01.
std::vector<HiddenLayerConfig> foursquare_layout();
/// 16, 16, 8, a = 0.01.
std::vector<HiddenLayerConfig> uber_layout();

struct SplitFractions {
    double train = 0.72;
    double validation = 0.08;
    double test = 0.20;

    void validate() const;
};

struct Stage1Config {
    std::vector<HiddenLayerConfig> hidden = uber_layout();
    std::size_t batch_size = 128;
    double learning_rate = 0.01;
    // Stop once the validation loss has improved by less than stop_tol for
    // `patience` consecutive epochs.
    double stop_tol = 1e-4;
    std::size_t patience = 5;
    std::size_t max_epochs = 200;
    std::uint64_t seed = 0;
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;
    SplitFractions fractions;
    // Probability above which a service counts as available; 0 means 1 / n_services.
    double availability_threshold = 0.0;

    void validate() const;
};

/// [dense -> leaky_relu -> batch_norm] per hidden layer, then dense -> softmax.
NetworkSpec build_stage1_network(const Stage1Config& cfg, std::size_t in_dim, std::size_t n_services);

struct Stage1Model {
    Stage1Config config;
    EncodingConfig encoding;
    ClusterModel clusters;
    Vocabulary vocabulary;
    Sequential network;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double learning_rate = 0.0;
    double train_loss = 0.0;
    double train_error = 0.0;
    double val_loss = 0.0;  // equals the training figures when there is no validation split
    double val_error = 0.0;
};

struct Stage1Training {
    Stage1Model model;
    std::vector<EpochMetrics> history;
    std::string stop_reason;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Minibatch SGD with categorical cross-entropy. Encoding statistics are
/// fitted on `train` only. A trailing batch of one sample joins the previous
/// batch so batch normalization always sees at least two rows.
Stage1Training train_stage1(std::span<const TrainingInstance> train, std::span<const TrainingInstance> validation,
                            const ClusterModel& clusters, const Vocabulary& vocabulary, const Stage1Config& cfg,
                            const EncodingOptions& encoding = {}, const EpochCallback& on_epoch = {});

/// Encoded rows for `instances`, shape [n, encoding width].
Tensor encode_batch(std::span<const TrainingInstance> instances, const EncodingConfig& encoding);

/// Softmax rows for each instance.
Tensor predict_probabilities(const Stage1Model& model, std::span<const TrainingInstance> instances);

struct ServiceProbability {
    std::string service_id;
    double probability = 0.0;
};

/// Full distribution sorted by descending probability (ties by service order).
std::vector<ServiceProbability> predict_availability(const Stage1Model& model, const GeoPoint& point, Timestamp t,
                                                     const HolidayCalendar& calendar);

/// Services at or above the model's availability threshold, in ranked order.
std::vector<std::string> available_services(const Stage1Model& model, std::span<const ServiceProbability> ranked);

/// Row-wise argmax, ties to the smallest index.
std::vector<std::size_t> argmax_rows(const Tensor& probs);

/// Fraction of rows whose argmax differs from the label.
double classification_error(const Tensor& probs, std::span<const std::size_t> labels);

double evaluate_stage1(const Stage1Model& model, std::span<const TrainingInstance> test);

/// epoch,learning_rate,train_loss,train_error,val_loss,val_error
void write_history_csv(std::ostream& out, std::span<const EpochMetrics> history);

}  // namespace availnet
