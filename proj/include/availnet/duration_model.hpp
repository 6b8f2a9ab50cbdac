#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "availnet/availability_model.hpp"
#include "availnet/network.hpp"
#include "availnet/optim.hpp"
#include "availnet/series_gaf.hpp"

namespace availnet {

struct Stage2Config {
    std::size_t gamma = 3;
    std::size_t max_gamma = kDefaultMaxGamma;
    std::size_t input_size = 32;
    // One entry per residual stage (two blocks each), before the width factor.
    std::vector<std::size_t> channels{64, 128, 256, 512};
    double width_factor = 1.0;
    bool batch_norm = true;
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;
    double head_leak = 0.01;
    SchedulerConfig scheduler{0.1, 0.5, 10};
    std::size_t batch_size = 16;
    std::size_t max_epochs = 200;
    // Stop when the monitored loss has not beaten its best by more than
    // stop_tol for `patience` epochs.
    std::size_t patience = 10;
    double stop_tol = 0.0;
    std::uint64_t seed = 0;
    bool balance = true;
    BalanceOptions augmentation;

    void validate() const;
    std::size_t num_classes() const { return std::size_t{1} << gamma; }
    /// max(1, round(c * width_factor)) per stage.
    std::vector<std::size_t> scaled_channels() const;
    /// 2^(stages + 1): every stride-2 step sees at least a 2x2 map.
    std::size_t min_input_size() const;
};

/// 7x7/2 conv -> [BN] -> ReLU -> 3x3/2 max pool -> stages of two residual
/// blocks (stride 2 entering every stage after the first) -> global average
/// pool. Input [N, 1, T, T], output [N, last channel count].
NetworkSpec build_pathway(const Stage2Config& cfg);

/// Two pathways (GASF and GADF) with separate weights, concatenated into a
/// dense -> leaky ReLU -> softmax head of width 2^gamma.
class DualPathNetwork {
public:
    DualPathNetwork() = default;
    DualPathNetwork(const Stage2Config& cfg, std::uint64_t seed);

    /// Inputs are [N, 1, T, T]; output is [N, 2^gamma] probabilities.
    Tensor forward(const Tensor& gasf, const Tensor& gadf, Mode mode);
    void backward(const Tensor& grad_probs);
    Tensor infer(const Tensor& gasf, const Tensor& gadf) const;

    Sequential& gasf_path() { return gasf_; }
    Sequential& gadf_path() { return gadf_; }
    Sequential& head() { return head_; }
    std::size_t pathway_width() const noexcept { return pathway_width_; }

    void visit_parameters(const ParameterVisitor& fn);
    std::vector<Parameter*> parameters();
    void zero_grad();
    std::map<std::string, Tensor> state() const;
    void load_state(const std::map<std::string, Tensor>& state);

private:
    Sequential gasf_;
    Sequential gadf_;
    Sequential head_;
    std::size_t pathway_width_ = 0;
};

struct Stage2Model {
    Stage2Config config;
    DualPathNetwork network;
};

Stage2Model build_dual_model(const Stage2Config& cfg);

struct Stage2Training {
    Stage2Model model;
    std::vector<EpochMetrics> history;
    std::vector<std::size_t> class_counts;  // after balancing
    std::vector<std::string> warnings;
    std::string stop_reason;
};

/// SGD with the step scheduler and cross-entropy. Training pairs are balanced
/// first when cfg.balance is set; validation pairs are used as given.
Stage2Training train_stage2(std::span<const LabeledPair> train, std::span<const LabeledPair> validation,
                            const Stage2Config& cfg, const EpochCallback& on_epoch = {});

/// Stacks the GASF and GADF images into [N, 1, T, T] tensors.
std::pair<Tensor, Tensor> stack_pairs(std::span<const LabeledPair> pairs, std::size_t input_size);

Tensor predict_stage2(const Stage2Model& model, std::span<const LabeledPair> pairs);

struct Forecast {
    MultiStepLabel label;
    std::vector<double> probabilities;
};

Forecast forecast(const Stage2Model& model, const GafImagePair& pair);

struct Stage2Evaluation {
    double error_rate = 0.0;           // exact match over all gamma bits
    std::vector<double> bit_error;     // per step l_1 .. l_gamma
    std::size_t count = 0;
};

Stage2Evaluation evaluate_stage2(const Stage2Model& model, std::span<const LabeledPair> test);

}  // namespace availnet
