#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "availnet/layers.hpp"
#include "availnet/network.hpp"
#include "availnet/tensor.hpp"

namespace availnet {

struct LossValue {
    double value = 0.0;
    Tensor grad;  // d loss / d input
};

inline constexpr double kProbabilityClamp = 1e-12;

/// Mean over the batch of -sum_c y_c log p_c, with p clamped to
/// [1e-12, 1 - 1e-12]. Two classes give the binary cross-entropy.
LossValue cross_entropy_loss(const Tensor& probs, const Tensor& one_hot_targets);

/// Mean of squared differences over all elements.
LossValue mse_loss(const Tensor& pred, const Tensor& target);

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes);

/// theta - lr * grad, elementwise.
Tensor sgd_update(const Tensor& theta, const Tensor& grad, double learning_rate);

/// In-place SGD over parameters using their accumulated gradients.
void sgd_step(std::span<Parameter* const> params, double learning_rate);

struct SchedulerConfig {
    double alpha0 = 0.1;
    double delta = 0.5;
    std::size_t drop = 10;

    void validate() const;
};

/// alpha0 * delta^floor(epoch / drop).
double scheduler_rate(const SchedulerConfig& cfg, std::size_t epoch);

struct GradCheckOptions {
    double h = 1e-5;
    // 0 checks every entry; otherwise a seeded random subset per tensor.
    std::size_t max_entries_per_tensor = 0;
    std::uint64_t seed = 0;
    // Relative error is |a - n| / max(|a|, |n|, floor).
    double denominator_floor = 1e-8;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::string worst_name;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t entries_checked = 0;
};

struct NamedParameter {
    std::string name;
    Parameter* param;
};

/// Compares analytic gradients (computed by `analytic`, which must leave
/// d loss/d theta in every Parameter::grad) to central differences of `loss`.
GradCheckReport grad_check(const std::function<double()>& loss, const std::function<void()>& analytic,
                           std::span<const NamedParameter> params, const GradCheckOptions& options = {});

enum class LossKind { cross_entropy, mse };

/// Convenience form for a Sequential in training mode.
GradCheckReport grad_check(Sequential& network, const Tensor& input, const Tensor& targets, LossKind loss,
                           const GradCheckOptions& options = {});

}  // namespace availnet
