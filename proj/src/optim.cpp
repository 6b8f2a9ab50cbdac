#include "availnet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "availnet/error.hpp"
#include "availnet/random.hpp"

namespace availnet {

LossValue cross_entropy_loss(const Tensor& probs, const Tensor& one_hot_targets) {
    if (probs.shape() != one_hot_targets.shape() || probs.rank() != 2)
        throw ShapeError("cross entropy: probabilities " + to_string(probs.shape()) + " vs targets " +
                         to_string(one_hot_targets.shape()));
    const std::size_t batch = probs.dim(0);
    if (batch == 0) throw ShapeError("cross entropy: empty batch");
    LossValue out{0.0, Tensor(probs.shape())};
    const double inv_n = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double y = one_hot_targets[i];
        if (y == 0.0) continue;
        const double p = probs[i];
        const double pc = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
        out.value -= y * std::log(pc) * inv_n;
        if (pc == p) out.grad[i] = -y / p * inv_n;
    }
    return out;
}

LossValue mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("mse: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
    if (pred.size() == 0) throw ShapeError("mse: empty input");
    LossValue out{0.0, Tensor(pred.shape())};
    const double inv = 1.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        out.value += d * d * inv;
        out.grad[i] = 2.0 * d * inv;
    }
    return out;
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
    Tensor t({labels.size(), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) throw ValidationError("label " + std::to_string(labels[i]) + " out of range");
        t.at(i, labels[i]) = 1.0;
    }
    return t;
}

Tensor sgd_update(const Tensor& theta, const Tensor& grad, double learning_rate) {
    require_shape(grad, theta.shape(), "sgd gradient");
    Tensor out = theta;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= learning_rate * grad[i];
    return out;
}

void sgd_step(std::span<Parameter* const> params, double learning_rate) {
    for (Parameter* p : params) {
        require_shape(p->grad, p->value.shape(), "sgd gradient");
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= learning_rate * p->grad[i];
    }
}

void SchedulerConfig::validate() const {
    if (!(alpha0 > 0.0)) throw ValidationError("scheduler: alpha0 must be positive");
    if (!(delta > 0.0 && delta <= 1.0)) throw ValidationError("scheduler: delta must lie in (0, 1]");
    if (drop == 0) throw ValidationError("scheduler: drop must be a positive number of epochs");
}

double scheduler_rate(const SchedulerConfig& cfg, std::size_t epoch) {
    cfg.validate();
    return cfg.alpha0 * std::pow(cfg.delta, static_cast<double>(epoch / cfg.drop));
}

GradCheckReport grad_check(const std::function<double()>& loss, const std::function<void()>& analytic,
                           std::span<const NamedParameter> params, const GradCheckOptions& options) {
    for (const auto& np : params) np.param->zero_grad();
    analytic();
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const auto& np : params) grads.push_back(np.param->grad);

    GradCheckReport report;
    Rng rng(options.seed);
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& value = params[t].param->value;
        std::vector<std::size_t> idx(value.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (options.max_entries_per_tensor != 0 && idx.size() > options.max_entries_per_tensor) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(options.max_entries_per_tensor);
            std::sort(idx.begin(), idx.end());
        }
        for (std::size_t i : idx) {
            const double saved = value[i];
            value[i] = saved + options.h;
            const double up = loss();
            value[i] = saved - options.h;
            const double down = loss();
            value[i] = saved;
            const double numeric = (up - down) / (2.0 * options.h);
            const double a = grads[t][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
            const double rel = std::abs(a - numeric) / denom;
            ++report.entries_checked;
            if (rel > report.max_relative_error) {
                report.max_relative_error = rel;
                report.worst_name = params[t].name;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

GradCheckReport grad_check(Sequential& network, const Tensor& input, const Tensor& targets, LossKind loss,
                           const GradCheckOptions& options) {
    auto evaluate = [&](bool with_grad) {
        const Tensor out = network.forward(input, Mode::train);
        LossValue lv = loss == LossKind::cross_entropy ? cross_entropy_loss(out, targets) : mse_loss(out, targets);
        if (with_grad) network.backward(lv.grad);
        return lv.value;
    };
    std::vector<NamedParameter> params;
    network.visit_parameters("", [&](const std::string& name, Parameter& p) { params.push_back({name, &p}); });
    return grad_check([&] { return evaluate(false); }, [&] { evaluate(true); }, params, options);
}

}  // namespace availnet
