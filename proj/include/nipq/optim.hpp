#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "nipq/tensor.hpp"

namespace nipq {

enum class OptimizerKind { sgd_momentum, adam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd_momentum ? "sgd_momentum" : "adam"; }

/// Linear ramp 0 → lr over `warmup` steps, then cosine decay to lr·eta_min_ratio at step total−1.
inline double cosine_warmup_lr(std::size_t step, std::size_t total, std::size_t warmup, double lr,
                               double eta_min_ratio) {
    if (warmup >= total && total > 0)
        throw Error("warmup (" + std::to_string(warmup) + ") must be shorter than the schedule (" +
                    std::to_string(total) + ")");
    if (step >= total) throw Error("step " + std::to_string(step) + " outside schedule of " + std::to_string(total));
    if (step < warmup) return lr * static_cast<double>(step) / static_cast<double>(warmup);
    const std::size_t span = total - 1 - warmup;
    const double t = span == 0 ? 1.0 : static_cast<double>(step - warmup) / static_cast<double>(span);
    return lr * (eta_min_ratio + (1.0 - eta_min_ratio) * (1.0 + std::cos(std::numbers::pi * t)) / 2.0);
}

/// One optimizer slot: a parameter tensor with its own decay and LR multiplier.
struct ParamSlot {
    Tensor param;
    double weight_decay = 0.0;
    double lr_scale = 1.0;
};

/// SGD with momentum (buffer = g on the first step, then μ·buf + g) or Adam. Decay is added
/// to the gradient per slot, so quantizer slots are registered with zero decay.
class Optimizer {
public:
    OptimizerKind kind = OptimizerKind::sgd_momentum;
    double momentum = 0.9;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    Optimizer() = default;
    Optimizer(OptimizerKind k, std::vector<ParamSlot> slots) : kind(k), slots_(std::move(slots)) {
        state_a_.resize(slots_.size());
        state_b_.resize(slots_.size());
    }

    const std::vector<ParamSlot>& slots() const { return slots_; }
    std::size_t step_count() const { return steps_; }

    void step(double lr) {
        ++steps_;
        for (std::size_t i = 0; i < slots_.size(); ++i) {
            auto& s = slots_[i];
            auto data = s.param.data();
            if (!s.param.has_grad()) continue;
            const auto grad = s.param.grad();
            auto& a = state_a_[i];
            auto& b = state_b_[i];
            const double step_lr = lr * s.lr_scale;
            if (kind == OptimizerKind::sgd_momentum) {
                const bool first = a.empty();
                if (first) a.assign(data.size(), 0.0);
                for (std::size_t j = 0; j < data.size(); ++j) {
                    const double g = grad[j] + s.weight_decay * data[j];
                    a[j] = first ? g : momentum * a[j] + g;
                    data[j] = static_cast<float>(data[j] - step_lr * a[j]);
                }
            } else {
                if (a.empty()) {
                    a.assign(data.size(), 0.0);
                    b.assign(data.size(), 0.0);
                }
                const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps_));
                const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps_));
                for (std::size_t j = 0; j < data.size(); ++j) {
                    const double g = grad[j] + s.weight_decay * data[j];
                    a[j] = beta1 * a[j] + (1.0 - beta1) * g;
                    b[j] = beta2 * b[j] + (1.0 - beta2) * g * g;
                    data[j] = static_cast<float>(data[j] - step_lr * (a[j] / c1) / (std::sqrt(b[j] / c2) + eps));
                }
            }
        }
    }

    void zero_grad() {
        for (auto& s : slots_) s.param.zero_grad();
    }

private:
    std::vector<ParamSlot> slots_;
    std::vector<std::vector<double>> state_a_, state_b_;
    std::size_t steps_ = 0;
};

}  // namespace nipq
