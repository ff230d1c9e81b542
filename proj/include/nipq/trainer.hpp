#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nipq/constraints.hpp"
#include "nipq/data.hpp"
#include "nipq/model.hpp"
#include "nipq/optim.hpp"

namespace nipq {

/// nipq: two-stage pipeline. lsq_ste: quant mode from the first step with fixed bits.
/// fp: every quantizer disabled, same schedule.
enum class TrainMethod { nipq, lsq_ste, fp };

inline const char* to_string(TrainMethod m) {
    switch (m) {
        case TrainMethod::nipq: return "nipq";
        case TrainMethod::lsq_ste: return "lsq_ste";
        case TrainMethod::fp: return "fp";
    }
    return "?";
}

struct TrainConfig {
    std::size_t stage1_epochs = 25;
    std::size_t stage2_epochs = 3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 1e-3;
    std::optional<double> stage2_lr;  // default lr / 10
    std::optional<double> quant_lr;   // alpha_raw / bit_raw LR; default lr
    double weight_decay = 1e-4;
    std::size_t warmup_epochs = 1;
    double eta_min_ratio = 0.01;
    std::size_t batch_size = 64;
    std::size_t bn_recalibrate_batches = 0;
    std::size_t calibration_samples = 256;
    std::vector<ResourceTarget> targets;
    std::uint64_t seed = 0;
    TrainMethod method = TrainMethod::nipq;
    bool learn_bits = true;  // false: bits stay at their initial rounded value throughout

    void validate() const {
        if (!(lr > 0.0)) throw Error("train.lr must be > 0");
        if (stage2_lr && !(*stage2_lr > 0.0)) throw Error("train.stage2_lr must be > 0");
        if (quant_lr && !(*quant_lr > 0.0)) throw Error("train.quant_lr must be > 0");
        if (!(eta_min_ratio > 0.0 && eta_min_ratio <= 1.0)) throw Error("train.eta_min_ratio must lie in (0, 1]");
        if (weight_decay < 0.0) throw Error("train.weight_decay must be >= 0");
        if (batch_size == 0) throw Error("train.batch_size must be positive");
        if (stage1_epochs > 0 && warmup_epochs >= stage1_epochs)
            throw Error("train.warmup_epochs must be smaller than train.stage1_epochs");
        for (const auto& t : targets) t.validate();
    }
};

struct LayerState {
    std::string name;
    double bit_w = 0.0, bit_a = 0.0;      // effective (continuous) bits; 0 when disabled
    double alpha_w = 0.0, alpha_a = 0.0;  // effective boundaries; 0 when disabled
};

struct MetricsRecord {
    int stage = 1;  // 0 = transition evaluation, 3 = after recalibration
    std::size_t epoch = 0;
    std::string split;   // "train" or the evaluation split name
    std::string mode;    // quantizer mode of the measurement
    double loss = 0.0;
    double metric = 0.0;  // accuracy (classification) or MSE (regression)
    double penalty = 0.0;
    double lr = 0.0;
    std::vector<LayerState> layers;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = std::numeric_limits<double>::quiet_NaN();  // classification only
    TaskKind task = TaskKind::classification;

    double metric() const { return task == TaskKind::classification ? accuracy : loss; }
};

inline std::vector<LayerState> layer_states(Network& net) {
    std::vector<LayerState> out;
    for (auto* l : net.quant_layers()) {
        LayerState s{l->name};
        if (l->w_quant.enabled) {
            s.bit_w = effective_bit_value(l->w_quant);
            s.alpha_w = effective_alpha_value(l->w_quant);
        }
        if (l->a_quant.enabled) {
            s.bit_a = effective_bit_value(l->a_quant);
            s.alpha_a = effective_alpha_value(l->a_quant);
        }
        out.push_back(s);
    }
    return out;
}

/// Task loss of `out` against a batch of targets.
inline Tensor task_loss(const Tensor& out, const Dataset& ds, std::span<const std::size_t> idx, const Tensor& y) {
    if (ds.task == TaskKind::classification) return softmax_cross_entropy(out, std::span<const int>(ds.class_labels(idx)));
    return mse(out, reshape(y, out.shape()));
}

/// Runs `fn` with every quantizer temporarily switched to `mode`.
template <class Fn>
auto with_mode(Network& net, QuantMode mode, Fn&& fn) {
    std::vector<std::pair<QuantParams<float>*, QuantMode>> saved;
    for (auto* l : net.quant_layers())
        for (auto* q : {&l->a_quant, &l->w_quant}) {
            saved.emplace_back(q, q->mode);
            q->mode = mode;
        }
    struct Restore {
        decltype(saved)& s;
        ~Restore() {
            for (auto& [q, m] : s) q->mode = m;
        }
    } restore{saved};
    return fn();
}

/// Deterministic evaluation in the network's current modes: zero noise, running BN statistics.
inline EvalResult evaluate(Network& net, const Dataset& ds, std::size_t batch_size = 256) {
    NoGradGuard guard;
    EvalResult r;
    r.task = ds.task;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    ForwardContext ctx;
    for (const auto& idx : make_batches(ds.size(), batch_size, nullptr)) {
        auto [x, y] = ds.batch(idx);
        const Tensor out = net.forward(x, ctx);
        loss_sum += static_cast<double>(task_loss(out, ds, idx, y).item()) * static_cast<double>(idx.size());
        if (ds.task == TaskKind::classification) {
            const std::size_t k = out.dim(1);
            const auto labels = ds.class_labels(idx);
            const auto o = out.data();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const auto row = o.subspan(i * k, k);
                const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
                if (best == labels[i]) ++correct;
            }
        }
    }
    r.loss = loss_sum / static_cast<double>(ds.size());
    if (ds.task == TaskKind::classification) r.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    return r;
}

inline EvalResult evaluate_quant(Network& net, const Dataset& ds, std::size_t batch_size = 256) {
    return with_mode(net, QuantMode::quant, [&] { return evaluate(net, ds, batch_size); });
}

/// Differentiable resource penalties over the network's effective bits.
inline std::vector<Tensor> resource_penalties(Network& net, const std::vector<ResourceTarget>& targets) {
    std::vector<Tensor> out;
    const auto layers = net.quant_layers();
    for (const auto& t : targets) {
        if (t.kind == ResourceKind::bops) {
            std::vector<LayerCost> costs;
            std::vector<Tensor> bw, ba;
            for (auto* l : layers) {
                costs.push_back(l->cost);
                bw.push_back(l->w_quant.enabled ? effective_bit(l->w_quant) : Tensor::scalar(32.0f));
                ba.push_back(l->a_quant.enabled ? effective_bit(l->a_quant)
                                                : Tensor::scalar(static_cast<float>(l->fixed_input_bits)));
            }
            out.push_back(bops_penalty(costs, bw, ba, t));
            continue;
        }
        const bool weights = t.kind == ResourceKind::avg_bit_weight;
        std::vector<Tensor> bits;
        std::vector<std::uint64_t> elems;
        for (auto* l : layers) {
            const auto& q = weights ? l->w_quant : l->a_quant;
            if (!q.enabled) continue;
            bits.push_back(effective_bit(q));
            elems.push_back(weights ? l->cost.n_weight_elems : l->cost.n_act_elems);
        }
        if (bits.empty()) throw Error(std::string("resource target ") + to_string(t.kind) + " but no such quantizers are enabled");
        out.push_back(avg_bit_penalty(bits, elems, t));
    }
    return out;
}

/// Deployed cost at rounded bits: element-weighted average bits of enabled quantizers and total BOPs.
struct ResourceSummary {
    double avg_bit_weight = 0.0;
    double avg_bit_activation = 0.0;
    std::uint64_t bops = 0;
};

inline ResourceSummary resource_summary(const Network& net) {
    ResourceSummary s;
    double wb = 0, we = 0, ab = 0, ae = 0;
    for (const auto* l : net.quant_layers()) {
        if (l->w_quant.enabled) {
            wb += rounded_bit(l->w_quant) * static_cast<double>(l->cost.n_weight_elems);
            we += static_cast<double>(l->cost.n_weight_elems);
        }
        if (l->a_quant.enabled) {
            ab += rounded_bit(l->a_quant) * static_cast<double>(l->cost.n_act_elems);
            ae += static_cast<double>(l->cost.n_act_elems);
        }
        s.bops += layer_bops_count(l->cost, deployed_weight_bits(*l), deployed_input_bits(*l));
    }
    s.avg_bit_weight = we > 0 ? wb / we : 0.0;
    s.avg_bit_activation = ae > 0 ? ab / ae : 0.0;
    return s;
}

/// BOPs of the network with every quantized tensor at `bits` (fixed tensors unchanged).
inline std::uint64_t uniform_bops(const Network& net, int bits) {
    std::uint64_t total = 0;
    for (const auto* l : net.quant_layers())
        total += layer_bops_count(l->cost, l->w_quant.enabled ? bits : 32,
                                  l->a_quant.enabled ? bits : l->fixed_input_bits);
    return total;
}

/// Recomputes batch-norm running statistics as the plain average over the first n_batches
/// batches. Weights are untouched.
inline void bn_recalibrate(Network& net, const Dataset& ds, std::size_t n_batches, std::size_t batch_size = 64) {
    if (net.batch_norms().empty() || n_batches == 0) return;
    NoGradGuard guard;
    const auto batches = make_batches(ds.size(), batch_size, nullptr);
    ForwardContext ctx;
    ctx.train = true;
    ctx.update_bn = true;
    for (std::size_t k = 0; k < n_batches && k < batches.size(); ++k) {
        ctx.bn_momentum = 1.0f / static_cast<float>(k + 1);
        auto [x, y] = ds.batch(batches[k]);
        net.forward(x, ctx);
    }
}

/// Deterministic calibration batch: the first n samples of a seed-fixed permutation.
inline Tensor calibration_batch(const Dataset& ds, std::size_t n, std::uint64_t seed) {
    RngStream rng(seed, 0xca1);
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    order.resize(std::min(n, order.size()));
    return ds.batch(order).first;
}

struct TrainResult {
    std::vector<MetricsRecord> records;
    std::optional<EvalResult> transition_eval;  // quant mode right after bits were frozen
    EvalResult final_eval;
};

using MetricsCallback = std::function<void(const MetricsRecord&)>;

namespace detail {

inline Optimizer make_optimizer(Network& net, const TrainConfig& cfg, double base_lr) {
    std::vector<ParamSlot> slots;
    for (auto& p : net.parameters()) {
        const bool quant = p.group == ParamGroup::quant_alpha || p.group == ParamGroup::quant_bit;
        slots.push_back({p.tensor, quant ? 0.0 : cfg.weight_decay, quant && cfg.quant_lr ? *cfg.quant_lr / base_lr : 1.0});
    }
    return Optimizer(cfg.optimizer, std::move(slots));
}

}  // namespace detail

/// Stage 1 trains weights, α and bits in noise mode against task + penalties; bits are then
/// frozen at their rounded values and stage 2 fine-tunes weights and α in quant mode.
inline TrainResult train_two_stage(Network& net, const Dataset& train, const Dataset& test, const TrainConfig& cfg,
                                   const MetricsCallback& on_record = {}) {
    cfg.validate();
    if (train.size() == 0) throw Error("training set is empty");
    TrainResult result;
    auto emit = [&](MetricsRecord r) {
        r.layers = layer_states(net);
        if (on_record) on_record(r);
        result.records.push_back(std::move(r));
    };

    if (cfg.method == TrainMethod::fp)
        for (auto* l : net.quant_layers()) l->a_quant.enabled = l->w_quant.enabled = false;
    if (cfg.calibration_samples > 0) calibrate_activation_alpha(net, calibration_batch(train, cfg.calibration_samples, cfg.seed));
    const bool penalize = cfg.method == TrainMethod::nipq;
    if (cfg.method == TrainMethod::lsq_ste || !cfg.learn_bits) net.freeze_bits();
    if (cfg.method == TrainMethod::lsq_ste) {
        net.set_mode(QuantMode::quant);
    } else {
        net.set_mode(QuantMode::noise);
    }

    const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    const RngStream shuffle_base(cfg.seed, 0x5f1e);
    const RngStream noise_base(cfg.seed, 0x0153);

    auto run_stage = [&](int stage, std::size_t epochs, double base_lr, std::size_t warmup_epochs, bool with_penalty) {
        if (epochs == 0) return;
        Optimizer opt = detail::make_optimizer(net, cfg, base_lr);
        const std::size_t total = epochs * steps_per_epoch;
        std::size_t step = 0;
        for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
            RngStream shuffle = shuffle_base.fork(static_cast<std::uint64_t>(stage) * 100000 + epoch);
            RngStream noise = noise_base.fork(static_cast<std::uint64_t>(stage) * 100000 + epoch);
            ForwardContext ctx;
            ctx.train = true;
            ctx.update_bn = true;
            ctx.rng = &noise;
            double loss_sum = 0.0, pen_sum = 0.0, lr = 0.0;
            for (const auto& idx : make_batches(train.size(), cfg.batch_size, &shuffle)) {
                lr = cosine_warmup_lr(step++, total, warmup_epochs * steps_per_epoch, base_lr, cfg.eta_min_ratio);
                opt.zero_grad();
                auto [x, y] = train.batch(idx);
                const Tensor task = task_loss(net.forward(x, ctx), train, idx, y);
                Tensor loss = task;
                if (with_penalty) {
                    const auto pens = resource_penalties(net, cfg.targets);
                    for (const auto& p : pens) pen_sum += p.item();
                    loss = total_loss(task, pens);
                }
                loss.backward();
                opt.step(lr);
                loss_sum += task.item();
            }
            const double nb = static_cast<double>(steps_per_epoch);
            emit({stage, epoch, "train", stage == 1 && cfg.method != TrainMethod::lsq_ste ? "noise" : "quant",
                  loss_sum / nb, std::numeric_limits<double>::quiet_NaN(), pen_sum / nb, lr, {}});
            const EvalResult ev = evaluate_quant(net, test);
            emit({stage, epoch, test.split, "quant", ev.loss, ev.metric(), 0.0, lr, {}});
        }
    };

    run_stage(1, cfg.stage1_epochs, cfg.lr, cfg.warmup_epochs, penalize && !cfg.targets.empty());

    net.freeze_bits();
    net.set_mode(QuantMode::quant);
    result.transition_eval = evaluate(net, test);
    emit({0, cfg.stage1_epochs, test.split, "quant", result.transition_eval->loss, result.transition_eval->metric(), 0.0,
          0.0, {}});

    run_stage(2, cfg.stage2_epochs, cfg.stage2_lr.value_or(cfg.lr * 0.1), 0, false);

    if (cfg.bn_recalibrate_batches > 0) {
        bn_recalibrate(net, train, cfg.bn_recalibrate_batches, cfg.batch_size);
        const EvalResult ev = evaluate(net, test);
        emit({3, 0, test.split, "quant", ev.loss, ev.metric(), 0.0, 0.0, {}});
    }
    result.final_eval = evaluate(net, test);
    return result;
}

}  // namespace nipq
