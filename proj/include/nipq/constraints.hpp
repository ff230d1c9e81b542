#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nipq/ops.hpp"

namespace nipq {

enum class ResourceKind { avg_bit_weight, avg_bit_activation, bops };

inline const char* to_string(ResourceKind k) {
    switch (k) {
        case ResourceKind::avg_bit_weight: return "avg_bit_weight";
        case ResourceKind::avg_bit_activation: return "avg_bit_activation";
        case ResourceKind::bops: return "bops";
    }
    return "?";
}

struct ResourceTarget {
    ResourceKind kind = ResourceKind::avg_bit_weight;
    double target = 4.0;  // bits, or a BOPs count
    double lambda = 1.0;
    double huber_delta = 1.0;

    void validate() const {
        if (!(lambda >= 0.0)) throw Error(std::string("resource target ") + to_string(kind) + ": lambda must be >= 0");
        if (!(target > 0.0)) throw Error(std::string("resource target ") + to_string(kind) + ": target must be > 0");
        if (!(huber_delta > 0.0)) throw Error(std::string("resource target ") + to_string(kind) + ": huber_delta must be > 0");
    }
};

/// Per-layer counts at the configured input resolution (per sample for activations).
struct LayerCost {
    std::uint64_t macs = 1;
    std::uint64_t n_weight_elems = 1;
    std::uint64_t n_act_elems = 1;
};

/// λ · huber(Σ bit_i·e_i / Σ e_i − b_t, δ)
template <class T>
BasicTensor<T> avg_bit_penalty(const std::vector<BasicTensor<T>>& bits, const std::vector<std::uint64_t>& elems,
                               const ResourceTarget& target) {
    target.validate();
    if (bits.empty() || bits.size() != elems.size())
        throw Error("avg_bit_penalty needs equal-length nonempty lists, got " + std::to_string(bits.size()) + " bits and " +
                    std::to_string(elems.size()) + " counts");
    double total = 0.0;
    for (auto e : elems) total += static_cast<double>(e);
    BasicTensor<T> weighted = bits[0] * static_cast<T>(static_cast<double>(elems[0]) / total);
    for (std::size_t i = 1; i < bits.size(); ++i)
        weighted = weighted + bits[i] * static_cast<T>(static_cast<double>(elems[i]) / total);
    return huber(weighted - static_cast<T>(target.target), static_cast<T>(target.huber_delta)) *
           static_cast<T>(target.lambda);
}

/// macs · bit_w · bit_a
template <class T>
BasicTensor<T> layer_bops(const LayerCost& cost, const BasicTensor<T>& bit_w, const BasicTensor<T>& bit_a) {
    if (!(bit_w.item() > T(0)) || !(bit_a.item() > T(0))) throw Error("layer_bops needs positive bit-widths");
    return bit_w * bit_a * static_cast<T>(cost.macs);
}

/// Exact integer BOPs for integer bit-widths.
inline std::uint64_t layer_bops_count(const LayerCost& cost, int bit_w, int bit_a) {
    return cost.macs * static_cast<std::uint64_t>(bit_w) * static_cast<std::uint64_t>(bit_a);
}

/// λ_b · huber(Σ BOPs / target − 1, δ)
template <class T>
BasicTensor<T> bops_penalty(const std::vector<LayerCost>& costs, const std::vector<BasicTensor<T>>& bit_w,
                            const std::vector<BasicTensor<T>>& bit_a, const ResourceTarget& target) {
    target.validate();
    if (costs.empty() || costs.size() != bit_w.size() || costs.size() != bit_a.size())
        throw Error("bops_penalty needs equal-length nonempty layer lists");
    BasicTensor<T> total;
    for (std::size_t i = 0; i < costs.size(); ++i) {
        auto term = layer_bops(costs[i], bit_w[i], bit_a[i]);
        total = total.defined() ? total + term : term;
    }
    return huber(total / static_cast<T>(target.target) - T(1), static_cast<T>(target.huber_delta)) * static_cast<T>(target.lambda);
}

/// task + Σ penalties
template <class T>
BasicTensor<T> total_loss(const BasicTensor<T>& task, const std::vector<BasicTensor<T>>& penalties) {
    BasicTensor<T> out = task;
    for (const auto& p : penalties) out = out + p;
    return out;
}

}  // namespace nipq
