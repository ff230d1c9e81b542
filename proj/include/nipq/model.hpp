#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nipq/constraints.hpp"
#include "nipq/data.hpp"
#include "nipq/ops.hpp"
#include "nipq/quantizer.hpp"
#include "nipq/rng.hpp"

namespace nipq {

enum class FirstLastPolicy { quantize, keep_fp };
enum class LayerKind { dense, conv2d, batch_norm, relu, avg_pool, flatten, branch };

inline const char* to_string(FirstLastPolicy p) { return p == FirstLastPolicy::quantize ? "quantize" : "keep_fp"; }

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::batch_norm: return "batch_norm";
        case LayerKind::relu: return "relu";
        case LayerKind::avg_pool: return "avg_pool";
        case LayerKind::flatten: return "flatten";
        case LayerKind::branch: return "branch";
    }
    return "?";
}

/// A dense layer applied to input columns [begin, end).
struct BranchDesc {
    std::size_t begin = 0, end = 0, out = 0;
};

struct LayerDesc {
    LayerKind kind = LayerKind::dense;
    std::size_t in = 0, out = 0;  // features (dense) or channels (conv2d)
    std::size_t kernel = 3, stride = 1, pad = 1;
    std::size_t pool = 2;
    bool bias = true;
    bool keep_fp = false;  // never quantize this layer regardless of policy
    std::vector<BranchDesc> branches;

    static LayerDesc dense(std::size_t in, std::size_t out, bool bias = true) {
        LayerDesc d;
        d.in = in;
        d.out = out;
        d.bias = bias;
        return d;
    }
    static LayerDesc conv(std::size_t in, std::size_t out, std::size_t kernel = 3, std::size_t stride = 1,
                          std::size_t pad = 1, bool bias = false) {
        LayerDesc d = dense(in, out, bias);
        d.kind = LayerKind::conv2d;
        d.kernel = kernel;
        d.stride = stride;
        d.pad = pad;
        return d;
    }
    static LayerDesc batch_norm(std::size_t channels) {
        LayerDesc d = dense(channels, channels, false);
        d.kind = LayerKind::batch_norm;
        return d;
    }
    static LayerDesc simple(LayerKind kind) {
        LayerDesc d;
        d.kind = kind;
        return d;
    }
    static LayerDesc avg_pool(std::size_t k) {
        LayerDesc d = simple(LayerKind::avg_pool);
        d.pool = k;
        return d;
    }
};

struct NetworkSpec {
    std::string arch = "custom";
    Shape input_shape;  // per sample
    std::vector<LayerDesc> layers;
    FirstLastPolicy first_last = FirstLastPolicy::quantize;
    InputPrecision input_precision = InputPrecision::fp;
    bool input_signed = false;  // first-layer activation quantizer is signed when the raw input is
    bool quantize_weights = true;
    bool quantize_activations = true;
    QuantVariant weight_variant = QuantVariant::truncation;
    NoiseDist noise_dist = NoiseDist::gaussian;
    BitNoisePolicy bit_noise = BitNoisePolicy::inject;
    float init_bit_raw = 0.0f;  // 0 → 8 effective bits
};

// ---------------------------------------------------------------------------
// Builders for the stock architectures

/// Dense stack input → hidden... → classes with ReLU between layers.
inline NetworkSpec mlp_spec(std::size_t input_dim = 784, std::vector<std::size_t> hidden = {256, 128},
                            std::size_t classes = 10, bool batch_norm = false) {
    NetworkSpec s;
    s.arch = "mlp";
    s.input_shape = {input_dim};
    std::size_t in = input_dim;
    for (auto h : hidden) {
        s.layers.push_back(LayerDesc::dense(in, h, !batch_norm));
        if (batch_norm) s.layers.push_back(LayerDesc::batch_norm(h));
        s.layers.push_back(LayerDesc::simple(LayerKind::relu));
        in = h;
    }
    s.layers.push_back(LayerDesc::dense(in, classes));
    return s;
}

/// 3 × (conv3x3 → batch-norm → ReLU), average pool, dense classifier.
inline NetworkSpec cnn_spec(std::size_t channels_in, std::size_t height, std::size_t width,
                            std::vector<std::size_t> channels = {8, 16, 16}, std::size_t classes = 10,
                            std::size_t pool = 2) {
    NetworkSpec s;
    s.arch = "cnn";
    s.input_shape = {channels_in, height, width};
    std::size_t c = channels_in;
    for (auto f : channels) {
        s.layers.push_back(LayerDesc::conv(c, f));
        s.layers.push_back(LayerDesc::batch_norm(f));
        s.layers.push_back(LayerDesc::simple(LayerKind::relu));
        c = f;
    }
    s.layers.push_back(LayerDesc::avg_pool(pool));
    s.layers.push_back(LayerDesc::simple(LayerKind::flatten));
    s.layers.push_back(LayerDesc::dense(c * (height / pool) * (width / pool), classes));
    return s;
}

/// dense(1 → hidden) → ReLU → dense(hidden → 1)
inline NetworkSpec regressor_spec(std::size_t hidden = 32) {
    NetworkSpec s;
    s.arch = "regressor";
    s.input_shape = {1};
    s.layers.push_back(LayerDesc::dense(1, hidden));
    s.layers.push_back(LayerDesc::simple(LayerKind::relu));
    s.layers.push_back(LayerDesc::dense(hidden, 1));
    return s;
}

/// Two parallel hidden layers A (columns [0, dim_a)) and B (the rest) feeding a
/// full-precision linear readout.
inline NetworkSpec sensitivity_pair_spec(std::size_t dim_a = 8, std::size_t dim_b = 8, std::size_t hidden = 16) {
    NetworkSpec s;
    s.arch = "sensitivity_pair";
    s.input_shape = {dim_a + dim_b};
    LayerDesc br = LayerDesc::simple(LayerKind::branch);
    br.branches = {{0, dim_a, hidden}, {dim_a, dim_a + dim_b, hidden}};
    s.layers.push_back(br);
    s.layers.push_back(LayerDesc::simple(LayerKind::relu));
    s.layers.push_back(LayerDesc::dense(2 * hidden, 1));
    s.layers.back().keep_fp = true;
    s.quantize_activations = false;
    s.input_signed = true;
    return s;
}

// ---------------------------------------------------------------------------
// Runtime modules

struct ForwardContext {
    bool train = false;                  // batch-norm normalizes with batch statistics
    bool update_bn = false;              // fold batch statistics into running buffers
    std::optional<float> bn_momentum;    // overrides each layer's momentum when set
    RngStream* rng = nullptr;            // noise-mode draws; null means zero noise
    bool bypass_quant = false;           // full-precision forward
    std::vector<float>* input_stds = nullptr;  // filled with the std of every QuantLayer input
};

/// Dense or conv layer with a signed weight quantizer and an input-activation quantizer.
struct QuantLayer {
    std::string name;
    LayerKind kind = LayerKind::dense;
    Tensor weight;  // dense [out, in]; conv [F, C, kh, kw]
    Tensor bias;    // [out] or undefined
    std::size_t stride = 1, pad = 0;
    QuantParams<float> w_quant;
    QuantParams<float> a_quant;
    LayerCost cost;
    bool is_first = false, is_last = false;
    int fixed_input_bits = 32;  // bit-width charged to BOPs when a_quant is disabled

    QuantLayer clone() const {
        QuantLayer c = *this;
        c.weight = weight.clone();
        if (bias.defined()) c.bias = bias.clone();
        c.w_quant = w_quant.clone();
        c.a_quant = a_quant.clone();
        return c;
    }

    Tensor forward(const Tensor& x, ForwardContext& ctx) const {
        if (ctx.input_stds) {
            double s = 0.0, ss = 0.0;
            for (float v : x.data()) {
                s += v;
                ss += static_cast<double>(v) * v;
            }
            const double n = static_cast<double>(x.numel());
            ctx.input_stds->push_back(static_cast<float>(std::sqrt(std::max(0.0, ss / n - (s / n) * (s / n)))));
        }
        const Tensor xq = ctx.bypass_quant ? x : quantize(x, a_quant, ctx.rng);
        const Tensor wq = ctx.bypass_quant ? weight : quantize(weight, w_quant, ctx.rng);
        if (kind == LayerKind::dense) return linear(xq, wq, bias.defined() ? &bias : nullptr);
        Tensor y = conv2d(xq, wq, stride, pad);
        if (bias.defined()) y = y + reshape(bias, Shape{bias.numel(), 1, 1});
        return y;
    }
};

struct BatchNormLayer {
    std::string name;
    Tensor gamma, beta;
    std::vector<float> running_mean, running_var;
    float momentum = 0.1f;

    BatchNormLayer clone() const {
        BatchNormLayer c = *this;
        c.gamma = gamma.clone();
        c.beta = beta.clone();
        return c;
    }

    Tensor forward(const Tensor& x, ForwardContext& ctx) {
        return batch_norm(x, gamma, beta, std::span<float>(running_mean), std::span<float>(running_var), ctx.train,
                          ctx.train && ctx.update_bn, ctx.bn_momentum.value_or(momentum));
    }
};

struct ReluLayer {};
struct AvgPoolLayer {
    std::size_t k = 2;
};
struct FlattenLayer {};

struct BranchLayer {
    std::vector<BranchDesc> slices;
    std::vector<QuantLayer> layers;
};

using Module = std::variant<QuantLayer, BatchNormLayer, ReluLayer, AvgPoolLayer, FlattenLayer, BranchLayer>;

enum class ParamGroup { weight, bias, norm, quant_alpha, quant_bit };

struct NamedParam {
    std::string name;
    Tensor tensor;
    ParamGroup group;
};

/// Sequential network of QuantLayers and plumbing modules. Move-only; clone() deep-copies.
class Network {
public:
    NetworkSpec spec;
    std::vector<Module> modules;

    Network() = default;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    Network clone() const {
        Network n;
        n.spec = spec;
        for (const auto& m : modules)
            n.modules.push_back(std::visit(
                [](const auto& v) -> Module {
                    using V = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<V, QuantLayer> || std::is_same_v<V, BatchNormLayer>) {
                        return v.clone();
                    } else if constexpr (std::is_same_v<V, BranchLayer>) {
                        BranchLayer b{v.slices, {}};
                        for (const auto& l : v.layers) b.layers.push_back(l.clone());
                        return b;
                    } else {
                        return v;
                    }
                },
                m));
        return n;
    }

    Tensor forward(const Tensor& x, ForwardContext& ctx) {
        Tensor h = x;
        for (auto& m : modules) {
            h = std::visit(
                [&](auto& v) -> Tensor {
                    using V = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<V, QuantLayer>) return v.forward(h, ctx);
                    else if constexpr (std::is_same_v<V, BatchNormLayer>) return v.forward(h, ctx);
                    else if constexpr (std::is_same_v<V, ReluLayer>) return relu(h);
                    else if constexpr (std::is_same_v<V, AvgPoolLayer>) return avg_pool2d(h, v.k);
                    else if constexpr (std::is_same_v<V, FlattenLayer>) return flatten(h);
                    else {
                        std::vector<Tensor> outs;
                        for (std::size_t i = 0; i < v.layers.size(); ++i)
                            outs.push_back(v.layers[i].forward(slice_cols(h, v.slices[i].begin, v.slices[i].end), ctx));
                        return concat_cols(outs);
                    }
                },
                m);
        }
        return h;
    }

    std::vector<QuantLayer*> quant_layers() {
        std::vector<QuantLayer*> out;
        for (auto& m : modules) {
            if (auto* q = std::get_if<QuantLayer>(&m)) out.push_back(q);
            if (auto* b = std::get_if<BranchLayer>(&m))
                for (auto& l : b->layers) out.push_back(&l);
        }
        return out;
    }

    std::vector<const QuantLayer*> quant_layers() const {
        std::vector<const QuantLayer*> out;
        for (auto* q : const_cast<Network*>(this)->quant_layers()) out.push_back(q);
        return out;
    }

    QuantLayer& layer(const std::string& name) {
        for (auto* q : quant_layers())
            if (q->name == name) return *q;
        throw Error("no layer named " + name);
    }

    std::vector<BatchNormLayer*> batch_norms() {
        std::vector<BatchNormLayer*> out;
        for (auto& m : modules)
            if (auto* b = std::get_if<BatchNormLayer>(&m)) out.push_back(b);
        return out;
    }

    /// Every enabled quantizer, weights and activations interleaved in layer order.
    std::vector<QuantParams<float>*> active_quantizers() {
        std::vector<QuantParams<float>*> out;
        for (auto* l : quant_layers()) {
            if (l->a_quant.enabled) out.push_back(&l->a_quant);
            if (l->w_quant.enabled) out.push_back(&l->w_quant);
        }
        return out;
    }

    void set_mode(QuantMode mode) {
        for (auto* l : quant_layers()) {
            nipq::set_mode(l->a_quant, mode);
            nipq::set_mode(l->w_quant, mode);
        }
    }

    /// Fixes every bit-width at its current rounded value.
    void freeze_bits() {
        for (auto* q : active_quantizers()) {
            const float b = static_cast<float>(rounded_bit(*q));
            // Pin bit_raw exactly onto the integer so later rounding cannot drift.
            if (b > 2.0f && b < 14.0f) set_bit(*q, b);
            q->bit_frozen = true;
        }
    }

    /// Learnable tensors with their optimizer group. Disabled quantizers are skipped, as is
    /// bit_raw once frozen and alpha_raw of min-max quantizers (no gradient path).
    std::vector<NamedParam> parameters() {
        std::vector<NamedParam> out;
        for (auto& m : modules) {
            if (auto* b = std::get_if<BatchNormLayer>(&m)) {
                out.push_back({b->name + ".gamma", b->gamma, ParamGroup::norm});
                out.push_back({b->name + ".beta", b->beta, ParamGroup::norm});
            }
            std::vector<QuantLayer*> layers;
            if (auto* q = std::get_if<QuantLayer>(&m)) layers.push_back(q);
            if (auto* br = std::get_if<BranchLayer>(&m))
                for (auto& l : br->layers) layers.push_back(&l);
            for (auto* l : layers) {
                out.push_back({l->name + ".weight", l->weight, ParamGroup::weight});
                if (l->bias.defined()) out.push_back({l->name + ".bias", l->bias, ParamGroup::bias});
                for (auto* q : {&l->a_quant, &l->w_quant}) {
                    if (!q->enabled) continue;
                    const std::string prefix = l->name + (q == &l->a_quant ? ".a_quant" : ".w_quant");
                    if (q->variant == QuantVariant::truncation)
                        out.push_back({prefix + ".alpha_raw", q->alpha_raw, ParamGroup::quant_alpha});
                    if (!q->bit_frozen) out.push_back({prefix + ".bit_raw", q->bit_raw, ParamGroup::quant_bit});
                }
            }
        }
        return out;
    }

    void zero_grad() {
        for (auto& p : all_tensors()) p.tensor.zero_grad();
    }

    /// Every tensor a checkpoint must carry, learnable or not (quantizer scalars excluded).
    std::vector<NamedParam> all_tensors() {
        std::vector<NamedParam> out;
        for (auto* l : quant_layers()) {
            out.push_back({l->name + ".weight", l->weight, ParamGroup::weight});
            if (l->bias.defined()) out.push_back({l->name + ".bias", l->bias, ParamGroup::bias});
            out.push_back({l->name + ".a_quant.alpha_raw", l->a_quant.alpha_raw, ParamGroup::quant_alpha});
            out.push_back({l->name + ".a_quant.bit_raw", l->a_quant.bit_raw, ParamGroup::quant_bit});
            out.push_back({l->name + ".w_quant.alpha_raw", l->w_quant.alpha_raw, ParamGroup::quant_alpha});
            out.push_back({l->name + ".w_quant.bit_raw", l->w_quant.bit_raw, ParamGroup::quant_bit});
        }
        for (auto* b : batch_norms()) {
            out.push_back({b->name + ".gamma", b->gamma, ParamGroup::norm});
            out.push_back({b->name + ".beta", b->beta, ParamGroup::norm});
        }
        return out;
    }
};

namespace detail {

inline QuantLayer make_quant_layer(const std::string& name, LayerKind kind, Shape weight_shape, bool with_bias,
                                   std::size_t stride, std::size_t pad, RngStream rng) {
    QuantLayer l;
    l.name = name;
    l.kind = kind;
    l.stride = stride;
    l.pad = pad;
    const std::size_t fan_in = shape_numel(weight_shape) / weight_shape[0];
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<float> w(shape_numel(weight_shape));
    for (auto& v : w) v = static_cast<float>(std_dev * rng.normal());
    l.weight = Tensor(weight_shape, std::move(w), true);
    if (with_bias) l.bias = Tensor(Shape{weight_shape[0]}, 0.0f, true);
    return l;
}

}  // namespace detail

/// Instantiates a network from its spec: Kaiming-normal weights, weight α = max|w|,
/// activation α = 1 until calibrate_activation_alpha(), bit_raw = spec.init_bit_raw.
inline Network build_network(const NetworkSpec& spec, std::uint64_t seed) {
    if (spec.input_shape.empty()) throw Error("network spec has no input shape");
    Network net;
    net.spec = spec;
    Shape cur = spec.input_shape;
    std::size_t q_index = 0, bn_index = 0;
    const RngStream base(seed, 0x1a7e5);

    auto setup_quant = [&](QuantLayer& l, std::size_t act_elems, std::uint64_t macs) {
        l.cost = {std::max<std::uint64_t>(macs, 1), l.weight.numel(), std::max<std::uint64_t>(act_elems, 1)};
        for (auto* q : {&l.w_quant, &l.a_quant}) {
            q->noise_dist = spec.noise_dist;
            q->bit_noise = spec.bit_noise;
            q->bit_raw.data()[0] = spec.init_bit_raw;
        }
        l.w_quant.is_signed = true;
        l.w_quant.variant = spec.weight_variant;
        l.w_quant.meta = {l.weight.numel(), TensorRole::weight};
        l.a_quant.meta = {act_elems, TensorRole::activation};
        float wmax = 0.0f;
        for (float v : l.weight.data()) wmax = std::max(wmax, std::abs(v));
        set_alpha(l.w_quant, std::max(wmax, 1e-3f));
        set_alpha(l.a_quant, 1.0f);
    };

    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const auto& d = spec.layers[li];
        switch (d.kind) {
            case LayerKind::dense: {
                if (cur.size() != 1 || cur[0] != d.in)
                    throw Error("layer " + std::to_string(li) + ": dense expects " + std::to_string(d.in) +
                                " inputs, got shape " + shape_str(cur));
                auto l = detail::make_quant_layer("fc" + std::to_string(q_index), LayerKind::dense, {d.out, d.in}, d.bias,
                                                  1, 0, base.fork(q_index));
                setup_quant(l, d.in, static_cast<std::uint64_t>(d.in) * d.out);
                l.w_quant.enabled = !d.keep_fp;
                l.a_quant.enabled = !d.keep_fp;
                net.modules.push_back(std::move(l));
                ++q_index;
                cur = {d.out};
                break;
            }
            case LayerKind::conv2d: {
                if (cur.size() != 3 || cur[0] != d.in)
                    throw Error("layer " + std::to_string(li) + ": conv2d expects " + std::to_string(d.in) +
                                " channels, got shape " + shape_str(cur));
                const auto g = Conv2dGeometry::make({1, cur[0], cur[1], cur[2]}, {d.out, d.in, d.kernel, d.kernel},
                                                    d.stride, d.pad);
                auto l = detail::make_quant_layer("conv" + std::to_string(q_index), LayerKind::conv2d,
                                                  {d.out, d.in, d.kernel, d.kernel}, d.bias, d.stride, d.pad,
                                                  base.fork(q_index));
                setup_quant(l, shape_numel(cur),
                            static_cast<std::uint64_t>(d.out) * d.in * d.kernel * d.kernel * g.oh * g.ow);
                l.w_quant.enabled = !d.keep_fp;
                l.a_quant.enabled = !d.keep_fp;
                net.modules.push_back(std::move(l));
                ++q_index;
                cur = {d.out, g.oh, g.ow};
                break;
            }
            case LayerKind::batch_norm: {
                const std::size_t c = cur[0];
                if (d.in != 0 && d.in != c)
                    throw Error("layer " + std::to_string(li) + ": batch_norm over " + std::to_string(d.in) +
                                " channels, got shape " + shape_str(cur));
                BatchNormLayer b;
                b.name = "bn" + std::to_string(bn_index++);
                b.gamma = Tensor(Shape{c}, 1.0f, true);
                b.beta = Tensor(Shape{c}, 0.0f, true);
                b.running_mean.assign(c, 0.0f);
                b.running_var.assign(c, 1.0f);
                net.modules.push_back(std::move(b));
                break;
            }
            case LayerKind::relu: net.modules.push_back(ReluLayer{}); break;
            case LayerKind::avg_pool:
                if (cur.size() != 3 || cur[1] % d.pool != 0 || cur[2] % d.pool != 0)
                    throw Error("layer " + std::to_string(li) + ": pool " + std::to_string(d.pool) + " does not tile " +
                                shape_str(cur));
                net.modules.push_back(AvgPoolLayer{d.pool});
                cur = {cur[0], cur[1] / d.pool, cur[2] / d.pool};
                break;
            case LayerKind::flatten:
                net.modules.push_back(FlattenLayer{});
                cur = {shape_numel(cur)};
                break;
            case LayerKind::branch: {
                if (cur.size() != 1) throw Error("layer " + std::to_string(li) + ": branch expects a flat input");
                BranchLayer b;
                std::size_t total = 0;
                for (const auto& s : d.branches) {
                    if (s.end <= s.begin || s.end > cur[0])
                        throw Error("layer " + std::to_string(li) + ": branch slice out of range");
                    const std::size_t in = s.end - s.begin;
                    auto l = detail::make_quant_layer("fc" + std::to_string(q_index), LayerKind::dense, {s.out, in},
                                                      d.bias, 1, 0, base.fork(q_index));
                    setup_quant(l, in, static_cast<std::uint64_t>(in) * s.out);
                    b.slices.push_back(s);
                    b.layers.push_back(std::move(l));
                    ++q_index;
                    total += s.out;
                }
                net.modules.push_back(std::move(b));
                cur = {total};
                break;
            }
        }
    }

    auto layers = net.quant_layers();
    if (layers.empty()) throw Error("network spec has no dense or conv layers");
    // First layers: every QuantLayer of the first module that holds any.
    std::size_t first_module = 0;
    for (; first_module < net.modules.size(); ++first_module)
        if (std::holds_alternative<QuantLayer>(net.modules[first_module]) ||
            std::holds_alternative<BranchLayer>(net.modules[first_module]))
            break;
    if (auto* q = std::get_if<QuantLayer>(&net.modules[first_module])) q->is_first = true;
    if (auto* b = std::get_if<BranchLayer>(&net.modules[first_module]))
        for (auto& l : b->layers) l.is_first = true;
    layers.back()->is_last = true;

    for (auto* l : layers) {
        const bool fp_layer = !l->w_quant.enabled ||
                              (spec.first_last == FirstLastPolicy::keep_fp && (l->is_first || l->is_last));
        l->w_quant.enabled = spec.quantize_weights && !fp_layer;
        const bool fixed_input = l->is_first && spec.input_precision == InputPrecision::fixed_8bit;
        l->a_quant.enabled = spec.quantize_activations && !fp_layer && !fixed_input;
        l->a_quant.is_signed = l->is_first && spec.input_signed;
        l->fixed_input_bits = fixed_input ? 8 : 32;
    }
    return net;
}

/// Sets every enabled activation α to 3× the std of that layer's input on `batch`.
inline void calibrate_activation_alpha(Network& net, const Tensor& batch) {
    std::vector<float> stds;
    ForwardContext ctx;
    ctx.bypass_quant = true;
    ctx.input_stds = &stds;
    ctx.train = true;  // batch statistics, running buffers untouched
    net.forward(batch, ctx);
    auto layers = net.quant_layers();
    for (std::size_t i = 0; i < layers.size() && i < stds.size(); ++i)
        set_alpha(layers[i]->a_quant, stds[i] > 0.0f ? 3.0f * stds[i] : 1.0f);
}

/// Bit-width charged for a layer's weights and inputs: the rounded bit of an enabled
/// quantizer, 32 for full-precision tensors, 8 for an 8-bit fixed input.
inline int deployed_weight_bits(const QuantLayer& l) { return l.w_quant.enabled ? rounded_bit(l.w_quant) : 32; }
inline int deployed_input_bits(const QuantLayer& l) { return l.a_quant.enabled ? rounded_bit(l.a_quant) : l.fixed_input_bits; }

/// Replaces each quantized weight with its on-grid quant-mode value and freezes min-max ranges.
inline void export_quantized_weights(Network& net) {
    for (auto* l : net.quant_layers()) {
        auto& q = l->w_quant;
        if (!q.enabled) continue;
        const QuantMode saved = q.mode;
        q.mode = QuantMode::quant;
        if (q.variant == QuantVariant::minmax && !q.frozen_range) {
            const auto d = l->weight.data();
            q.frozen_range = std::array<float, 2>{*std::min_element(d.begin(), d.end()), *std::max_element(d.begin(), d.end())};
        }
        const Tensor wq = quantize(l->weight.detach(), q, nullptr);
        std::copy(wq.data().begin(), wq.data().end(), l->weight.data().begin());
        q.mode = saved;
    }
}

}  // namespace nipq
