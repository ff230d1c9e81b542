#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "nipq/ops.hpp"
#include "nipq/rng.hpp"
#include "nipq/tensor.hpp"

namespace nipq {

enum class QuantMode { noise, quant };
enum class NoiseDist { gaussian, uniform };
enum class BitNoisePolicy { inject, ste };
enum class QuantVariant { truncation, minmax };
enum class TensorRole { activation, weight };

inline const char* to_string(QuantMode m) { return m == QuantMode::noise ? "noise" : "quant"; }
inline const char* to_string(NoiseDist d) { return d == NoiseDist::gaussian ? "gaussian" : "uniform"; }
inline const char* to_string(BitNoisePolicy b) { return b == BitNoisePolicy::inject ? "inject" : "ste"; }
inline const char* to_string(QuantVariant v) { return v == QuantVariant::truncation ? "truncation" : "minmax"; }
inline const char* to_string(TensorRole r) { return r == TensorRole::activation ? "activation" : "weight"; }

/// Lowest and highest bit-width the noisy bit may take after injection.
inline constexpr double kMinNoisyBitUnsigned = 1.0;
inline constexpr double kMinNoisyBitSigned = 2.0;
inline constexpr double kMaxNoisyBit = 16.0;

struct QuantMeta {
    std::size_t n_elements = 1;
    TensorRole role = TensorRole::activation;
};

/// Learnable truncation boundary and bit-width of one quantizer plus its static policy.
///
/// The effective boundary is softplus(alpha_raw) and the effective bit-width is
/// 2 + 12·sigmoid(bit_raw), so both stay in range whatever the optimizer does.
template <class T>
struct QuantParams {
    BasicTensor<T> alpha_raw = BasicTensor<T>::scalar(T(0), true);
    BasicTensor<T> bit_raw = BasicTensor<T>::scalar(T(0), true);
    bool is_signed = false;
    NoiseDist noise_dist = NoiseDist::gaussian;
    BitNoisePolicy bit_noise = BitNoisePolicy::inject;
    QuantMode mode = QuantMode::noise;
    QuantVariant variant = QuantVariant::truncation;
    bool enabled = true;
    bool bit_frozen = false;  // bit_raw gets no gradient and no updates
    T alpha_scale = T(1);     // analysis-time multiplier on the effective boundary
    std::optional<std::array<T, 2>> frozen_range;  // min-max statistics after export
    QuantMeta meta;

    /// Deep copy: the clone owns fresh tensors.
    QuantParams clone() const {
        QuantParams c = *this;
        c.alpha_raw = alpha_raw.clone();
        c.bit_raw = bit_raw.clone();
        return c;
    }
};

template <class T>
void set_mode(QuantParams<T>& p, QuantMode mode) {
    p.mode = mode;
}

template <class T>
void set_alpha(QuantParams<T>& p, T alpha) {
    p.alpha_raw.data()[0] = softplus_inverse(alpha);
}

/// Sets bit_raw so that the effective bit-width equals `bit` (2 < bit < 14).
template <class T>
void set_bit(QuantParams<T>& p, T bit) {
    if (!(bit > T(2) && bit < T(14))) throw Error("bit-width " + std::to_string(bit) + " outside (2, 14)");
    const T s = (bit - T(2)) / T(12);
    p.bit_raw.data()[0] = std::log(s / (T(1) - s));
}

template <class T>
BasicTensor<T> effective_alpha(const QuantParams<T>& p) {
    auto a = softplus(p.alpha_raw);
    return p.alpha_scale == T(1) ? a : a * p.alpha_scale;
}

template <class T>
BasicTensor<T> effective_bit(const QuantParams<T>& p) {
    const auto raw = p.bit_frozen ? p.bit_raw.detach() : p.bit_raw;
    return T(2) + T(12) * sigmoid(raw);
}

template <class T>
T effective_alpha_value(const QuantParams<T>& p) {
    return softplus_value(p.alpha_raw.item()) * p.alpha_scale;
}

template <class T>
T effective_bit_value(const QuantParams<T>& p) {
    return effective_bit(p).item();
}

/// Integer bit-width used in quantization mode.
template <class T>
int rounded_bit(const QuantParams<T>& p) {
    return static_cast<int>(std::round(effective_bit_value(p)));
}

/// Number of steps between the lowest and highest level: 2^b − 1 unsigned, 2^(b−1) − 1 signed.
template <class T>
T level_span(T bit, bool is_signed) {
    return is_signed ? std::exp2(bit - T(1)) - T(1) : std::exp2(bit) - T(1);
}

/// Δ = α / (2^bit − 1) unsigned; Δ = α / (2^(bit−1) − 1) signed (symmetric levels).
template <class T>
BasicTensor<T> step_size(const BasicTensor<T>& alpha, const BasicTensor<T>& bit, bool is_signed) {
    if (is_signed && bit.item() < T(2))
        throw Error("signed step size needs bit >= 2, got " + std::to_string(bit.item()));
    if (!is_signed && bit.item() < T(1))
        throw Error("step size needs bit >= 1, got " + std::to_string(bit.item()));
    const auto levels = is_signed ? pow2(bit - T(1)) - T(1) : pow2(bit) - T(1);
    return alpha / levels;
}

/// Frozen random draws for one noise-mode forward: per-element unit noise (standard
/// normal, or 2u − 1 for uniform) and the standard-normal draw perturbing the bit-width.
template <class T>
struct NoiseSamples {
    std::vector<T> unit;
    T bit_z = T(0);

    static NoiseSamples zeros(std::size_t n) { return {std::vector<T>(n, T(0)), T(0)}; }

    static NoiseSamples draw(RngStream& rng, std::size_t n, NoiseDist dist) {
        NoiseSamples s;
        s.bit_z = static_cast<T>(rng.normal());
        s.unit.resize(n);
        for (auto& u : s.unit)
            u = dist == NoiseDist::gaussian ? static_cast<T>(rng.normal()) : static_cast<T>(2.0 * rng.uniform() - 1.0);
        return s;
    }
};

namespace detail {

// Bit-width used in noise mode: the continuous bit with injected noise, or its STE rounding.
template <class T>
BasicTensor<T> noisy_bit(const QuantParams<T>& p, T bit_z) {
    const auto eff = effective_bit(p);
    if (p.bit_noise == BitNoisePolicy::ste) return round_ste(eff);
    const T lo = p.is_signed ? T(kMinNoisyBitSigned) : T(kMinNoisyBitUnsigned);
    return clamp(eff + bit_z / T(2), lo, T(kMaxNoisyBit));
}

template <class T>
BasicTensor<T> unit_noise_tensor(const BasicTensor<T>& x, const NoiseSamples<T>& s) {
    if (s.unit.size() != x.numel())
        throw Error("noise sample count " + std::to_string(s.unit.size()) + " does not match tensor " + shape_str(x.shape()));
    return BasicTensor<T>(x.shape(), s.unit);
}

/// Truncation to [lo·α, α] with lo ∈ {0, −1}. Inside the range (bounds included) the
/// output is y itself and the gradient goes to y; outside it is the saturated boundary and
/// the gradient goes to α.
template <class T>
BasicTensor<T> truncate(const BasicTensor<T>& y, const BasicTensor<T>& alpha, bool is_signed) {
    const T a = alpha.item();
    const T lo = is_signed ? -a : T(0);
    std::vector<T> out(y.numel());
    const auto yd = y.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(yd[i], lo), a);
    return make_result<T>(y.shape(), std::move(out), {y.node_ptr(), alpha.node_ptr()},
                          [a, lo, is_signed](Node<T>& self) {
                              auto& py = *self.parents[0];
                              auto& pa = *self.parents[1];
                              T ga = T(0);
                              auto gy = py.requires_grad ? py.grad_buffer() : std::span<T>();
                              for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                  const T v = py.data[i];
                                  if (v > a)
                                      ga += self.grad[i];
                                  else if (v < lo)
                                      ga += is_signed ? -self.grad[i] : T(0);
                                  else if (!gy.empty())
                                      gy[i] += self.grad[i];
                              }
                              if (pa.requires_grad) pa.grad_buffer()[0] += ga;
                          });
}

}  // namespace detail

/// Pseudo-quantization noise injection: x + n with n of scale Δ/2, then truncation to
/// [0, α] (unsigned) or [−α, α] (signed). Gradients reach x, α (through both the noise
/// scale and the truncation) and bit_raw (through Δ).
template <class T>
BasicTensor<T> noise_forward(const BasicTensor<T>& x, const QuantParams<T>& p, const NoiseSamples<T>& samples) {
    if (p.mode != QuantMode::noise) throw Error("noise_forward called on a quantizer in quant mode");
    const auto alpha = effective_alpha(p);
    if (!(alpha.item() > T(0))) return constant_like(x, T(0));
    const auto bit = detail::noisy_bit(p, samples.bit_z);
    const auto delta = step_size(alpha, bit, p.is_signed);
    const auto noise = detail::unit_noise_tensor(x, samples) * (delta / T(2));
    return detail::truncate(x + noise, alpha, p.is_signed);
}

template <class T>
BasicTensor<T> noise_forward(const BasicTensor<T>& x, const QuantParams<T>& p, RngStream& rng) {
    return noise_forward(x, p, NoiseSamples<T>::draw(rng, x.numel(), p.noise_dist));
}

/// Linear quantization with the rounded, detached bit-width: round(clamp(x/Δ, lo, hi))·Δ.
/// Training gradients follow the straight-through decomposition: 1 w.r.t. x inside the
/// range, round(v) − v w.r.t. Δ inside and the saturated level at the edges.
template <class T>
BasicTensor<T> quant_forward(const BasicTensor<T>& x, const QuantParams<T>& p) {
    if (p.mode != QuantMode::quant) throw Error("quant_forward called on a quantizer in noise mode");
    const auto alpha = effective_alpha(p);
    if (!(alpha.item() > T(0))) return constant_like(x, T(0));
    const T bit = static_cast<T>(rounded_bit(p));
    const T span = level_span(bit, p.is_signed);
    const auto delta = alpha / BasicTensor<T>::scalar(span);
    const auto v = clamp(x / delta, p.is_signed ? -span : T(0), span);
    return round_ste(v) * delta;
}

/// Min-max linear quantization: levels tile [min(x), max(x)] (detached statistics, or the
/// frozen range). Noise mode adds Δ/2-scaled noise without truncation.
template <class T>
BasicTensor<T> minmax_forward(const BasicTensor<T>& x, const BasicTensor<T>& bit, QuantMode mode,
                              const std::type_identity_t<NoiseSamples<T>>* samples = nullptr,
                              std::optional<std::array<std::type_identity_t<T>, 2>> range = std::nullopt) {
    T lo, hi;
    if (range) {
        lo = (*range)[0];
        hi = (*range)[1];
    } else {
        const auto d = x.data();
        lo = *std::min_element(d.begin(), d.end());
        hi = *std::max_element(d.begin(), d.end());
    }
    if (mode == QuantMode::noise) {
        if (!samples) return x;
        const auto delta = BasicTensor<T>::scalar(hi - lo) / (pow2(bit) - T(1));
        return x + detail::unit_noise_tensor(x, *samples) * (delta / T(2));
    }
    if (!(hi > lo)) return x;
    const T span = std::exp2(std::round(bit.item())) - T(1);
    const T delta = (hi - lo) / span;
    const auto idx = clamp((x - lo) / delta, T(0), span);
    return round_ste(idx) * delta + lo;
}

/// Applies the quantizer according to its variant and mode. Noise draws come from `rng`;
/// a null rng means zero noise.
template <class T>
BasicTensor<T> quantize(const BasicTensor<T>& x, const QuantParams<T>& p, RngStream* rng) {
    if (!p.enabled) return x;
    if (p.variant == QuantVariant::minmax) {
        if (p.mode == QuantMode::quant)
            return minmax_forward(x, BasicTensor<T>::scalar(static_cast<T>(rounded_bit(p))), QuantMode::quant, nullptr,
                                  p.frozen_range);
        const auto samples = rng ? NoiseSamples<T>::draw(*rng, x.numel(), p.noise_dist) : NoiseSamples<T>::zeros(x.numel());
        return minmax_forward(x, detail::noisy_bit(p, samples.bit_z), QuantMode::noise, &samples, p.frozen_range);
    }
    if (p.mode == QuantMode::quant) return quant_forward(x, p);
    if (!rng) return noise_forward(x, p, NoiseSamples<T>::zeros(x.numel()));
    return noise_forward(x, p, *rng);
}

/// The explicit level set used in quant mode (for oracles and export).
template <class T>
std::vector<T> quant_levels(T alpha, int bit, bool is_signed) {
    const T span = level_span(static_cast<T>(bit), is_signed);
    const T delta = alpha / span;
    std::vector<T> levels;
    const long n = static_cast<long>(span);
    for (long k = is_signed ? -n : 0; k <= n; ++k) levels.push_back(static_cast<T>(k) * delta);
    return levels;
}

}  // namespace nipq
