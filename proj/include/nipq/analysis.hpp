#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "nipq/experiment.hpp"
#include "nipq/model.hpp"
#include "nipq/ops.hpp"
#include "nipq/rng.hpp"
#include "nipq/trainer.hpp"

namespace nipq {

// ---------------------------------------------------------------------------
// Statistics helpers

/// Ranks starting at 1; ties share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw Error("correlation needs two equal-length series of length >= 2");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Spearman rank correlation (0 when either series is constant).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    return pearson(average_ranks(a), average_ranks(b));
}

// ---------------------------------------------------------------------------
// Hutchinson trace

struct TraceReport {
    std::vector<std::string> names;
    std::vector<std::size_t> n_elements;
    std::vector<double> trace;            // total per group
    std::vector<double> std_error;        // of the total
    std::vector<double> trace_per_element;
    std::size_t n_probes = 0;
};

/// Hutchinson estimate of Tr(H) per parameter group: mean of vᵀHv over Rademacher probes v
/// spanning all groups, split into per-group terms v_gᵀ(Hv)_g. Hessian-vector products come
/// from central differences of autodiff gradients with step 1e-3·max(‖w‖, 1)/‖v‖.
template <class T>
TraceReport hessian_trace(const std::function<BasicTensor<T>()>& loss_fn,
                          const std::vector<std::vector<BasicTensor<T>>>& groups, std::vector<std::string> names,
                          std::size_t n_probes, RngStream& rng) {
    if (n_probes < 2) throw Error("hessian_trace needs at least 2 probes, got " + std::to_string(n_probes));
    if (names.size() != groups.size()) throw Error("hessian_trace: one name per group required");
    std::vector<BasicTensor<T>> params;
    for (const auto& g : groups) params.insert(params.end(), g.begin(), g.end());

    double wnorm2 = 0.0, n_total = 0.0;
    for (auto& p : params) {
        for (T v : p.data()) wnorm2 += static_cast<double>(v) * v;
        n_total += static_cast<double>(p.numel());
    }
    const double h = 1e-3 * std::max(std::sqrt(wnorm2), 1.0) / std::sqrt(n_total);

    auto gradient = [&]() {
        for (auto& p : params) p.zero_grad();
        loss_fn().backward();
        std::vector<std::vector<T>> g;
        for (auto& p : params) g.push_back(p.grad_vector());
        return g;
    };
    auto shift = [&](const std::vector<std::vector<T>>& v, double s) {
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto d = params[k].data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(d[i] + s * v[k][i]);
        }
    };

    std::vector<std::vector<T>> saved;
    for (auto& p : params) saved.push_back(p.to_vector());
    std::vector<std::vector<double>> samples(groups.size());
    for (std::size_t probe = 0; probe < n_probes; ++probe) {
        std::vector<std::vector<T>> v;
        for (auto& p : params) v.push_back(rng.rademacher_vector<T>(p.numel()));
        shift(v, h);
        const auto gp = gradient();
        for (std::size_t k = 0; k < params.size(); ++k) std::copy(saved[k].begin(), saved[k].end(), params[k].data().begin());
        shift(v, -h);
        const auto gm = gradient();
        for (std::size_t k = 0; k < params.size(); ++k) std::copy(saved[k].begin(), saved[k].end(), params[k].data().begin());
        std::size_t k = 0;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            double term = 0.0;
            for (std::size_t t = 0; t < groups[gi].size(); ++t, ++k)
                for (std::size_t i = 0; i < v[k].size(); ++i)
                    term += static_cast<double>(v[k][i]) * (static_cast<double>(gp[k][i]) - gm[k][i]) / (2.0 * h);
            samples[gi].push_back(term);
        }
    }
    for (auto& p : params) p.zero_grad();

    TraceReport rep;
    rep.names = std::move(names);
    rep.n_probes = n_probes;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& s = samples[gi];
        const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
        double var = 0.0;
        for (double x : s) var += (x - mean) * (x - mean);
        var /= static_cast<double>(s.size() - 1);
        std::size_t n = 0;
        for (const auto& t : groups[gi]) n += t.numel();
        rep.n_elements.push_back(n);
        rep.trace.push_back(mean);
        rep.std_error.push_back(std::sqrt(var / static_cast<double>(s.size())));
        rep.trace_per_element.push_back(mean / static_cast<double>(n));
    }
    return rep;
}

/// Per-layer weight Hessian traces of the task loss on `ds` (first `max_samples` rows), with
/// quantizers bypassed and batch-norm in inference mode.
inline TraceReport layer_weight_traces(Network& net, const Dataset& ds, std::size_t n_probes, RngStream& rng,
                                       std::size_t max_samples = 512) {
    const Dataset sub = ds.head(max_samples);
    std::vector<std::size_t> idx(sub.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto [x, y] = sub.batch(idx);
    std::function<Tensor()> loss = [&, x = x, y = y]() {
        ForwardContext ctx;
        ctx.bypass_quant = true;
        return task_loss(net.forward(x, ctx), sub, idx, y);
    };
    std::vector<std::vector<Tensor>> groups;
    std::vector<std::string> names;
    for (auto* l : net.quant_layers()) {
        groups.push_back({l->weight});
        names.push_back(l->name);
    }
    auto rep = hessian_trace<float>(loss, groups, names, n_probes, rng);
    net.zero_grad();
    return rep;
}

// ---------------------------------------------------------------------------
// Noise-magnitude probe on quadratics

struct QuadraticProblem {
    std::size_t dim = 3;
    std::vector<double> h;  // row-major dim×dim, symmetric
    std::vector<double> w;  // evaluation point

    double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < dim; ++i) t += h[i * dim + i];
        return t;
    }
    double loss(std::span<const double> x) const {
        double s = 0.0;
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) s += x[i] * h[i * dim + j] * x[j];
        return 0.5 * s;
    }
};

/// H = Q·diag(eig)·Qᵀ with a random orthogonal Q (Gram-Schmidt on Gaussian columns).
inline QuadraticProblem random_quadratic(std::size_t dim, std::vector<double> eig, RngStream& rng) {
    if (eig.size() != dim) throw Error("random_quadratic: need one eigenvalue per dimension");
    std::vector<std::vector<double>> q;
    while (q.size() < dim) {
        std::vector<double> c(dim);
        for (auto& v : c) v = rng.normal();
        for (const auto& b : q) {
            double d = 0;
            for (std::size_t i = 0; i < dim; ++i) d += c[i] * b[i];
            for (std::size_t i = 0; i < dim; ++i) c[i] -= d * b[i];
        }
        double n = 0;
        for (double v : c) n += v * v;
        n = std::sqrt(n);
        if (n < 1e-8) continue;
        for (auto& v : c) v /= n;
        q.push_back(std::move(c));
    }
    QuadraticProblem p;
    p.dim = dim;
    p.h.assign(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j)
            for (std::size_t k = 0; k < dim; ++k) p.h[i * dim + j] += q[k][i] * eig[k] * q[k][j];
    p.w.assign(dim, 0.0);
    return p;
}

/// L(w) + ε²/6·Tr(H): expected loss under uniform noise U[−ε, ε] on every coordinate.
inline double noisy_quadratic_closed_form(const QuadraticProblem& p, double eps) {
    return p.loss(p.w) + eps * eps / 6.0 * p.trace();
}

/// Monte-Carlo mean of L(w + u), u ~ U[−ε, ε]^dim.
inline double noisy_quadratic_monte_carlo(const QuadraticProblem& p, double eps, std::size_t n_samples, RngStream& rng) {
    std::vector<double> x(p.dim);
    double s = 0.0;
    for (std::size_t k = 0; k < n_samples; ++k) {
        for (std::size_t i = 0; i < p.dim; ++i) x[i] = p.w[i] + eps * (2.0 * rng.uniform() - 1.0);
        s += p.loss(x);
    }
    return s / static_cast<double>(n_samples);
}

struct NoiseProbeOptions {
    std::size_t n_steps = 200;
    std::size_t samples_per_step = 64;
    double lr = 0.1;
    double eps_init = 0.5;
    bool train_w = false;
    bool linear = false;  // loss cᵀw with c = first row of H: zero Hessian
};

struct NoiseProbeResult {
    std::vector<double> eps;  // ε before each step, then the final value
    std::vector<double> loss;
};

/// Trains the noise magnitude ε (and optionally w) by SGD on the sampled loss
/// mean_s L(w + ε·u_s), u_s ~ U[−1, 1]^dim.
inline NoiseProbeResult noise_magnitude_probe(const QuadraticProblem& p, const NoiseProbeOptions& o, RngStream& rng) {
    const std::size_t d = p.dim, s = o.samples_per_step;
    std::vector<float> hf(p.h.begin(), p.h.end()), wf(p.w.begin(), p.w.end());
    Tensor H(Shape{d, d}, hf);
    Tensor w(Shape{1, d}, wf, o.train_w);
    Tensor eps = Tensor::scalar(static_cast<float>(o.eps_init), true);
    Tensor c(Shape{d, 1}, std::vector<float>(hf.begin(), hf.begin() + static_cast<std::ptrdiff_t>(d)));
    NoiseProbeResult r;
    for (std::size_t step = 0; step < o.n_steps; ++step) {
        r.eps.push_back(eps.item());
        eps.zero_grad();
        w.zero_grad();
        Tensor u(Shape{s, d}, rng.uniform_vector<float>(s * d, -1.0, 1.0));
        const Tensor x = w + u * eps;  // [s, d]
        const Tensor loss = o.linear ? mean(matmul(x, c)) : sum(matmul(x, H) * x) * (0.5f / static_cast<float>(s));
        loss.backward();
        r.loss.push_back(loss.item());
        eps.data()[0] -= static_cast<float>(o.lr) * eps.grad()[0];
        if (o.train_w)
            for (std::size_t i = 0; i < d; ++i) w.data()[i] -= static_cast<float>(o.lr) * w.grad()[i];
    }
    r.eps.push_back(eps.item());
    return r;
}

// ---------------------------------------------------------------------------
// Truncation-boundary probe: one fixed dense layer behind a learnable activation clip

struct BoundaryProbeOptions {
    std::size_t dim = 16, outputs = 4;
    std::size_t n_samples = 2048;
    std::size_t batch_size = 64;
    std::size_t n_steps = 150;
    std::size_t sign_batches = 200;
    double init_alpha_fraction = 0.25;  // of max|x|
    int bit = 8;
    double lr = 0.05;
};

struct BoundaryProbeResult {
    std::vector<double> alpha;  // α before each step, then the final value
    double initial_loss = 0.0, final_loss = 0.0;
    double negative_gradient_fraction = 0.0;  // of single-batch ∂L/∂α at the initial α
    double spearman = 0.0;                    // of α against step index
};

/// Trains only the boundary α of an unsigned quant-mode activation quantizer feeding a fixed
/// linear teacher layer y = W*x (x ~ U[0, 1]^dim, W* ≥ 0) with MSE loss.
inline BoundaryProbeResult boundary_probe(const BoundaryProbeOptions& o, std::uint64_t seed) {
    RngStream rng(seed, 0xa1fa);
    Tensor W(Shape{o.outputs, o.dim}, rng.uniform_vector<float>(o.outputs * o.dim, 0.0, 1.0));
    Tensor X(Shape{o.n_samples, o.dim}, rng.uniform_vector<float>(o.n_samples * o.dim, 0.0, 1.0));
    const Tensor Y = linear(X, W);
    const auto xd = X.data();
    const float xmax = *std::max_element(xd.begin(), xd.end());

    QuantParams<float> q;
    q.mode = QuantMode::quant;
    q.bit_frozen = true;
    set_bit(q, static_cast<float>(o.bit));
    set_alpha(q, static_cast<float>(o.init_alpha_fraction * xmax));

    const Dataset ds{X, Y, TaskKind::regression, 0, "train"};
    auto batch_loss = [&](const std::vector<std::size_t>& idx) {
        auto [x, y] = ds.batch(idx);
        return mse(linear(quantize(x, q, nullptr), W), y);
    };
    std::vector<std::size_t> all(o.n_samples);
    std::iota(all.begin(), all.end(), 0);

    BoundaryProbeResult r;
    r.initial_loss = batch_loss(all).item();

    RngStream sign_rng = rng.fork(1);
    std::size_t negative = 0;
    for (std::size_t b = 0; b < o.sign_batches; ++b) {
        std::vector<std::size_t> idx(o.batch_size);
        for (auto& i : idx) i = sign_rng.below(o.n_samples);
        q.alpha_raw.zero_grad();
        batch_loss(idx).backward();
        if (q.alpha_raw.grad()[0] < 0.0f) ++negative;
    }
    r.negative_gradient_fraction = o.sign_batches ? static_cast<double>(negative) / static_cast<double>(o.sign_batches) : 0.0;

    RngStream train_rng = rng.fork(2);
    std::vector<double> steps;
    for (std::size_t step = 0; step < o.n_steps; ++step) {
        r.alpha.push_back(effective_alpha_value(q));
        std::vector<std::size_t> idx(o.batch_size);
        for (auto& i : idx) i = train_rng.below(o.n_samples);
        q.alpha_raw.zero_grad();
        batch_loss(idx).backward();
        q.alpha_raw.data()[0] -= static_cast<float>(o.lr) * q.alpha_raw.grad()[0];
    }
    r.alpha.push_back(effective_alpha_value(q));
    r.final_loss = batch_loss(all).item();
    std::vector<double> t(r.alpha.size());
    std::iota(t.begin(), t.end(), 0.0);
    r.spearman = spearman(t, r.alpha);
    return r;
}

// ---------------------------------------------------------------------------
// Robustness sweep over α scale factors

enum class SweepTarget { activation, weight, both };

inline const char* to_string(SweepTarget t) {
    switch (t) {
        case SweepTarget::activation: return "activation";
        case SweepTarget::weight: return "weight";
        case SweepTarget::both: return "both";
    }
    return "?";
}

inline SweepTarget parse_sweep_target(const std::string& s) {
    for (auto t : {SweepTarget::activation, SweepTarget::weight, SweepTarget::both})
        if (s == to_string(t)) return t;
    throw Error("unknown sweep target \"" + s + "\"");
}

struct SweepResult {
    std::vector<double> factors;
    std::vector<double> metric;  // accuracy or MSE per factor
    std::vector<double> loss;
    double baseline_metric = 0.0;
    SweepTarget target = SweepTarget::both;
};

/// Scales every targeted truncation α by f (bits unchanged), evaluates in quant mode, restores.
inline SweepResult robustness_sweep(Network& net, const Dataset& ds, const std::vector<double>& factors,
                                    SweepTarget target) {
    if (std::find(factors.begin(), factors.end(), 1.0) == factors.end())
        throw Error("sweep factors must include 1.0");
    for (double f : factors)
        if (!(f >= 0.0)) throw Error("sweep factors must be >= 0");
    std::vector<QuantParams<float>*> qs;
    for (auto* l : net.quant_layers()) {
        if (target != SweepTarget::weight && l->a_quant.enabled) qs.push_back(&l->a_quant);
        if (target != SweepTarget::activation && l->w_quant.enabled) qs.push_back(&l->w_quant);
    }
    SweepResult r;
    r.factors = factors;
    r.target = target;
    r.baseline_metric = evaluate_quant(net, ds).metric();
    for (double f : factors) {
        for (auto* q : qs) q->alpha_scale = static_cast<float>(f);
        const auto ev = evaluate_quant(net, ds);
        for (auto* q : qs) q->alpha_scale = 1.0f;
        r.metric.push_back(ev.metric());
        r.loss.push_back(ev.loss);
    }
    return r;
}

/// Trapezoid integral of (baseline − metric) over factors in [lo, hi] (sorted factors).
inline double integrated_drop(const SweepResult& r, double lo = 0.8, double hi = 1.2) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < r.factors.size(); ++i)
        if (r.factors[i] >= lo - 1e-12 && r.factors[i] <= hi + 1e-12)
            pts.emplace_back(r.factors[i], r.baseline_metric - r.metric[i]);
    std::sort(pts.begin(), pts.end());
    double area = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        area += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) / 2.0;
    return area;
}

// ---------------------------------------------------------------------------
// Loss landscape

struct LandscapeResult {
    std::vector<double> coords;  // shared by both axes
    std::vector<double> loss;    // row-major [a][b]
    double center_loss = 0.0;

    std::size_t grid() const { return coords.size(); }
    /// Mean of (loss − center) over cells within `radius` (max-norm) of the center.
    double mean_increase(double radius) const {
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < grid(); ++i)
            for (std::size_t j = 0; j < grid(); ++j)
                if (std::abs(coords[i]) <= radius + 1e-12 && std::abs(coords[j]) <= radius + 1e-12) {
                    s += loss[i * grid() + j] - center_loss;
                    ++n;
                }
        return n ? s / static_cast<double>(n) : 0.0;
    }
};

/// Random direction with each filter (first-axis slice) rescaled to the norm of the matching
/// weight filter.
inline std::vector<float> filter_normalized_direction(const Tensor& w, RngStream& rng) {
    auto d = rng.normal_vector<float>(w.numel());
    const std::size_t rows = w.dim(0), per = w.numel() / rows;
    const auto wd = w.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double nw = 0, nd = 0;
        for (std::size_t i = r * per; i < (r + 1) * per; ++i) {
            nw += static_cast<double>(wd[i]) * wd[i];
            nd += static_cast<double>(d[i]) * d[i];
        }
        const double s = nd > 0 ? std::sqrt(nw / nd) : 0.0;
        for (std::size_t i = r * per; i < (r + 1) * per; ++i) d[i] = static_cast<float>(d[i] * s);
    }
    return d;
}

/// Quant-mode loss at w + a·d₁ + b·d₂ for a, b on a grid over [−radius, radius].
/// Weights are restored afterwards.
inline LandscapeResult landscape_slice(Network& net, const Dataset& ds, std::size_t grid, double radius, RngStream& rng) {
    if (grid == 0) throw Error("landscape grid must be positive");
    auto layers = net.quant_layers();
    std::vector<std::vector<float>> saved, d1, d2;
    for (auto* l : layers) saved.push_back(l->weight.to_vector());
    for (auto* l : layers) d1.push_back(filter_normalized_direction(l->weight, rng));
    for (auto* l : layers) d2.push_back(filter_normalized_direction(l->weight, rng));
    LandscapeResult r;
    for (std::size_t i = 0; i < grid; ++i)
        r.coords.push_back(grid == 1 ? 0.0
                                     : radius * (2.0 * static_cast<double>(i) - static_cast<double>(grid - 1)) /
                                           static_cast<double>(grid - 1));
    r.center_loss = evaluate_quant(net, ds).loss;
    for (double a : r.coords)
        for (double b : r.coords) {
            for (std::size_t k = 0; k < layers.size(); ++k) {
                auto w = layers[k]->weight.data();
                for (std::size_t i = 0; i < w.size(); ++i)
                    w[i] = saved[k][i] + static_cast<float>(a) * d1[k][i] + static_cast<float>(b) * d2[k][i];
            }
            r.loss.push_back(evaluate_quant(net, ds).loss);
        }
    for (std::size_t k = 0; k < layers.size(); ++k)
        std::copy(saved[k].begin(), saved[k].end(), layers[k]->weight.data().begin());
    return r;
}

// ---------------------------------------------------------------------------
// Sensitivity report

struct SensitivityRow {
    std::string name;
    double trace = 0.0, trace_per_element = 0.0, std_error = 0.0;
    int bit_w = 0;
};

struct SensitivityReport {
    std::vector<SensitivityRow> rows;
    double rank_correlation = 0.0;  // Spearman of per-element trace against assigned weight bits
};

inline SensitivityReport sensitivity_report(Network& net, const Dataset& ds, std::size_t n_probes, RngStream& rng) {
    const auto tr = layer_weight_traces(net, ds, n_probes, rng);
    SensitivityReport rep;
    std::vector<double> t, b;
    const auto layers = net.quant_layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        rep.rows.push_back({tr.names[i], tr.trace[i], tr.trace_per_element[i], tr.std_error[i],
                            deployed_weight_bits(*layers[i])});
        if (layers[i]->w_quant.enabled) {
            t.push_back(tr.trace_per_element[i]);
            b.push_back(rep.rows.back().bit_w);
        }
    }
    rep.rank_correlation = t.size() >= 2 ? spearman(t, b) : 0.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Sensitivity pair construction check

struct PairCheck {
    double trace_a = 0.0, trace_b = 0.0, ratio = 0.0;
    double fp_loss = 0.0;
};

/// FP recipe for the pair: plain momentum SGD keeps |U_j|² − v_j² near its initial value per
/// hidden unit, so both branches end with comparable readout weights.
inline TrainConfig sensitivity_pair_fp_config(std::uint64_t seed) {
    TrainConfig c;
    c.method = TrainMethod::fp;
    c.optimizer = OptimizerKind::sgd_momentum;
    c.lr = 5e-3;
    c.stage1_epochs = 200;
    c.stage2_epochs = 0;
    c.warmup_epochs = 1;
    c.batch_size = 64;
    c.seed = seed;
    return c;
}

/// FP-trains the pair network, then measures per-layer weight traces. Throws when the
/// A/B trace ratio is below `min_ratio`.
inline PairCheck verify_sensitivity_pair(Network& net, const Dataset& train, const Dataset& test, const TrainConfig& fp_cfg,
                                         std::size_t n_probes, double min_ratio = 5.0) {
    TrainConfig cfg = fp_cfg;
    cfg.method = TrainMethod::fp;
    train_two_stage(net, train, test, cfg);
    PairCheck c;
    c.fp_loss = evaluate(net, test).loss;
    RngStream rng(cfg.seed, 0x7ace);
    const auto tr = layer_weight_traces(net, train, n_probes, rng);
    c.trace_a = tr.trace.at(0);
    c.trace_b = tr.trace.at(1);
    c.ratio = c.trace_a / c.trace_b;
    if (!(c.ratio >= min_ratio))
        throw Error("sensitivity pair check failed: trace ratio " + std::to_string(c.ratio) + " < " +
                    std::to_string(min_ratio) + " (re-seed)");
    return c;
}

// ---------------------------------------------------------------------------
// Truncation versus min-max comparison

struct CompareRow {
    std::string variant;
    double bits = 0.0;
    std::uint64_t seed = 0;
    double metric = 0.0;
};

/// One weight-only quantized run of `base` at a fixed bit-width with the given variant.
inline CompareRow compare_run(const RunConfig& base, double bits, std::uint64_t seed, QuantVariant variant) {
    RunConfig c = base;
    c.seed = seed;
    c.train.seed = seed;
    c.network.quantizer = variant;
    c.network.init_bit = bits;
    c.network.quantize_activations = false;
    c.train.learn_bits = false;
    c.train.targets.clear();
    const auto e = make_experiment(c);
    Network net = build_network(e.spec, seed);
    const auto res = train_two_stage(net, e.train, e.test, c.train);
    return {to_string(variant), bits, seed, res.final_eval.metric()};
}

/// Trains weight-only quantized copies of `base` at each fixed bit-width with the
/// truncation and the min-max variant, one run per seed.
inline std::vector<CompareRow> compare_truncation_minmax(const RunConfig& base, const std::vector<double>& bits,
                                                         std::size_t n_seeds) {
    std::vector<CompareRow> rows;
    for (double b : bits)
        for (std::size_t s = 0; s < n_seeds; ++s)
            for (auto variant : {QuantVariant::truncation, QuantVariant::minmax})
                rows.push_back(compare_run(base, b, base.seed + s, variant));
    return rows;
}

}  // namespace nipq
