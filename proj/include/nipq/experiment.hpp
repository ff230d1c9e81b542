#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "nipq/config.hpp"
#include "nipq/data.hpp"
#include "nipq/model.hpp"

namespace nipq {

struct SensitivityPairOptions {
    std::size_t dim_a = 8, dim_b = 8, hidden = 16;
    double scale_a = 3.0;  // amplitude of the inputs feeding branch A
    std::size_t n_train = 1024, n_test = 512;
};

/// Teacher of the sensitivity pair: y = Σ v·relu(U_A x_A) + Σ v·relu(U_B x_B), normalized
/// to unit variance. x_A = scale_a·z_A, x_B = z_B with z standard normal, so branch A
/// carries scale_a times the signal of B through identically distributed weights.
struct PairTeacher {
    std::vector<double> u_a, u_b, v_a, v_b;
    double norm = 1.0;

    double operator()(std::span<const float> x, const SensitivityPairOptions& o) const {
        double y = 0.0;
        for (std::size_t j = 0; j < o.hidden; ++j) {
            double ha = 0.0, hb = 0.0;
            for (std::size_t i = 0; i < o.dim_a; ++i) ha += u_a[j * o.dim_a + i] * x[i];
            for (std::size_t i = 0; i < o.dim_b; ++i) hb += u_b[j * o.dim_b + i] * x[o.dim_a + i];
            y += v_a[j] * std::max(ha, 0.0) + v_b[j] * std::max(hb, 0.0);
        }
        return y / norm;
    }
};

namespace detail {

inline std::vector<float> pair_inputs(const SensitivityPairOptions& o, std::size_t n, RngStream& rng) {
    const std::size_t d = o.dim_a + o.dim_b;
    std::vector<float> x(n * d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i)
            x[r * d + i] = static_cast<float>((i < o.dim_a ? o.scale_a : 1.0) * rng.normal());
    return x;
}

}  // namespace detail

inline PairTeacher make_pair_teacher(const SensitivityPairOptions& o, std::uint64_t seed) {
    RngStream rng(seed, 0x7eac);
    PairTeacher t;
    auto fill = [&](std::vector<double>& v, std::size_t n, double sd) {
        v.resize(n);
        for (auto& x : v) x = sd * rng.normal();
    };
    fill(t.u_a, o.hidden * o.dim_a, 1.0 / std::sqrt(static_cast<double>(o.dim_a)));
    fill(t.u_b, o.hidden * o.dim_b, 1.0 / std::sqrt(static_cast<double>(o.dim_b)));
    fill(t.v_a, o.hidden, 1.0 / std::sqrt(static_cast<double>(o.hidden)));
    fill(t.v_b, o.hidden, 1.0 / std::sqrt(static_cast<double>(o.hidden)));
    RngStream ref(seed, 0x7eaf);
    const std::size_t n_ref = 4096;
    const auto x = detail::pair_inputs(o, n_ref, ref);
    const std::size_t d = o.dim_a + o.dim_b;
    double s = 0.0, ss = 0.0;
    for (std::size_t r = 0; r < n_ref; ++r) {
        const double y = t(std::span<const float>(x).subspan(r * d, d), o);
        s += y;
        ss += y * y;
    }
    const double mean = s / n_ref;
    t.norm = std::sqrt(std::max(ss / n_ref - mean * mean, 1e-12));
    return t;
}

inline Dataset make_sensitivity_pair_data(const SensitivityPairOptions& o, std::uint64_t seed, std::string split) {
    const auto teacher = make_pair_teacher(o, seed);
    const std::size_t n = split == "train" ? o.n_train : o.n_test;
    RngStream rng(seed, detail::split_stream(0x9a12, split));
    auto x = detail::pair_inputs(o, n, rng);
    const std::size_t d = o.dim_a + o.dim_b;
    std::vector<float> y(n);
    for (std::size_t r = 0; r < n; ++r) y[r] = static_cast<float>(teacher(std::span<const float>(x).subspan(r * d, d), o));
    return Dataset{Tensor(Shape{n, d}, std::move(x)), Tensor(Shape{n, 1}, std::move(y)), TaskKind::regression, 0,
                   std::move(split)};
}

struct Experiment {
    Dataset train, test;
    NetworkSpec spec;
};

inline float bit_to_raw(double bit) {
    const double s = (bit - 2.0) / 12.0;
    return static_cast<float>(std::log(s / (1.0 - s)));
}

/// Datasets and network spec described by a run config.
inline Experiment make_experiment(const RunConfig& c) {
    Experiment e;
    const auto& d = c.dataset;
    const auto& n = c.network;
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return (path.is_relative() && !c.base_dir.empty() ? c.base_dir / path : path).string();
    };
    if (d.kind == "blobs") {
        BlobOptions o{d.n_train, d.classes, d.dim, d.separation, d.noise};
        e.train = make_gaussian_blobs(o, c.seed, "train");
        o.n = d.n_test;
        e.test = make_gaussian_blobs(o, c.seed, "test");
    } else if (d.kind == "idx") {
        for (auto [key, val] : {std::pair{"train_images", &d.train_images}, {"train_labels", &d.train_labels},
                                {"test_images", &d.test_images}, {"test_labels", &d.test_labels}})
            if (!std::filesystem::exists(resolve(*val)))
                throw ConfigError(std::string("dataset.") + key + ": file not found: " + resolve(*val));
        try {
            e.train = load_idx_dataset(resolve(d.train_images), resolve(d.train_labels), d.input_precision, "train");
            e.test = load_idx_dataset(resolve(d.test_images), resolve(d.test_labels), d.input_precision, "test");
        } catch (const Error& err) {
            throw ConfigError(std::string("dataset: ") + err.what());
        }
    } else if (d.kind == "regression_wave") {
        e.train = make_regression_wave(d.n_train, c.seed, "train");
        e.test = make_regression_wave(d.n_test, c.seed, "test");
    } else {
        SensitivityPairOptions o;
        o.scale_a = d.scale_a;
        o.n_train = d.n_train;
        o.n_test = d.n_test;
        o.dim_a = o.dim_b = d.dim;
        e.train = make_sensitivity_pair_data(o, c.seed, "train");
        e.test = make_sensitivity_pair_data(o, c.seed, "test");
    }

    const Shape sample = e.train.sample_shape();
    const std::size_t flat = shape_numel(sample);
    const std::size_t outputs = e.train.task == TaskKind::classification ? e.train.n_classes : e.train.labels.numel() / e.train.size();
    if (n.kind == "mlp") {
        e.spec = mlp_spec(flat, n.hidden, outputs, n.batch_norm);
        if (sample.size() > 1) {
            e.spec.input_shape = sample;
            e.spec.layers.insert(e.spec.layers.begin(), LayerDesc::simple(LayerKind::flatten));
        }
    } else if (n.kind == "cnn") {
        if (sample.size() != 3) throw ConfigError("network.kind: cnn needs image inputs [C, H, W], dataset gives " + shape_str(sample));
        e.spec = cnn_spec(sample[0], sample[1], sample[2], n.channels, outputs);
    } else if (n.kind == "regressor") {
        if (flat != 1 || e.train.task != TaskKind::regression)
            throw ConfigError("network.kind: regressor needs a 1-D regression dataset");
        e.spec = regressor_spec(n.hidden.empty() ? 32 : n.hidden[0]);
    } else {
        if (d.kind != "sensitivity_pair") throw ConfigError("network.kind: sensitivity_pair needs dataset.kind sensitivity_pair");
        e.spec = sensitivity_pair_spec(d.dim, d.dim, n.hidden.empty() ? 16 : n.hidden[0]);
    }
    e.spec.first_last = n.first_last;
    e.spec.input_precision = d.input_precision;
    const auto xs = e.train.inputs.data();
    e.spec.input_signed = n.input_signed.value_or(*std::min_element(xs.begin(), xs.end()) < 0.0f);
    e.spec.quantize_weights = n.quantize_weights;
    e.spec.quantize_activations = n.kind != "sensitivity_pair" && n.quantize_activations;
    e.spec.weight_variant = n.quantizer;
    e.spec.noise_dist = n.noise_dist;
    e.spec.bit_noise = n.bit_noise;
    e.spec.init_bit_raw = bit_to_raw(n.init_bit);
    return e;
}

}  // namespace nipq
