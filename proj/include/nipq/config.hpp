#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nipq/data.hpp"
#include "nipq/model.hpp"
#include "nipq/trainer.hpp"

namespace nipq {

using Json = nlohmann::json;

/// Invalid or unreadable configuration (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

struct DatasetConfig {
    std::string kind = "blobs";  // blobs | idx | regression_wave | sensitivity_pair
    std::size_t n_train = 1000;
    std::size_t n_test = 500;
    std::size_t classes = 4;
    std::size_t dim = 8;
    double separation = 6.0;
    double noise = 1.0;
    double scale_a = 3.0;  // sensitivity_pair: input amplitude of branch A
    std::string train_images, train_labels, test_images, test_labels;
    InputPrecision input_precision = InputPrecision::fp;
};

struct NetworkConfig {
    std::string kind = "mlp";  // mlp | cnn | regressor | sensitivity_pair
    std::vector<std::size_t> hidden = {256, 128};
    std::vector<std::size_t> channels = {8, 16, 16};
    bool batch_norm = false;
    FirstLastPolicy first_last = FirstLastPolicy::quantize;
    QuantVariant quantizer = QuantVariant::truncation;
    NoiseDist noise_dist = NoiseDist::gaussian;
    BitNoisePolicy bit_noise = BitNoisePolicy::inject;
    double init_bit = 8.0;
    bool quantize_weights = true;
    bool quantize_activations = true;
    std::optional<bool> input_signed;  // default: true when the dataset has negative inputs
};

struct AnalysisConfig {
    std::vector<double> sweep_factors = {0.8, 0.9, 1.0, 1.1, 1.2};
    std::string sweep_target = "both";  // activation | weight | both
    std::size_t landscape_grid = 11;
    double landscape_radius = 1.0;
    std::size_t hessian_probes = 100;
    std::vector<double> compare_bits = {3.0};
    std::size_t compare_seeds = 5;
};

struct RunConfig {
    std::string experiment = "run";
    std::string output_dir = "runs";
    std::uint64_t seed = 0;
    DatasetConfig dataset;
    NetworkConfig network;
    TrainConfig train;
    AnalysisConfig analysis;
    std::filesystem::path base_dir;  // relative dataset paths resolve against this
};

namespace detail {

/// Reads fields of one JSON object, remembering which keys were consumed.
class ObjReader {
public:
    ObjReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const Json::exception& e) {
            throw ConfigError(sub(key) + ": " + e.what());
        }
    }

    template <class T>
    void get(const char* key, std::optional<T>& out) {
        seen_.insert(key);
        if (!j_.contains(key) || j_.at(key).is_null()) return;
        T v{};
        get(key, v);
        out = v;
    }

    template <class E>
    void get_enum(const char* key, E& out, std::initializer_list<E> values) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        if (!j_.at(key).is_string()) throw ConfigError(sub(key) + ": expected a string");
        const auto s = j_.at(key).get<std::string>();
        std::string allowed;
        for (E v : values) {
            if (s == to_string(v)) {
                out = v;
                return;
            }
            allowed += std::string(allowed.empty() ? "" : ", ") + to_string(v);
        }
        throw ConfigError(sub(key) + ": unknown value \"" + s + "\" (expected one of " + allowed + ")");
    }

    void choice(const char* key, std::string& out, std::initializer_list<const char*> values) {
        get(key, out);
        std::string allowed;
        for (const char* v : values) {
            if (out == v) return;
            allowed += std::string(allowed.empty() ? "" : ", ") + v;
        }
        throw ConfigError(sub(key) + ": unknown value \"" + out + "\" (expected one of " + allowed + ")");
    }

    /// Nested object reader (the key must hold an object when present).
    std::optional<ObjReader> object(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) return std::nullopt;
        return ObjReader(j_.at(key), sub(key));
    }

    const Json* raw(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    std::string where() const { return path_.empty() ? "<root>" : path_; }

    /// Rejects keys that were never asked for.
    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError(sub(k) + ": unknown key");
    }

private:
    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& key, const std::string& msg) {
    if (!ok) throw ConfigError(key + ": " + msg);
}

}  // namespace detail


inline ResourceTarget parse_target(const Json& j, const std::string& path) {
    detail::ObjReader r(j, path);
    ResourceTarget t;
    r.get_enum("kind", t.kind, {ResourceKind::avg_bit_weight, ResourceKind::avg_bit_activation, ResourceKind::bops});
    r.get("target", t.target);
    r.get("lambda", t.lambda);
    r.get("huber_delta", t.huber_delta);
    r.finish();
    try {
        t.validate();
    } catch (const Error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return t;
}

/// Parses a run configuration; unknown keys and bad values raise ConfigError naming the key path.
inline RunConfig parse_run_config(const Json& j, std::filesystem::path base_dir = {}) {
    RunConfig c;
    c.base_dir = std::move(base_dir);
    detail::ObjReader root(j, "");
    root.get("experiment", c.experiment);
    root.get("output_dir", c.output_dir);
    root.get("seed", c.seed);

    if (auto r = root.object("dataset")) {
        auto& d = c.dataset;
        r->choice("kind", d.kind, {"blobs", "idx", "regression_wave", "sensitivity_pair"});
        r->get("n_train", d.n_train);
        r->get("n_test", d.n_test);
        r->get("classes", d.classes);
        r->get("dim", d.dim);
        r->get("separation", d.separation);
        r->get("noise", d.noise);
        r->get("scale_a", d.scale_a);
        r->get("train_images", d.train_images);
        r->get("train_labels", d.train_labels);
        r->get("test_images", d.test_images);
        r->get("test_labels", d.test_labels);
        r->get_enum("input_precision", d.input_precision, {InputPrecision::fp, InputPrecision::fixed_8bit});
        r->finish();
        if (d.kind == "idx")
            for (auto [key, val] : {std::pair{"train_images", &d.train_images}, {"train_labels", &d.train_labels},
                                    {"test_images", &d.test_images}, {"test_labels", &d.test_labels}})
                detail::require(!val->empty(), r->sub(key), "required for dataset kind idx");
        detail::require(d.kind == "idx" || d.n_train > 0, r->sub("n_train"), "must be positive");
        detail::require(d.kind == "idx" || d.n_test > 0, r->sub("n_test"), "must be positive");
        detail::require(d.kind != "blobs" || d.n_train >= d.classes, r->sub("n_train"), "must be at least classes");
        detail::require(d.classes >= 2, r->sub("classes"), "must be at least 2");
        detail::require(d.dim >= 1, r->sub("dim"), "must be positive");
    }

    if (auto r = root.object("network")) {
        auto& n = c.network;
        r->choice("kind", n.kind, {"mlp", "cnn", "regressor", "sensitivity_pair"});
        r->get("hidden", n.hidden);
        r->get("channels", n.channels);
        r->get("batch_norm", n.batch_norm);
        r->get_enum("first_last", n.first_last, {FirstLastPolicy::quantize, FirstLastPolicy::keep_fp});
        r->get_enum("quantizer", n.quantizer, {QuantVariant::truncation, QuantVariant::minmax});
        r->get_enum("noise_dist", n.noise_dist, {NoiseDist::gaussian, NoiseDist::uniform});
        r->get_enum("bit_noise", n.bit_noise, {BitNoisePolicy::inject, BitNoisePolicy::ste});
        r->get("init_bit", n.init_bit);
        r->get("quantize_weights", n.quantize_weights);
        r->get("quantize_activations", n.quantize_activations);
        r->get("input_signed", n.input_signed);
        r->finish();
        detail::require(n.init_bit > 2.0 && n.init_bit < 14.0, r->sub("init_bit"), "must lie in (2, 14)");
        detail::require(!n.channels.empty(), r->sub("channels"), "must be nonempty");
    }

    if (auto r = root.object("train")) {
        auto& t = c.train;
        r->get("stage1_epochs", t.stage1_epochs);
        r->get("stage2_epochs", t.stage2_epochs);
        r->get_enum("optimizer", t.optimizer, {OptimizerKind::sgd_momentum, OptimizerKind::adam});
        r->get("lr", t.lr);
        r->get("stage2_lr", t.stage2_lr);
        r->get("quant_lr", t.quant_lr);
        r->get("weight_decay", t.weight_decay);
        r->get("warmup_epochs", t.warmup_epochs);
        r->get("eta_min_ratio", t.eta_min_ratio);
        r->get("batch_size", t.batch_size);
        r->get("bn_recalibrate_batches", t.bn_recalibrate_batches);
        r->get("calibration_samples", t.calibration_samples);
        r->get_enum("method", t.method, {TrainMethod::nipq, TrainMethod::lsq_ste, TrainMethod::fp});
        r->get("learn_bits", t.learn_bits);
        r->finish();
    }

    if (const Json* targets = root.raw("targets")) {
        if (!targets->is_array()) throw ConfigError("targets: expected an array");
        for (std::size_t i = 0; i < targets->size(); ++i)
            c.train.targets.push_back(parse_target((*targets)[i], "targets[" + std::to_string(i) + "]"));
    }

    if (auto r = root.object("analysis")) {
        auto& a = c.analysis;
        r->get("sweep_factors", a.sweep_factors);
        r->choice("sweep_target", a.sweep_target, {"activation", "weight", "both"});
        r->get("landscape_grid", a.landscape_grid);
        r->get("landscape_radius", a.landscape_radius);
        r->get("hessian_probes", a.hessian_probes);
        r->get("compare_bits", a.compare_bits);
        r->get("compare_seeds", a.compare_seeds);
        r->finish();
        detail::require(a.landscape_grid >= 1, r->sub("landscape_grid"), "must be positive");
        detail::require(a.hessian_probes >= 2, r->sub("hessian_probes"), "must be at least 2");
    }
    root.finish();
    c.train.seed = c.seed;
    try {
        c.train.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_run_config(j, path.parent_path());
}

inline Json to_json(const ResourceTarget& t) {
    return {{"kind", to_string(t.kind)}, {"target", t.target}, {"lambda", t.lambda}, {"huber_delta", t.huber_delta}};
}

/// Canonical form with every default filled in.
inline Json to_json(const RunConfig& c) {
    const auto& d = c.dataset;
    const auto& n = c.network;
    const auto& t = c.train;
    const auto& a = c.analysis;
    Json targets = Json::array();
    for (const auto& x : t.targets) targets.push_back(to_json(x));
    Json train = {{"stage1_epochs", t.stage1_epochs},
                  {"stage2_epochs", t.stage2_epochs},
                  {"optimizer", to_string(t.optimizer)},
                  {"lr", t.lr},
                  {"weight_decay", t.weight_decay},
                  {"warmup_epochs", t.warmup_epochs},
                  {"eta_min_ratio", t.eta_min_ratio},
                  {"batch_size", t.batch_size},
                  {"bn_recalibrate_batches", t.bn_recalibrate_batches},
                  {"calibration_samples", t.calibration_samples},
                  {"method", to_string(t.method)},
                  {"learn_bits", t.learn_bits}};
    if (t.stage2_lr) train["stage2_lr"] = *t.stage2_lr;
    if (t.quant_lr) train["quant_lr"] = *t.quant_lr;
    Json network = {{"kind", n.kind},
                    {"hidden", n.hidden},
                    {"channels", n.channels},
                    {"batch_norm", n.batch_norm},
                    {"first_last", to_string(n.first_last)},
                    {"quantizer", to_string(n.quantizer)},
                    {"noise_dist", to_string(n.noise_dist)},
                    {"bit_noise", to_string(n.bit_noise)},
                    {"init_bit", n.init_bit},
                    {"quantize_weights", n.quantize_weights},
                    {"quantize_activations", n.quantize_activations}};
    if (n.input_signed) network["input_signed"] = *n.input_signed;
    return {{"experiment", c.experiment},
            {"output_dir", c.output_dir},
            {"seed", c.seed},
            {"dataset",
             {{"kind", d.kind},
              {"n_train", d.n_train},
              {"n_test", d.n_test},
              {"classes", d.classes},
              {"dim", d.dim},
              {"separation", d.separation},
              {"noise", d.noise},
              {"scale_a", d.scale_a},
              {"train_images", d.train_images},
              {"train_labels", d.train_labels},
              {"test_images", d.test_images},
              {"test_labels", d.test_labels},
              {"input_precision", to_string(d.input_precision)}}},
            {"network", network},
            {"train", train},
            {"targets", targets},
            {"analysis",
             {{"sweep_factors", a.sweep_factors},
              {"sweep_target", a.sweep_target},
              {"landscape_grid", a.landscape_grid},
              {"landscape_radius", a.landscape_radius},
              {"hessian_probes", a.hessian_probes},
              {"compare_bits", a.compare_bits},
              {"compare_seeds", a.compare_seeds}}}};
}

/// FNV-1a 64 over bytes.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

/// Hash of the canonical config (seed included).
inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

// ---------------------------------------------------------------------------
// Network spec serialization (checkpoint manifests)

inline Json to_json(const LayerDesc& d) {
    Json j = {{"kind", to_string(d.kind)}};
    switch (d.kind) {
        case LayerKind::conv2d:
            j["kernel"] = d.kernel;
            j["stride"] = d.stride;
            j["pad"] = d.pad;
            [[fallthrough]];
        case LayerKind::dense:
            j["in"] = d.in;
            j["out"] = d.out;
            j["bias"] = d.bias;
            j["keep_fp"] = d.keep_fp;
            break;
        case LayerKind::batch_norm: j["channels"] = d.in; break;
        case LayerKind::avg_pool: j["pool"] = d.pool; break;
        case LayerKind::branch: {
            Json b = Json::array();
            for (const auto& s : d.branches) b.push_back({{"begin", s.begin}, {"end", s.end}, {"out", s.out}});
            j["branches"] = b;
            j["bias"] = d.bias;
            break;
        }
        default: break;
    }
    return j;
}

inline Json to_json(const NetworkSpec& s) {
    Json layers = Json::array();
    for (const auto& d : s.layers) layers.push_back(to_json(d));
    return {{"arch", s.arch},
            {"input_shape", s.input_shape},
            {"layers", layers},
            {"first_last", to_string(s.first_last)},
            {"input_precision", to_string(s.input_precision)},
            {"input_signed", s.input_signed},
            {"quantize_weights", s.quantize_weights},
            {"quantize_activations", s.quantize_activations},
            {"weight_variant", to_string(s.weight_variant)},
            {"noise_dist", to_string(s.noise_dist)},
            {"bit_noise", to_string(s.bit_noise)},
            {"init_bit_raw", s.init_bit_raw}};
}

inline LayerDesc layer_desc_from_json(const Json& j, const std::string& path) {
    detail::ObjReader r(j, path);
    LayerDesc d;
    r.get_enum("kind", d.kind,
               {LayerKind::dense, LayerKind::conv2d, LayerKind::batch_norm, LayerKind::relu, LayerKind::avg_pool,
                LayerKind::flatten, LayerKind::branch});
    r.get("in", d.in);
    r.get("out", d.out);
    r.get("kernel", d.kernel);
    r.get("stride", d.stride);
    r.get("pad", d.pad);
    r.get("pool", d.pool);
    r.get("bias", d.bias);
    r.get("keep_fp", d.keep_fp);
    if (d.kind == LayerKind::batch_norm) {
        r.get("channels", d.in);
        d.out = d.in;
    }
    if (const Json* b = r.raw("branches"))
        for (const auto& s : *b) d.branches.push_back({s.at("begin").get<std::size_t>(), s.at("end").get<std::size_t>(), s.at("out").get<std::size_t>()});
    r.finish();
    return d;
}

inline NetworkSpec network_spec_from_json(const Json& j, const std::string& path = "network") {
    detail::ObjReader r(j, path);
    NetworkSpec s;
    r.get("arch", s.arch);
    r.get("input_shape", s.input_shape);
    if (const Json* layers = r.raw("layers"))
        for (std::size_t i = 0; i < layers->size(); ++i)
            s.layers.push_back(layer_desc_from_json((*layers)[i], path + ".layers[" + std::to_string(i) + "]"));
    r.get_enum("first_last", s.first_last, {FirstLastPolicy::quantize, FirstLastPolicy::keep_fp});
    r.get_enum("input_precision", s.input_precision, {InputPrecision::fp, InputPrecision::fixed_8bit});
    r.get("input_signed", s.input_signed);
    r.get("quantize_weights", s.quantize_weights);
    r.get("quantize_activations", s.quantize_activations);
    r.get_enum("weight_variant", s.weight_variant, {QuantVariant::truncation, QuantVariant::minmax});
    r.get_enum("noise_dist", s.noise_dist, {NoiseDist::gaussian, NoiseDist::uniform});
    r.get_enum("bit_noise", s.bit_noise, {BitNoisePolicy::inject, BitNoisePolicy::ste});
    r.get("init_bit_raw", s.init_bit_raw);
    r.finish();
    return s;
}

}  // namespace nipq
