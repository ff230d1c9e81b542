#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nipq/config.hpp"
#include "nipq/model.hpp"

namespace nipq {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian float32");

/// Writes `bytes` to `path` through a temporary file and a rename.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file_string(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
    auto p = manifest;
    return p.replace_extension(".bin");
}

struct CheckpointInfo {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string optimizer = "none";
    std::size_t optimizer_steps = 0;
};

namespace detail {

struct BlobEntry {
    std::string name;
    Shape shape;
    std::span<float> data;
};

inline std::vector<BlobEntry> blob_entries(Network& net) {
    std::vector<BlobEntry> out;
    for (auto* l : net.quant_layers()) {
        out.push_back({l->name + ".weight", l->weight.shape(), l->weight.data()});
        if (l->bias.defined()) out.push_back({l->name + ".bias", l->bias.shape(), l->bias.data()});
    }
    for (auto* b : net.batch_norms()) {
        out.push_back({b->name + ".gamma", b->gamma.shape(), b->gamma.data()});
        out.push_back({b->name + ".beta", b->beta.shape(), b->beta.data()});
        out.push_back({b->name + ".running_mean", {b->running_mean.size()}, std::span<float>(b->running_mean)});
        out.push_back({b->name + ".running_var", {b->running_var.size()}, std::span<float>(b->running_var)});
    }
    return out;
}

inline Json quantizer_json(const std::string& layer, const char* role, const QuantParams<float>& q) {
    Json j = {{"layer", layer},
              {"role", role},
              {"alpha_raw", q.alpha_raw.item()},
              {"bit_raw", q.bit_raw.item()},
              {"signed", q.is_signed},
              {"mode", to_string(q.mode)},
              {"variant", to_string(q.variant)},
              {"enabled", q.enabled},
              {"bit_frozen", q.bit_frozen},
              {"noise_dist", to_string(q.noise_dist)},
              {"bit_noise", to_string(q.bit_noise)},
              {"n_elements", q.meta.n_elements}};
    if (q.frozen_range) j["frozen_range"] = {(*q.frozen_range)[0], (*q.frozen_range)[1]};
    return j;
}

inline void quantizer_from_json(const Json& j, QuantParams<float>& q, const std::string& path) {
    ObjReader r(j, path);
    std::string layer, role;
    r.get("layer", layer);
    r.get("role", role);
    float a = 0, b = 0;
    r.get("alpha_raw", a);
    r.get("bit_raw", b);
    q.alpha_raw.data()[0] = a;
    q.bit_raw.data()[0] = b;
    r.get("signed", q.is_signed);
    r.get_enum("mode", q.mode, {QuantMode::noise, QuantMode::quant});
    r.get_enum("variant", q.variant, {QuantVariant::truncation, QuantVariant::minmax});
    r.get("enabled", q.enabled);
    r.get("bit_frozen", q.bit_frozen);
    r.get_enum("noise_dist", q.noise_dist, {NoiseDist::gaussian, NoiseDist::uniform});
    r.get_enum("bit_noise", q.bit_noise, {BitNoisePolicy::inject, BitNoisePolicy::ste});
    r.get("n_elements", q.meta.n_elements);
    if (const Json* fr = r.raw("frozen_range")) q.frozen_range = std::array<float, 2>{(*fr)[0].get<float>(), (*fr)[1].get<float>()};
    else q.frozen_range.reset();
    r.finish();
}

}  // namespace detail

/// Manifest JSON at `manifest` plus a float32 blob beside it (same stem, .bin).
inline void save_checkpoint(Network& net, const std::filesystem::path& manifest, const CheckpointInfo& info = {}) {
    const auto entries = detail::blob_entries(net);
    Json tensors = Json::array();
    std::string blob;
    for (const auto& e : entries) {
        tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", blob.size()}, {"nbytes", e.data.size() * 4}});
        blob.append(reinterpret_cast<const char*>(e.data.data()), e.data.size() * 4);
    }
    Json quantizers = Json::array();
    for (auto* l : net.quant_layers()) {
        quantizers.push_back(detail::quantizer_json(l->name, "activation", l->a_quant));
        quantizers.push_back(detail::quantizer_json(l->name, "weight", l->w_quant));
    }
    const Json m = {{"format", "nipq-checkpoint"},
                    {"version", 1},
                    {"blob", blob_path_for(manifest).filename().string()},
                    {"blob_bytes", blob.size()},
                    {"network", to_json(net.spec)},
                    {"tensors", tensors},
                    {"quantizers", quantizers},
                    {"optimizer", {{"kind", info.optimizer}, {"steps", info.optimizer_steps}}},
                    {"config_hash", info.config_hash},
                    {"seed", info.seed}};
    write_file_atomic(blob_path_for(manifest), blob);
    write_file_atomic(manifest, m.dump(2));
}

/// Overwrites the state of `net` with the checkpoint. The network must have the same
/// tensors; the first diverging tensor is named otherwise.
inline CheckpointInfo load_checkpoint_into(Network& net, const std::filesystem::path& manifest) {
    Json m;
    try {
        m = Json::parse(read_file_string(manifest));
    } catch (const Json::parse_error& e) {
        throw Error(manifest.string() + ": " + e.what());
    }
    if (m.value("format", "") != "nipq-checkpoint") throw Error(manifest.string() + ": not a checkpoint manifest");
    const auto blob_file = manifest.parent_path() / m.at("blob").get<std::string>();
    const std::string blob = read_file_string(blob_file);
    const std::size_t expected = m.at("blob_bytes").get<std::size_t>();
    if (blob.size() != expected)
        throw Error(blob_file.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                    std::to_string(blob.size()));

    auto entries = detail::blob_entries(net);
    const auto& tensors = m.at("tensors");
    std::size_t tiled = 0;
    for (std::size_t i = 0; i < std::max(entries.size(), tensors.size()); ++i) {
        if (i >= entries.size() || i >= tensors.size()) {
            const std::string name = i < entries.size() ? entries[i].name : tensors[i].at("name").get<std::string>();
            throw Error("checkpoint and network diverge at tensor " + name);
        }
        const auto& t = tensors[i];
        const auto name = t.at("name").get<std::string>();
        const auto shape = t.at("shape").get<Shape>();
        if (name != entries[i].name || shape != entries[i].shape)
            throw Error("checkpoint and network diverge at tensor " + entries[i].name + " (checkpoint has " + name + " " +
                        shape_str(shape) + ", network expects " + shape_str(entries[i].shape) + ")");
        const auto offset = t.at("offset").get<std::size_t>(), nbytes = t.at("nbytes").get<std::size_t>();
        if (offset != tiled || nbytes != entries[i].data.size() * 4 || offset + nbytes > blob.size())
            throw Error("checkpoint tensor " + name + " has a bad offset or length");
        std::memcpy(entries[i].data.data(), blob.data() + offset, nbytes);
        tiled += nbytes;
    }
    if (tiled != blob.size()) throw Error("checkpoint tensors cover " + std::to_string(tiled) + " of " + std::to_string(blob.size()) + " blob bytes");

    auto layers = net.quant_layers();
    const auto& qs = m.at("quantizers");
    if (qs.size() != 2 * layers.size()) throw Error("checkpoint quantizer count does not match the network");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        detail::quantizer_from_json(qs[2 * i], layers[i]->a_quant, "quantizers[" + std::to_string(2 * i) + "]");
        detail::quantizer_from_json(qs[2 * i + 1], layers[i]->w_quant, "quantizers[" + std::to_string(2 * i + 1) + "]");
    }
    CheckpointInfo info;
    info.config_hash = m.value("config_hash", "");
    info.seed = m.value("seed", std::uint64_t{0});
    info.optimizer = m.at("optimizer").value("kind", "none");
    info.optimizer_steps = m.at("optimizer").value("steps", std::size_t{0});
    return info;
}

/// Rebuilds the network recorded in the manifest and loads its state.
inline Network load_checkpoint(const std::filesystem::path& manifest, CheckpointInfo* info = nullptr) {
    Json m;
    try {
        m = Json::parse(read_file_string(manifest));
    } catch (const Json::parse_error& e) {
        throw Error(manifest.string() + ": " + e.what());
    }
    Network net = build_network(network_spec_from_json(m.at("network")), 0);
    const auto i = load_checkpoint_into(net, manifest);
    if (info) *info = i;
    return net;
}

// ---------------------------------------------------------------------------
// Integer-code export

struct ExportedTensor {
    std::string name;
    Shape shape;
    int bit = 0;
    bool is_signed = true;
    QuantVariant variant = QuantVariant::truncation;
    float alpha = 0.0f, delta = 0.0f, lo = 0.0f;
    std::vector<std::int32_t> codes;

    /// codes·Δ (+ lo for min-max), in the same float arithmetic as quant mode.
    std::vector<float> decode() const {
        std::vector<float> out(codes.size());
        for (std::size_t i = 0; i < codes.size(); ++i) {
            out[i] = static_cast<float>(codes[i]) * delta;
            if (variant == QuantVariant::minmax) out[i] = out[i] + lo;
        }
        return out;
    }
};

/// Integer codes of every quantized weight at its rounded bit-width. Min-max quantizers
/// without a frozen range get one from the current weights.
inline std::vector<ExportedTensor> export_codes(Network& net) {
    std::vector<ExportedTensor> out;
    for (auto* l : net.quant_layers()) {
        auto& q = l->w_quant;
        if (!q.enabled) continue;
        ExportedTensor e;
        e.name = l->name + ".weight";
        e.shape = l->weight.shape();
        e.bit = rounded_bit(q);
        e.is_signed = q.is_signed;
        e.variant = q.variant;
        const auto w = l->weight.data();
        e.codes.resize(w.size());
        if (q.variant == QuantVariant::truncation) {
            const Tensor alpha = effective_alpha(q);
            const float span = level_span(static_cast<float>(e.bit), q.is_signed);
            const Tensor delta = alpha / Tensor::scalar(span);
            e.alpha = alpha.item();
            e.delta = delta.item();
            if (!(e.alpha > 0.0f)) throw Error("cannot export " + e.name + ": boundary is not positive");
            const Tensor v = round_ste(clamp(l->weight.detach() / delta, q.is_signed ? -span : 0.0f, span));
            for (std::size_t i = 0; i < w.size(); ++i) e.codes[i] = static_cast<std::int32_t>(v.data()[i]);
        } else {
            if (!q.frozen_range) q.frozen_range = std::array<float, 2>{*std::min_element(w.begin(), w.end()), *std::max_element(w.begin(), w.end())};
            const float lo = (*q.frozen_range)[0], hi = (*q.frozen_range)[1];
            const float span = std::exp2(static_cast<float>(e.bit)) - 1.0f;
            e.lo = lo;
            e.alpha = hi - lo;
            e.delta = (hi - lo) / span;
            if (!(hi > lo)) throw Error("cannot export " + e.name + ": degenerate min-max range");
            const Tensor idx = round_ste(clamp((l->weight.detach() - lo) / e.delta, 0.0f, span));
            for (std::size_t i = 0; i < w.size(); ++i) e.codes[i] = static_cast<std::int32_t>(idx.data()[i]);
        }
        out.push_back(std::move(e));
    }
    return out;
}

/// Writes the codes as int8 (bit ≤ 8) or int16 containers plus a JSON metadata file.
inline void write_export(const std::vector<ExportedTensor>& tensors, const std::filesystem::path& json_path,
                         const Json& extra = Json::object()) {
    std::string blob;
    Json list = Json::array();
    for (const auto& t : tensors) {
        const bool small = t.bit <= 8 && (t.variant == QuantVariant::truncation || t.bit <= 7);
        Json j = {{"name", t.name},
                  {"shape", t.shape},
                  {"bit", t.bit},
                  {"signed", t.is_signed},
                  {"variant", to_string(t.variant)},
                  {"alpha", t.alpha},
                  {"delta", t.delta},
                  {"container", small ? "int8" : "int16"},
                  {"offset", blob.size()},
                  {"count", t.codes.size()}};
        if (t.variant == QuantVariant::minmax) j["lo"] = t.lo;
        list.push_back(j);
        for (auto c : t.codes) {
            if (small) {
                const auto v = static_cast<std::int8_t>(c);
                blob.append(reinterpret_cast<const char*>(&v), 1);
            } else {
                const auto v = static_cast<std::int16_t>(c);
                blob.append(reinterpret_cast<const char*>(&v), 2);
            }
        }
    }
    Json m = extra;
    m["format"] = "nipq-export";
    m["codes"] = blob_path_for(json_path).filename().string();
    m["tensors"] = list;
    write_file_atomic(blob_path_for(json_path), blob);
    write_file_atomic(json_path, m.dump(2));
}

inline std::vector<ExportedTensor> read_export(const std::filesystem::path& json_path) {
    const Json m = Json::parse(read_file_string(json_path));
    const std::string blob = read_file_string(json_path.parent_path() / m.at("codes").get<std::string>());
    std::vector<ExportedTensor> out;
    for (const auto& j : m.at("tensors")) {
        ExportedTensor t;
        t.name = j.at("name").get<std::string>();
        t.shape = j.at("shape").get<Shape>();
        t.bit = j.at("bit").get<int>();
        t.is_signed = j.at("signed").get<bool>();
        t.variant = j.at("variant").get<std::string>() == "minmax" ? QuantVariant::minmax : QuantVariant::truncation;
        t.alpha = j.at("alpha").get<float>();
        t.delta = j.at("delta").get<float>();
        t.lo = j.value("lo", 0.0f);
        const bool small = j.at("container").get<std::string>() == "int8";
        std::size_t off = j.at("offset").get<std::size_t>();
        const std::size_t count = j.at("count").get<std::size_t>();
        if (off + count * (small ? 1 : 2) > blob.size()) throw Error("export codes truncated for " + t.name);
        t.codes.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            if (small) {
                std::int8_t v;
                std::memcpy(&v, blob.data() + off + i, 1);
                t.codes[i] = t.variant == QuantVariant::minmax ? static_cast<std::uint8_t>(v) : v;
            } else {
                std::int16_t v;
                std::memcpy(&v, blob.data() + off + 2 * i, 2);
                t.codes[i] = t.variant == QuantVariant::minmax ? static_cast<std::uint16_t>(v) : v;
            }
        }
        out.push_back(std::move(t));
    }
    return out;
}

/// Replaces the network's weights with decoded export values.
inline void apply_export(Network& net, const std::vector<ExportedTensor>& tensors) {
    for (const auto& t : tensors) {
        bool found = false;
        for (auto* l : net.quant_layers())
            if (l->name + ".weight" == t.name) {
                if (l->weight.shape() != t.shape) throw Error("export shape mismatch at " + t.name);
                const auto v = t.decode();
                std::copy(v.begin(), v.end(), l->weight.data().begin());
                found = true;
            }
        if (!found) throw Error("export names unknown tensor " + t.name);
    }
}

}  // namespace nipq
