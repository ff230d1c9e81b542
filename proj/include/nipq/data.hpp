#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "nipq/rng.hpp"
#include "nipq/tensor.hpp"

namespace nipq {

enum class TaskKind { classification, regression };
enum class InputPrecision { fp, fixed_8bit };

inline const char* to_string(InputPrecision p) { return p == InputPrecision::fp ? "fp" : "fixed_8bit"; }

/// Inputs [N, ...] with labels [N] (class indices stored as reals) or targets [N, k].
struct Dataset {
    Tensor inputs;
    Tensor labels;
    TaskKind task = TaskKind::classification;
    std::size_t n_classes = 0;
    std::string split = "train";

    std::size_t size() const { return inputs.defined() ? inputs.dim(0) : 0; }

    Shape sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

    std::vector<int> class_labels(std::span<const std::size_t> idx) const {
        std::vector<int> out(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) out[i] = static_cast<int>(labels.data()[idx[i]]);
        return out;
    }

    /// Gathers rows `idx` of inputs and labels.
    std::pair<Tensor, Tensor> batch(std::span<const std::size_t> idx) const {
        const std::size_t row = inputs.numel() / size();
        const std::size_t lrow = labels.numel() / size();
        Shape xs = inputs.shape();
        Shape ys = labels.shape();
        xs[0] = ys[0] = idx.size();
        std::vector<float> x(idx.size() * row), y(idx.size() * lrow);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * row), row, x.begin() + static_cast<std::ptrdiff_t>(i * row));
            std::copy_n(labels.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * lrow), lrow, y.begin() + static_cast<std::ptrdiff_t>(i * lrow));
        }
        return {Tensor(xs, std::move(x)), Tensor(ys, std::move(y))};
    }

    Dataset subset(std::span<const std::size_t> idx, std::string split_name) const {
        auto [x, y] = batch(idx);
        return Dataset{x, y, task, n_classes, std::move(split_name)};
    }

    Dataset head(std::size_t n) const {
        std::vector<std::size_t> idx(std::min(n, size()));
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return subset(idx, split);
    }
};

/// Ordered mini-batch index lists; shuffled with `rng` when given.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, RngStream* rng) {
    if (batch_size == 0) throw Error("batch size must be positive");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (rng) rng->shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t s = 0; s < n; s += batch_size)
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch_size)));
    return batches;
}

/// Snaps values to the 256-level grid k/255 on [0, 1].
inline void snap_to_8bit_grid(Tensor& x) {
    for (auto& v : x.data()) v = static_cast<float>(std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

// ---------------------------------------------------------------------------
// IDX files (big-endian header: magic, dimension sizes, then unsigned bytes)

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::string hex32(std::uint32_t v) {
    std::ostringstream os;
    os << "0x" << std::hex;
    os.width(8);
    os.fill('0');
    os << v;
    return os.str();
}

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& path) {
    if (offset + 4 > buf.size())
        throw Error(path + ": truncated header at offset " + std::to_string(offset) + " (file has " +
                    std::to_string(buf.size()) + " bytes)");
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

/// Reads an IDX image file into [N, 1, rows, cols] scaled to [0, 1] (the exact grid k/255).
inline Tensor load_idx_images(const std::string& path) {
    const auto buf = detail::read_file(path);
    const std::uint32_t magic = detail::read_be32(buf, 0, path);
    if (magic != kIdxImageMagic)
        throw Error(path + ": bad magic at offset 0: expected " + detail::hex32(kIdxImageMagic) + ", found " +
                    detail::hex32(magic));
    const std::size_t n = detail::read_be32(buf, 4, path);
    const std::size_t rows = detail::read_be32(buf, 8, path);
    const std::size_t cols = detail::read_be32(buf, 12, path);
    const std::size_t expected = 16 + n * rows * cols;
    if (buf.size() != expected)
        throw Error(path + ": payload ends at offset " + std::to_string(buf.size()) + ", expected " +
                    std::to_string(expected) + " for " + std::to_string(n) + "x" + std::to_string(rows) + "x" +
                    std::to_string(cols));
    std::vector<float> data(n * rows * cols);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(buf[16 + i]) / 255.0f;
    return Tensor(Shape{n, 1, rows, cols}, std::move(data));
}

inline std::vector<int> load_idx_labels(const std::string& path) {
    const auto buf = detail::read_file(path);
    const std::uint32_t magic = detail::read_be32(buf, 0, path);
    if (magic != kIdxLabelMagic)
        throw Error(path + ": bad magic at offset 0: expected " + detail::hex32(kIdxLabelMagic) + ", found " +
                    detail::hex32(magic));
    const std::size_t n = detail::read_be32(buf, 4, path);
    if (buf.size() != 8 + n)
        throw Error(path + ": payload ends at offset " + std::to_string(buf.size()) + ", expected " +
                    std::to_string(8 + n) + " for " + std::to_string(n) + " labels");
    return std::vector<int>(buf.begin() + 8, buf.end());
}

inline Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                                InputPrecision precision = InputPrecision::fp, std::string split = "train") {
    Tensor x = load_idx_images(images_path);
    const auto labels = load_idx_labels(labels_path);
    if (labels.size() != x.dim(0))
        throw Error(labels_path + ": " + std::to_string(labels.size()) + " labels for " + std::to_string(x.dim(0)) +
                    " images in " + images_path);
    if (precision == InputPrecision::fixed_8bit) snap_to_8bit_grid(x);
    int max_label = 0;
    std::vector<float> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        y[i] = static_cast<float>(labels[i]);
        max_label = std::max(max_label, labels[i]);
    }
    return Dataset{x, Tensor(Shape{labels.size()}, std::move(y)), TaskKind::classification,
                   static_cast<std::size_t>(max_label) + 1, std::move(split)};
}

/// Writes [N, rows, cols] (or [N, 1, rows, cols]) bytes as an IDX image file.
inline void write_idx_images(const std::string& path, std::size_t n, std::size_t rows, std::size_t cols,
                             const std::vector<unsigned char>& pixels) {
    if (pixels.size() != n * rows * cols) throw Error("write_idx_images: pixel count mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    detail::write_be32(out, kIdxImageMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(n));
    detail::write_be32(out, static_cast<std::uint32_t>(rows));
    detail::write_be32(out, static_cast<std::uint32_t>(cols));
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

inline void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    detail::write_be32(out, kIdxLabelMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

// ---------------------------------------------------------------------------
// Synthetic sets

struct BlobOptions {
    std::size_t n = 1000;
    std::size_t classes = 4;
    std::size_t dim = 8;
    double separation = 6.0;  // distance between class centers
    double noise = 1.0;       // isotropic standard deviation
};

/// Class centers of make_gaussian_blobs. With dim ≥ classes every pair of centers is
/// exactly `separation` apart.
inline std::vector<std::vector<double>> blob_centers(const BlobOptions& o, std::uint64_t seed) {
    std::vector<std::vector<double>> centers(o.classes, std::vector<double>(o.dim, 0.0));
    if (o.dim >= o.classes) {
        for (std::size_t k = 0; k < o.classes; ++k) centers[k][k] = o.separation / std::numbers::sqrt2;
        return centers;
    }
    RngStream rng(seed, 0xb10b);
    for (auto& c : centers) {
        double norm = 0.0;
        for (auto& v : c) {
            v = rng.normal();
            norm += v * v;
        }
        for (auto& v : c) v *= o.separation / std::numbers::sqrt2 / std::sqrt(norm);
    }
    return centers;
}

namespace detail {

inline std::uint64_t split_stream(std::uint64_t base, const std::string& split) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : split) h = (h ^ c) * 0x100000001b3ULL;
    return base ^ h;
}

}  // namespace detail

/// Isotropic Gaussian clusters, balanced classes in shuffled order. Centers depend on the
/// seed only; samples depend on (seed, split).
inline Dataset make_gaussian_blobs(const BlobOptions& o, std::uint64_t seed, std::string split = "train") {
    if (o.n < o.classes || o.classes < 2) throw Error("make_gaussian_blobs needs n >= classes >= 2");
    const auto centers = blob_centers(o, seed);
    RngStream rng(seed, detail::split_stream(0xda7a, split));
    std::vector<std::size_t> order(o.n);
    for (std::size_t i = 0; i < o.n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<float> x(o.n * o.dim), y(o.n);
    for (std::size_t i = 0; i < o.n; ++i) {
        const std::size_t k = order[i] % o.classes;
        y[i] = static_cast<float>(k);
        for (std::size_t d = 0; d < o.dim; ++d) x[i * o.dim + d] = static_cast<float>(centers[k][d] + o.noise * rng.normal());
    }
    return Dataset{Tensor(Shape{o.n, o.dim}, std::move(x)), Tensor(Shape{o.n}, std::move(y)),
                   TaskKind::classification, o.classes, std::move(split)};
}

inline float regression_wave_target(float x) {
    return static_cast<float>(std::sin(2.0 * std::numbers::pi * static_cast<double>(x)));
}

/// x ~ U[0, 1), y = sin(2πx); inputs [n, 1], targets [n, 1]. Samples depend on (seed, split).
inline Dataset make_regression_wave(std::size_t n, std::uint64_t seed, std::string split = "train") {
    RngStream rng(seed, detail::split_stream(0x3a7e, split));
    std::vector<float> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = static_cast<float>(rng.uniform());
        y[i] = regression_wave_target(x[i]);
    }
    return Dataset{Tensor(Shape{n, 1}, std::move(x)), Tensor(Shape{n, 1}, std::move(y)), TaskKind::regression, 0,
                   std::move(split)};
}

}  // namespace nipq
