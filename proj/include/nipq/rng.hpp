#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace nipq {

/// Counter-based random stream: draw k of stream (seed, stream_id) is a pure function of
/// (seed, stream_id, k), so results do not depend on thread count or interleaving with
/// other streams.
class RngStream {
public:
    RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0)
        : seed_(seed), stream_(stream_id) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }
    std::uint64_t position() const { return counter_; }
    void seek(std::uint64_t position) { counter_ = position; }

    /// Independent child stream, e.g. one per layer or per probe.
    RngStream fork(std::uint64_t tag) const {
        return RngStream(seed_, mix(stream_ ^ mix(tag + 0x632be59bd9b4e019ULL)));
    }

    std::uint64_t next_u64() {
        const std::uint64_t k = counter_++;
        return mix(seed_ ^ mix(stream_ + 0x9e3779b97f4a7c15ULL * (k + 1)));
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; consumes two draws per sample.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double rademacher() { return (next_u64() >> 63) ? 1.0 : -1.0; }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    template <class T>
    std::vector<T> normal_vector(std::size_t n) {
        std::vector<T> v(n);
        for (auto& x : v) x = static_cast<T>(normal());
        return v;
    }

    template <class T>
    std::vector<T> uniform_vector(std::size_t n, double lo = 0.0, double hi = 1.0) {
        std::vector<T> v(n);
        for (auto& x : v) x = static_cast<T>(lo + (hi - lo) * uniform());
        return v;
    }

    template <class T>
    std::vector<T> rademacher_vector(std::size_t n) {
        std::vector<T> v(n);
        for (auto& x : v) x = static_cast<T>(rademacher());
        return v;
    }

    template <class Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

}  // namespace nipq
