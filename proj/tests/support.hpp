#pragma once

#include <cmath>
#include <vector>

#include "nipq/nipq.hpp"

namespace nipq::test {

/// Hand-rolled generators keyed by (seed, case index).
struct Gen {
    RngStream rng;

    explicit Gen(std::uint64_t seed, std::uint64_t stream = 0x7e57) : rng(seed, stream) {}

    double uniform(double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }
    std::size_t size(std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }
    int integer(int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }
    bool coin() { return rng.below(2) == 1; }

    template <class T = float>
    BasicTensor<T> normal(Shape shape, double scale = 1.0, bool requires_grad = false) {
        auto v = rng.normal_vector<T>(shape_numel(shape));
        for (auto& x : v) x = static_cast<T>(x * scale);
        return BasicTensor<T>(std::move(shape), std::move(v), requires_grad);
    }

    template <class T = float>
    BasicTensor<T> uniform_tensor(Shape shape, double lo, double hi, bool requires_grad = false) {
        return BasicTensor<T>(shape, rng.uniform_vector<T>(shape_numel(shape), lo, hi), requires_grad);
    }
};

/// Nearest element of `levels` to v; ties go to the level farther from zero.
inline double nearest_level(const std::vector<double>& levels, double v) {
    double best = levels.front();
    for (double l : levels) {
        const double d = std::abs(v - l), db = std::abs(v - best);
        if (d < db || (d == db && std::abs(l) > std::abs(best))) best = l;
    }
    return best;
}

inline std::string digits_dir() { return NIPQ_DIGITS_DIR; }

}  // namespace nipq::test
