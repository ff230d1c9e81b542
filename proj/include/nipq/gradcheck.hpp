#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "nipq/tensor.hpp"

namespace nipq {

/// Relative gradient error with a floor on the denominator: |a − n| / max(|a|, |n|, floor).
template <class T>
double relative_error(T autodiff, T numeric, double floor) {
    const double a = autodiff, n = numeric;
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central differences (f(p+eps) − f(p−eps)) / (2·eps) for every coordinate of every param.
/// Parameter values are restored afterwards.
template <class T>
std::vector<std::vector<T>> numeric_gradient(const std::function<BasicTensor<T>()>& f,
                                             std::vector<BasicTensor<T>> params, T eps) {
    std::vector<std::vector<T>> out;
    out.reserve(params.size());
    for (auto& p : params) {
        std::vector<T> g(p.numel());
        auto d = p.data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const T orig = d[i];
            d[i] = orig + eps;
            const T fp = f().item();
            d[i] = orig - eps;
            const T fm = f().item();
            d[i] = orig;
            g[i] = (fp - fm) / (T(2) * eps);
        }
        out.push_back(std::move(g));
    }
    return out;
}

template <class T>
struct GradCheckReport {
    double max_rel_error = 0.0;
    std::vector<std::vector<T>> autodiff;
    std::vector<std::vector<T>> numeric;
};

/// Compares autodiff gradients of f against central differences. f must be deterministic
/// (freeze any noise before calling). Existing gradients on params are cleared.
template <class T>
GradCheckReport<T> finite_difference_check(const std::function<BasicTensor<T>()>& f,
                                           std::vector<BasicTensor<T>> params, T eps, double floor = 1e-6) {
    GradCheckReport<T> rep;
    for (auto& p : params) p.zero_grad();
    f().backward();
    for (auto& p : params) rep.autodiff.push_back(p.grad_vector());
    rep.numeric = numeric_gradient<T>(f, params, eps);
    for (std::size_t k = 0; k < params.size(); ++k)
        for (std::size_t i = 0; i < rep.numeric[k].size(); ++i)
            rep.max_rel_error = std::max(rep.max_rel_error, relative_error(rep.autodiff[k][i], rep.numeric[k][i], floor));
    return rep;
}

}  // namespace nipq
