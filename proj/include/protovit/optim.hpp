#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "protovit/tensor.hpp"

namespace protovit {

// Adam with weight decay. `decoupled` applies lr*wd*param outside the
// adaptive step (AdamW); otherwise wd*param is folded into the gradient
// (coupled L2, the appendix-style Adam).
struct OptimConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    bool decoupled = true;
};

template <class T>
struct OptimState {
    OptimConfig config;
    std::vector<std::vector<T>> m;  // aligned with the parameter list
    std::vector<std::vector<T>> v;
    std::size_t t = 0;

    explicit OptimState(const std::vector<std::pair<std::string, Tensor<T>>> &params,
                        OptimConfig cfg = {})
        : config(cfg) {
        for (const auto &[name, p] : params) {
            m.emplace_back(p.numel(), T(0));
            v.emplace_back(p.numel(), T(0));
        }
    }
};

// Independently rescales each parameter's gradient so its own L2 norm is at
// most max_norm (per-parameter clipping, not a joint global norm).
template <class T>
void clip_gradients(const std::vector<std::pair<std::string, Tensor<T>>> &params,
                    double max_norm) {
    for (const auto &[name, p] : params) {
        if (!const_cast<Tensor<T> &>(p).has_grad()) continue;
        auto &g = const_cast<Tensor<T> &>(p).mutable_grad();
        double sq = 0;
        for (T x : g) sq += static_cast<double>(x) * static_cast<double>(x);
        double norm = std::sqrt(sq);
        if (norm > max_norm) {
            T s = static_cast<T>(max_norm / norm);
            for (T &x : g) x *= s;
        }
    }
}

template <class T>
void optimizer_step(const std::vector<std::pair<std::string, Tensor<T>>> &params,
                    OptimState<T> &state) {
    PV_CHECK(params.size() == state.m.size(), "optimizer state does not match parameter list");
    const OptimConfig &c = state.config;
    ++state.t;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto &p = const_cast<Tensor<T> &>(params[pi].second);
        auto &data = p.mutable_data();
        auto &grad = p.mutable_grad();
        auto &m = state.m[pi];
        auto &v = state.v[pi];
        for (std::size_t i = 0; i < data.size(); ++i) {
            double g = static_cast<double>(grad[i]);
            PV_CHECK(std::isfinite(g), "non-finite gradient in parameter '", params[pi].first,
                     "' at index ", i);
            double w = static_cast<double>(data[i]);
            if (!c.decoupled) g += c.weight_decay * w;
            double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * g;
            double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            double step = c.lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
            if (c.decoupled) step += c.lr * c.weight_decay * w;
            data[i] = static_cast<T>(w - step);
        }
    }
}

template <class T>
void zero_gradients(const std::vector<std::pair<std::string, Tensor<T>>> &params) {
    for (const auto &[name, p] : params) const_cast<Tensor<T> &>(p).zero_grad();
}

}  // namespace protovit
