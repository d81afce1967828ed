#pragma once

#include <functional>
#include <string>
#include <vector>

#include "protovit/protonet.hpp"
#include "protovit/tensor.hpp"
#include "protovit/vit.hpp"

namespace protovit {

inline constexpr double kGradCheckTol = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;

// |a-b| relative to the larger magnitude; near-zero pairs compare absolutely.
inline double grad_rel_error(double a, double b) {
    double s = std::max(std::abs(a), std::abs(b));
    double d = std::abs(a - b);
    return s < 1e-6 ? d : d / s;
}

// Compares autodiff gradients of `loss_fn(leaves)` against central finite
// differences (64-bit). `loss_fn` must be a pure function of the leaves'
// current data, so it is re-runnable under perturbation. When
// coords_per_leaf > 0, that many coordinates per leaf are checked (chosen
// deterministically); 0 checks all.
inline double finite_diff_max_rel_error(
    std::vector<Tensor<double>> leaves,
    const std::function<Tensor<double>(const std::vector<Tensor<double>> &)> &loss_fn,
    double h = kGradCheckStep, std::size_t coords_per_leaf = 0) {
    for (auto &l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    Tensor<double> loss = loss_fn(leaves);
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (auto &l : leaves) analytic.push_back(l.grad());

    double worst = 0.0;
    Rng pick(0x636f6f7264ull);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto &data = leaves[li].mutable_data();
        std::vector<std::size_t> coords;
        if (coords_per_leaf == 0 || coords_per_leaf >= data.size()) {
            coords.resize(data.size());
            for (std::size_t i = 0; i < data.size(); ++i) coords[i] = i;
        } else {
            for (std::size_t i = 0; i < coords_per_leaf; ++i)
                coords.push_back(static_cast<std::size_t>(pick.uniform_below(data.size())));
        }
        for (std::size_t i : coords) {
            double orig = data[i];
            data[i] = orig + h;
            double fp = loss_fn(leaves).item();
            data[i] = orig - h;
            double fm = loss_fn(leaves).item();
            data[i] = orig;
            double fd = (fp - fm) / (2.0 * h);
            worst = std::max(worst, grad_rel_error(analytic[li][i], fd));
        }
    }
    return worst;
}

struct OpCheck {
    std::string name;
    double max_rel_err = 0.0;
};

// The standard per-op suite plus the whole micro-config backbone. Each op is
// checked on >= 5 random small inputs; the backbone checks sampled
// coordinates of every parameter tensor. Empty filter runs everything.
std::vector<OpCheck> run_gradcheck(const std::vector<std::string> &ops_filter = {});

}  // namespace protovit
