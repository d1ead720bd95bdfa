#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "icnp/nn.hpp"
#include "icnp/tensor.hpp"

namespace icnp::test {

// Central finite differences of a scalar-valued function w.r.t. one parameter
// tensor. The function must re-run the full forward pass from current values.
inline std::vector<double> numeric_grad(const std::function<double()>& f, Tensor param, double h) {
    std::vector<double> g(param.numel());
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const double orig = param.data()[i];
        param.data()[i] = orig + h;
        const double up = f();
        param.data()[i] = orig - h;
        const double down = f();
        param.data()[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Largest relative error between analytic and numeric gradients, ignoring
// entries where both are tiny.
inline double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric,
                          double floor = 1e-8) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

}  // namespace icnp::test
