// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient oracle for the tests. The oracle
// re-runs the forward pass only, so it stays independent of the backward
// implementation it checks.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "loralab/tensor.hpp"

namespace loralab::testing {

/// Mixed absolute/relative gradient error: |a - b| / max(1, |a| + |b|).
inline double grad_error(double a, double b) {
    return std::abs(a - b) / std::max(1.0, std::abs(a) + std::abs(b));
}

struct GradCheckResult {
    double max_error = 0.0;
    std::string worst;  // "<param>[i]" of the worst element
};

/// Runs `forward` once with backward to collect analytic grads, then
/// perturbs every element of every parameter with central differences.
/// `forward` must rebuild the scalar loss from the current parameter
/// values on every call (deterministically).
inline GradCheckResult gradcheck_backward(std::vector<std::pair<std::string, Tensor<double>>> params,
                                          const std::function<Tensor<double>()>& forward, double h = 1e-5) {
    for (auto& [name, p] : params) p.zero_grad();
    Tensor<double> loss = forward();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, p] : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto data = params[pi].second.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + h;
            const double up = forward().item();
            data[i] = orig - h;
            const double down = forward().item();
            data[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double err = grad_error(analytic[pi][i], fd);
            if (err > result.max_error) {
                result.max_error = err;
                result.worst = params[pi].first + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

}  // namespace loralab::testing
