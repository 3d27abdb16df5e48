#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "uavseg/tensor.hpp"

namespace uavseg::testing {

struct GradCheck {
    double relative_error = 0.0;
    double analytic_norm = 0.0;
    double numeric_norm = 0.0;
    std::size_t checked = 0;
};

/// Central differences on up to `max_entries` evenly spaced entries of `param`,
/// compared with the backward pass by vector-norm relative error.
inline GradCheck check_gradient(const std::function<Tensor()>& loss_fn, Tensor param,
                                float h = 1e-2f, std::size_t max_entries = 48) {
    param.zero_grad();
    loss_fn().backward();
    const std::vector<float> analytic(param.grad().begin(), param.grad().end());

    const std::size_t n = param.numel();
    const std::size_t stride = std::max<std::size_t>(1, n / max_entries);
    double diff = 0.0, an = 0.0, nu = 0.0;
    GradCheck out;
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < n; i += stride) {
        auto values = param.mutable_data();
        const float saved = values[i];
        values[i] = saved + h;
        const double plus = loss_fn().item();
        values[i] = saved - h;
        const double minus = loss_fn().item();
        values[i] = saved;
        const double numeric = (plus - minus) / (2.0 * h);
        diff += (numeric - analytic[i]) * (numeric - analytic[i]);
        an += static_cast<double>(analytic[i]) * analytic[i];
        nu += numeric * numeric;
        ++out.checked;
    }
    out.analytic_norm = std::sqrt(an);
    out.numeric_norm = std::sqrt(nu);
    out.relative_error = std::sqrt(diff) / std::max({out.analytic_norm, out.numeric_norm, 1e-8});
    return out;
}

}  // namespace uavseg::testing

