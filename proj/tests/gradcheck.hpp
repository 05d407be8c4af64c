#pragma once

// Central finite-difference gradient checking against the analytic
// gradients accumulated by nn::Graph.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "cfr/nn.hpp"

namespace cfr::testing {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t checked = 0;
};

/// `loss` evaluates the scalar loss from the current parameter values
/// (forward only). `analytic` runs forward + backward, leaving gradients in
/// the store. Relative error per element is |a - n| / max(|a|, |n|, floor);
/// the floor keeps near-zero gradients from being judged on rounding noise.
inline GradCheckResult check_gradients(nn::ParameterStore<double>& store,
                                       const std::function<double()>& loss,
                                       const std::function<void()>& analytic,
                                       double eps = 1e-3, double floor = 1e-3) {
    store.zero_grad();
    analytic();
    GradCheckResult result;
    for (auto& p : store) {
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            double& w = p.value.data()[i];
            const double saved = w;
            w = saved + eps;
            const double up = loss();
            w = saved - eps;
            const double down = loss();
            w = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double exact = p.grad.data()[i];
            const double denom = std::max({std::abs(exact), std::abs(numeric), floor});
            const double rel = std::abs(exact - numeric) / denom;
            if (rel > result.max_relative_error) {
                result.max_relative_error = rel;
                result.worst_parameter = p.name + "[" + std::to_string(i) + "] analytic " +
                                         std::to_string(exact) + " numeric " + std::to_string(numeric);
            }
            ++result.checked;
        }
    }
    return result;
}

}  // namespace cfr::testing
