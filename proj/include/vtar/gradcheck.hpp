#pragma once

// Central finite-difference verification of the recorded backward rules.
// Intended to run with T = double; float round-off drowns the 1e-6
// tolerance this check is normally held to.

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vtar/tensor.hpp"

namespace vtar {

template <typename T>
struct GradCheckReport {
    T max_error = T(0);
    std::map<std::string, T> worst_by_input;
};

/// Compares the analytic gradient of a recorded scalar function against
/// central differences, coordinate by coordinate, over the named inputs.
/// Error metric per coordinate:
///   |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
/// f must be deterministic and must rebuild its graph on every call.
template <typename T>
GradCheckReport<T> grad_check_named(const std::function<Tensor<T>()>& f,
                                    const std::vector<std::pair<std::string, Tensor<T>>>& inputs,
                                    T eps = T(1e-5)) {
    for (const auto& [name, x] : inputs) {
        const_cast<Tensor<T>&>(x).zero_grad();
    }
    Tensor<T> loss = f();
    loss.backward();

    std::vector<std::vector<T>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& [name, x] : inputs) {
        analytic.push_back(x.has_grad() ? x.grad() : std::vector<T>(x.numel(), T(0)));
    }

    GradCheckReport<T> report;
    for (std::size_t idx = 0; idx < inputs.size(); ++idx) {
        const auto& name = inputs[idx].first;
        auto& x = const_cast<Tensor<T>&>(inputs[idx].second);
        T worst = T(0);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const T saved = x.values()[i];
            x.values()[i] = saved + eps;
            const T up = f().item();
            x.values()[i] = saved - eps;
            const T down = f().item();
            x.values()[i] = saved;

            const T numeric = (up - down) / (T(2) * eps);
            const T a = analytic[idx][i];
            const T err = std::abs(a - numeric) /
                          std::max(T(1e-8), std::abs(a) + std::abs(numeric));
            worst = std::max(worst, err);
        }
        report.worst_by_input[name] = worst;
        report.max_error = std::max(report.max_error, worst);
    }
    return report;
}

/// Max relative error over all coordinates of all inputs.
template <typename T>
T grad_check(const std::function<Tensor<T>()>& f, const std::vector<Tensor<T>>& inputs,
             T eps = T(1e-5)) {
    std::vector<std::pair<std::string, Tensor<T>>> named;
    named.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        named.emplace_back("input" + std::to_string(i), inputs[i]);
    }
    return grad_check_named<T>(f, named, eps).max_error;
}

}  // namespace vtar
