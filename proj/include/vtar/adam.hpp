#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vtar/errors.hpp"
#include "vtar/tensor.hpp"

namespace vtar {

/// First/second-moment estimates for one parameter tensor.
template <typename T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
};

/// Standard bias-corrected Adam update, applied in place.
/// t is the 1-based step count shared by every parameter of a run.
template <typename T>
void adam_step(std::vector<T>& params, const std::vector<T>& grads, AdamState<T>& state,
               T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8),
               std::size_t t = 1) {
    if (grads.size() != params.size()) {
        throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    }
    if (state.m.empty()) state.m.assign(params.size(), T(0));
    if (state.v.empty()) state.v.assign(params.size(), T(0));
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError("adam_step: optimizer state does not match parameter count");
    }
    if (t < 1) throw DomainError("adam_step: step count must be >= 1");

    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        state.m[i] = beta1 * state.m[i] + (T(1) - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (T(1) - beta2) * g * g;
        const T mhat = state.m[i] / bc1;
        const T vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace vtar
