#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "medconv/tensor.hpp"

namespace medconv {

// Evaluates the objective at the current parameter values, leaves fresh
// gradients in each parameter's grad buffer, and returns the loss.
template <typename T>
using LossFn = std::function<T()>;

template <typename T>
struct SgdState {
    // Velocity buffers mirror parameter shapes; allocated on first step.
    std::vector<std::vector<T>> velocity;
};

// v <- mu*v + g ; w <- w - eta*v. Gradients are read from param->grad.
// l2 adds l2*w to the gradient before the momentum update.
template <typename T>
void sgd_momentum_step(std::vector<TensorPtr<T>>& params, SgdState<T>& state, T eta, T mu, T l2 = T(0));

// Sharpness-aware step: perturb parameters by rho * g / ||g||_2 (global norm
// over all parameters), re-evaluate the gradient there, restore the original
// parameters exactly, then apply the SGD momentum update with the perturbed
// gradient. rho == 0 or a zero gradient falls through to the plain step.
template <typename T>
T sam_step(std::vector<TensorPtr<T>>& params, const LossFn<T>& loss_fn, SgdState<T>& state, T eta, T mu,
           T rho, T l2 = T(0));

template <typename T>
struct ScheduleFreeState {
    std::vector<std::vector<T>> z;  // gradient-point sequence
    std::vector<std::vector<T>> x;  // uniformly averaged iterate
    std::int64_t t = 0;

    bool initialized() const { return !z.empty(); }
};

// Schedule-free step: gradients are evaluated at y_t = (1-beta)*z_t + beta*x_t,
// then z_{t+1} = z_t - gamma*g and x_{t+1} = (1-c)*x_t + c*z_{t+1} with
// c = 1/(t+1). Parameters hold y after the call; use
// schedulefree_apply_average before any evaluation or checkpointing.
template <typename T>
T schedulefree_step(std::vector<TensorPtr<T>>& params, const LossFn<T>& loss_fn, ScheduleFreeState<T>& state,
                    T gamma, T beta);

template <typename T>
void schedulefree_apply_average(std::vector<TensorPtr<T>>& params, const ScheduleFreeState<T>& state);

#define MEDCONV_EXTERN_OPT(T)                                                                              \
    extern template void sgd_momentum_step<T>(std::vector<TensorPtr<T>>&, SgdState<T>&, T, T, T);          \
    extern template T sam_step<T>(std::vector<TensorPtr<T>>&, const LossFn<T>&, SgdState<T>&, T, T, T, T); \
    extern template T schedulefree_step<T>(std::vector<TensorPtr<T>>&, const LossFn<T>&,                   \
                                           ScheduleFreeState<T>&, T, T);                                   \
    extern template void schedulefree_apply_average<T>(std::vector<TensorPtr<T>>&, const ScheduleFreeState<T>&);
MEDCONV_EXTERN_OPT(float)
MEDCONV_EXTERN_OPT(double)
#undef MEDCONV_EXTERN_OPT

}  // namespace medconv
