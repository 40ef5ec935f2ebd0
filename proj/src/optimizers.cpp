#include "medconv/optimizers.hpp"

#include <cmath>

namespace medconv {

namespace {

template <typename T>
void check_params(const std::vector<TensorPtr<T>>& params) {
    for (const auto& p : params) {
        if (!p) throw Error("optimizer: null parameter");
        if (p->grad.size() != p->data.size()) {
            throw Error(concat("optimizer: parameter of shape ", shape_str(p->shape), " has no gradient"));
        }
    }
}

template <typename T>
void init_buffers(std::vector<std::vector<T>>& buffers, const std::vector<TensorPtr<T>>& params) {
    if (buffers.empty()) {
        buffers.reserve(params.size());
        for (const auto& p : params) buffers.emplace_back(p->data.size(), T(0));
    }
    if (buffers.size() != params.size()) throw Error("optimizer: state does not match parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (buffers[i].size() != params[i]->data.size()) {
            throw Error(concat("optimizer: state buffer ", i, " does not mirror parameter shape ",
                               shape_str(params[i]->shape)));
        }
    }
}

}  // namespace

template <typename T>
void sgd_momentum_step(std::vector<TensorPtr<T>>& params, SgdState<T>& state, T eta, T mu, T l2) {
    check_params(params);
    init_buffers(state.velocity, params);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i]->data;
        const auto& g = params[i]->grad;
        auto& v = state.velocity[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const T grad = l2 == T(0) ? g[j] : g[j] + l2 * w[j];
            v[j] = mu * v[j] + grad;
            w[j] -= eta * v[j];
        }
    }
}

template <typename T>
T sam_step(std::vector<TensorPtr<T>>& params, const LossFn<T>& loss_fn, SgdState<T>& state, T eta, T mu,
           T rho, T l2) {
    if (rho < T(0)) throw Error("sam_step: rho must be >= 0");
    const T loss = loss_fn();
    if (!std::isfinite(static_cast<double>(loss))) throw NumericError("sam_step: non-finite loss");
    check_params(params);

    T sq = T(0);
    for (const auto& p : params) {
        for (T g : p->grad) sq += g * g;
    }
    const T norm = std::sqrt(sq);

    if (rho > T(0) && norm > T(0)) {
        // Perturb, re-evaluate, restore the saved values exactly.
        std::vector<std::vector<T>> saved;
        saved.reserve(params.size());
        for (const auto& p : params) saved.push_back(p->data);
        const T scale = rho / norm;
        for (auto& p : params) {
            for (std::size_t j = 0; j < p->data.size(); ++j) p->data[j] += scale * p->grad[j];
        }
        const T perturbed_loss = loss_fn();
        if (!std::isfinite(static_cast<double>(perturbed_loss))) {
            throw NumericError("sam_step: non-finite loss at perturbed point");
        }
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = std::move(saved[i]);
    }
    sgd_momentum_step(params, state, eta, mu, l2);
    return loss;
}

template <typename T>
T schedulefree_step(std::vector<TensorPtr<T>>& params, const LossFn<T>& loss_fn, ScheduleFreeState<T>& state,
                    T gamma, T beta) {
    if (gamma < T(0)) throw Error("schedulefree_step: gamma must be >= 0");
    if (beta < T(0) || beta >= T(1)) throw Error("schedulefree_step: beta must be in [0,1)");
    if (!state.initialized()) {
        state.z.reserve(params.size());
        state.x.reserve(params.size());
        for (const auto& p : params) {
            if (!p) throw Error("optimizer: null parameter");
            state.z.push_back(p->data);
            state.x.push_back(p->data);
        }
        state.t = 0;
    }
    init_buffers(state.z, params);
    init_buffers(state.x, params);

    // Gradient point y_t = (1-beta)*z_t + beta*x_t.
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i]->data;
        for (std::size_t j = 0; j < w.size(); ++j) {
            w[j] = (T(1) - beta) * state.z[i][j] + beta * state.x[i][j];
        }
    }
    const T loss = loss_fn();
    if (!std::isfinite(static_cast<double>(loss))) throw NumericError("schedulefree_step: non-finite loss");
    check_params(params);
    for (const auto& p : params) {
        for (T g : p->grad) {
            if (!std::isfinite(static_cast<double>(g))) throw NumericError("schedulefree_step: non-finite gradient");
        }
    }

    const T c = T(1) / static_cast<T>(state.t + 1);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& g = params[i]->grad;
        for (std::size_t j = 0; j < g.size(); ++j) {
            state.z[i][j] -= gamma * g[j];
            state.x[i][j] = (T(1) - c) * state.x[i][j] + c * state.z[i][j];
        }
    }
    state.t += 1;
    return loss;
}

template <typename T>
void schedulefree_apply_average(std::vector<TensorPtr<T>>& params, const ScheduleFreeState<T>& state) {
    if (!state.initialized()) return;
    if (state.x.size() != params.size()) throw Error("schedulefree_apply_average: state/parameter mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = state.x[i];
}

#define MEDCONV_INST_OPT(T)                                                                         \
    template void sgd_momentum_step<T>(std::vector<TensorPtr<T>>&, SgdState<T>&, T, T, T);          \
    template T sam_step<T>(std::vector<TensorPtr<T>>&, const LossFn<T>&, SgdState<T>&, T, T, T, T); \
    template T schedulefree_step<T>(std::vector<TensorPtr<T>>&, const LossFn<T>&, ScheduleFreeState<T>&, T, T); \
    template void schedulefree_apply_average<T>(std::vector<TensorPtr<T>>&, const ScheduleFreeState<T>&);
MEDCONV_INST_OPT(float)
MEDCONV_INST_OPT(double)
#undef MEDCONV_INST_OPT

}  // namespace medconv
