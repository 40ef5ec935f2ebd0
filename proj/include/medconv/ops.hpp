#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "medconv/tensor.hpp"

namespace medconv {

using Triple = std::array<std::int64_t, 3>;

enum class Mode { kTrain, kEval };

// Per-channel running statistics for batch_norm3d. Updated in train mode,
// consumed in eval mode.
template <typename T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.1);

    explicit BatchNormState(std::int64_t channels = 0)
        : running_mean(static_cast<std::size_t>(channels), T(0)),
          running_var(static_cast<std::size_t>(channels), T(1)) {}
};

// All ops record onto `tape` when it is non-null and gradients can flow.
// Passing tape == nullptr runs forward-only (inference).

// Cross-correlation (no kernel flip), zero padding.
// input [N,Cin,D,H,W], kernel [Cout,Cin,kd,kh,kw], bias [Cout] or null.
template <typename T>
TensorPtr<T> conv3d(Tape<T>* tape, const TensorPtr<T>& input, const TensorPtr<T>& kernel,
                    const TensorPtr<T>& bias, const Triple& stride, const Triple& pad);

template <typename T>
TensorPtr<T> batch_norm3d(Tape<T>* tape, const TensorPtr<T>& input, const TensorPtr<T>& gamma,
                          const TensorPtr<T>& beta, T eps, Mode mode, BatchNormState<T>* state);

template <typename T>
TensorPtr<T> relu(Tape<T>* tape, const TensorPtr<T>& input);

template <typename T>
TensorPtr<T> max_pool3d(Tape<T>* tape, const TensorPtr<T>& input, const Triple& kernel,
                        const Triple& stride, const Triple& pad);

// [N,C,D,H,W] -> [N,C], arithmetic mean over D,H,W.
template <typename T>
TensorPtr<T> global_avg_pool3d(Tape<T>* tape, const TensorPtr<T>& input);

// input [N,F], weight [O,F], bias [O] or null -> [N,O].
template <typename T>
TensorPtr<T> linear(Tape<T>* tape, const TensorPtr<T>& input, const TensorPtr<T>& weight,
                    const TensorPtr<T>& bias);

// Numerically stable per-row log-softmax, input [N,C].
template <typename T>
TensorPtr<T> log_softmax(Tape<T>* tape, const TensorPtr<T>& input);

template <typename T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);

template <typename T>
TensorPtr<T> mul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);

template <typename T>
TensorPtr<T> sum(Tape<T>* tape, const TensorPtr<T>& input);

template <typename T>
TensorPtr<T> mean(Tape<T>* tape, const TensorPtr<T>& input);

// (1/N) * sum_i w_i * (-logp[i, labels[i]]); logp rows are log-probabilities.
template <typename T>
TensorPtr<T> weighted_nll(Tape<T>* tape, const TensorPtr<T>& logp,
                          const std::vector<std::int64_t>& labels, const std::vector<T>& sample_weights);

// (1/N) * sum_i sum_c w_c * bce_with_logits(z[i,c], [labels[i]==c]).
template <typename T>
TensorPtr<T> weighted_sigmoid_bce(Tape<T>* tape, const TensorPtr<T>& logits,
                                  const std::vector<std::int64_t>& labels, const std::vector<T>& class_weights);

template <typename T>
Triple conv_out_dims(const Triple& in, const Triple& kernel, const Triple& stride, const Triple& pad);

}  // namespace medconv
