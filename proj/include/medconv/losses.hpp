#pragma once

#include <cstdint>
#include <vector>

#include "medconv/ops.hpp"
#include "medconv/tensor.hpp"

namespace medconv {

// Per-class weights w_c = N / (C * n_c) derived from training counts. The
// expected weight over the counted samples is exactly 1, which keeps the
// loss scale comparable with unweighted cross-entropy.
struct ClassWeights {
    std::vector<double> weights;
    std::vector<std::int64_t> counts;  // derivation record

    double sample_mean() const;  // sum_c n_c * w_c / sum_c n_c
};

ClassWeights inverse_freq_weights(const std::vector<std::int64_t>& counts);

template <typename T>
struct LossValue {
    TensorPtr<T> value;         // scalar, differentiable through the tape
    std::vector<T> per_sample;  // value == mean(per_sample)
};

template <typename T>
LossValue<T> cross_entropy(Tape<T>* tape, const TensorPtr<T>& logits, const std::vector<std::int64_t>& labels);

enum class BalCeVariant {
    kSoftmax,         // weighted softmax cross-entropy (default)
    kBinaryPerClass,  // sigmoid per class, per-class weighted
};

template <typename T>
LossValue<T> balanced_cross_entropy(Tape<T>* tape, const TensorPtr<T>& logits,
                                    const std::vector<std::int64_t>& labels, const ClassWeights& weights,
                                    BalCeVariant variant = BalCeVariant::kSoftmax);

extern template struct LossValue<float>;
extern template struct LossValue<double>;
extern template LossValue<float> cross_entropy<float>(Tape<float>*, const TensorPtr<float>&,
                                                      const std::vector<std::int64_t>&);
extern template LossValue<double> cross_entropy<double>(Tape<double>*, const TensorPtr<double>&,
                                                        const std::vector<std::int64_t>&);
extern template LossValue<float> balanced_cross_entropy<float>(Tape<float>*, const TensorPtr<float>&,
                                                               const std::vector<std::int64_t>&,
                                                               const ClassWeights&, BalCeVariant);
extern template LossValue<double> balanced_cross_entropy<double>(Tape<double>*, const TensorPtr<double>&,
                                                                 const std::vector<std::int64_t>&,
                                                                 const ClassWeights&, BalCeVariant);

}  // namespace medconv
