#include "medconv/losses.hpp"

#include <cmath>

namespace medconv {

double ClassWeights::sample_mean() const {
    double num = 0.0;
    std::int64_t n = 0;
    for (std::size_t c = 0; c < weights.size(); ++c) {
        num += static_cast<double>(counts[c]) * weights[c];
        n += counts[c];
    }
    return n > 0 ? num / static_cast<double>(n) : 0.0;
}

ClassWeights inverse_freq_weights(const std::vector<std::int64_t>& counts) {
    if (counts.empty()) throw Error("inverse_freq_weights: counts must be nonempty");
    std::int64_t total = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] <= 0) {
            throw Error(concat("inverse_freq_weights: class ", c, " has count ", counts[c],
                               "; weighting is undefined for empty classes"));
        }
        total += counts[c];
    }
    ClassWeights out;
    out.counts = counts;
    const double classes = static_cast<double>(counts.size());
    out.weights.reserve(counts.size());
    for (auto n : counts) {
        out.weights.push_back(static_cast<double>(total) / (classes * static_cast<double>(n)));
    }
    return out;
}

namespace {

template <typename T>
void check_labels(const TensorPtr<T>& logits, const std::vector<std::int64_t>& labels) {
    if (!logits || logits->shape.size() != 2) throw Error("loss: logits must be an N x C matrix");
    if (static_cast<std::int64_t>(labels.size()) != logits->shape[0]) {
        throw Error(concat("loss: ", labels.size(), " labels for ", logits->shape[0], " logit rows"));
    }
    for (auto y : labels) {
        if (y < 0 || y >= logits->shape[1]) {
            throw Error(concat("loss: label ", y, " outside [0,", logits->shape[1], ")"));
        }
    }
}

}  // namespace

template <typename T>
LossValue<T> cross_entropy(Tape<T>* tape, const TensorPtr<T>& logits, const std::vector<std::int64_t>& labels) {
    check_labels(logits, labels);
    const std::int64_t n = logits->shape[0], classes = logits->shape[1];
    auto logp = log_softmax(tape, logits);
    std::vector<T> unit(static_cast<std::size_t>(n), T(1));
    LossValue<T> out;
    out.value = weighted_nll(tape, logp, labels, unit);
    out.per_sample.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        out.per_sample[static_cast<std::size_t>(i)] =
            -logp->data[static_cast<std::size_t>(i * classes + labels[static_cast<std::size_t>(i)])];
    }
    return out;
}

template <typename T>
LossValue<T> balanced_cross_entropy(Tape<T>* tape, const TensorPtr<T>& logits,
                                    const std::vector<std::int64_t>& labels, const ClassWeights& weights,
                                    BalCeVariant variant) {
    check_labels(logits, labels);
    const std::int64_t n = logits->shape[0], classes = logits->shape[1];
    if (static_cast<std::int64_t>(weights.weights.size()) != classes) {
        throw Error(concat("balanced_cross_entropy: ", weights.weights.size(), " weights for ", classes, " classes"));
    }

    LossValue<T> out;
    if (variant == BalCeVariant::kSoftmax) {
        auto logp = log_softmax(tape, logits);
        std::vector<T> sample_w(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            sample_w[static_cast<std::size_t>(i)] =
                static_cast<T>(weights.weights[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]);
        }
        out.value = weighted_nll(tape, logp, labels, sample_w);
        out.per_sample.resize(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            out.per_sample[static_cast<std::size_t>(i)] =
                sample_w[static_cast<std::size_t>(i)] *
                -logp->data[static_cast<std::size_t>(i * classes + labels[static_cast<std::size_t>(i)])];
        }
    } else {
        std::vector<T> class_w(weights.weights.begin(), weights.weights.end());
        out.value = weighted_sigmoid_bce(tape, logits, labels, class_w);
        out.per_sample.resize(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            const T* z = logits->data.data() + i * classes;
            T s = T(0);
            for (std::int64_t c = 0; c < classes; ++c) {
                const T y = labels[static_cast<std::size_t>(i)] == c ? T(1) : T(0);
                const T zp = std::max(z[c], T(0));
                s += class_w[static_cast<std::size_t>(c)] *
                     (zp - y * z[c] + std::log1p(std::exp(-std::abs(z[c]))));
            }
            out.per_sample[static_cast<std::size_t>(i)] = s;
        }
    }
    return out;
}

template struct LossValue<float>;
template struct LossValue<double>;
template LossValue<float> cross_entropy<float>(Tape<float>*, const TensorPtr<float>&,
                                               const std::vector<std::int64_t>&);
template LossValue<double> cross_entropy<double>(Tape<double>*, const TensorPtr<double>&,
                                                 const std::vector<std::int64_t>&);
template LossValue<float> balanced_cross_entropy<float>(Tape<float>*, const TensorPtr<float>&,
                                                        const std::vector<std::int64_t>&, const ClassWeights&,
                                                        BalCeVariant);
template LossValue<double> balanced_cross_entropy<double>(Tape<double>*, const TensorPtr<double>&,
                                                          const std::vector<std::int64_t>&, const ClassWeights&,
                                                          BalCeVariant);

}  // namespace medconv
