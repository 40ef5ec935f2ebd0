#pragma once

#include <functional>

#include "medconv/tensor.hpp"

namespace medconv {

// A scalar-valued tensor program. The tape argument is null for the
// forward-only evaluations used by the finite-difference probes.
template <typename T>
using TensorProgram = std::function<TensorPtr<T>(Tape<T>*, const TensorPtr<T>&)>;

// Compares the analytic gradient of `fn` at `point` against central finite
// differences. Returns max over coordinates of
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
// Callers are responsible for choosing points away from ReLU kinks.
template <typename T>
double grad_check(const TensorProgram<T>& fn, const TensorPtr<T>& point, T step);

extern template double grad_check<float>(const TensorProgram<float>&, const TensorPtr<float>&, float);
extern template double grad_check<double>(const TensorProgram<double>&, const TensorPtr<double>&, double);

}  // namespace medconv
