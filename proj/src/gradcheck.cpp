#include "medconv/gradcheck.hpp"

#include <cmath>

namespace medconv {

namespace {

template <typename T>
T eval_scalar(const TensorProgram<T>& fn, Tape<T>* tape, const TensorPtr<T>& point) {
    auto out = fn(tape, point);
    if (!out || !out->is_scalar()) throw Error("grad_check: program must produce a scalar");
    return out->data[0];
}

}  // namespace

template <typename T>
double grad_check(const TensorProgram<T>& fn, const TensorPtr<T>& point, T step) {
    if (!point) throw Error("grad_check: point is null");
    if (step <= T(0)) throw Error("grad_check: step must be > 0");
    if (!point->all_finite()) throw Error("grad_check: point has non-finite entries");

    const bool was_requiring = point->requires_grad;
    point->requires_grad = true;
    point->ensure_grad();
    point->zero_grad();

    Tape<T> tape;
    auto out = fn(&tape, point);
    if (!out || !out->is_scalar()) {
        point->requires_grad = was_requiring;
        throw Error("grad_check: program must produce a scalar");
    }
    tape.backward(out);
    std::vector<T> analytic = point->grad;
    point->requires_grad = was_requiring;

    double max_rel = 0.0;
    for (std::size_t i = 0; i < point->data.size(); ++i) {
        const T saved = point->data[i];
        point->data[i] = saved + step;
        const double f_plus = static_cast<double>(eval_scalar<T>(fn, nullptr, point));
        point->data[i] = saved - step;
        const double f_minus = static_cast<double>(eval_scalar<T>(fn, nullptr, point));
        point->data[i] = saved;
        const double numeric = (f_plus - f_minus) / (2.0 * static_cast<double>(step));
        const double a = static_cast<double>(analytic[i]);
        const double denom = std::max(1e-8, std::abs(a) + std::abs(numeric));
        max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
    return max_rel;
}

template double grad_check<float>(const TensorProgram<float>&, const TensorPtr<float>&, float);
template double grad_check<double>(const TensorProgram<double>&, const TensorPtr<double>&, double);

}  // namespace medconv
