#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "medconv/common.hpp"

namespace medconv {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor, up to 5 axes (N,C,D,H,W for volumetric batches).
// Values are immutable once an op has consumed the tensor; the only sanctioned
// mutation afterwards is gradient accumulation during backward.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    // Same size as data once touched by backward; empty until then.
    std::vector<T> grad;
    // True when an op on the current tape produced this tensor.
    bool produced = false;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), T(0)) {}
    Tensor(Shape s, std::vector<T> values);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    bool is_scalar() const { return data.size() == 1; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }
    bool all_finite() const;
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(Shape shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>(std::move(shape));
    t->requires_grad = requires_grad;
    return t;
}

template <typename T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>(std::move(shape), std::move(values));
    t->requires_grad = requires_grad;
    return t;
}

template <typename T>
TensorPtr<T> full_like_shape(const Shape& shape, T value) {
    auto t = make_tensor<T>(shape);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

// Whether gradients must flow through an op consuming this tensor.
template <typename T>
bool tracks_grad(const TensorPtr<T>& t) {
    return t && (t->requires_grad || t->produced);
}

// Ordered record of executed ops. Backward replays the record in reverse,
// visiting each node exactly once; fan-out accumulates additively because
// every consumer adds into its parents' grad buffers.
template <typename T>
class Tape {
  public:
    void record(TensorPtr<T> out, std::function<void()> backward_fn) {
        out->produced = true;
        nodes_.push_back(Node{std::move(out), std::move(backward_fn)});
    }

    // Populates grads of every leaf reachable from root. Repeated calls
    // without zeroing leaf grads accumulate; intermediate grads are reset
    // per call.
    void backward(const TensorPtr<T>& root) {
        if (!root || !root->is_scalar()) {
            throw Error("backward: root must be a scalar tensor");
        }
        for (auto& node : nodes_) {
            node.out->ensure_grad();
            node.out->zero_grad();
        }
        root->ensure_grad();
        root->grad[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            it->backward();
        }
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

  private:
    struct Node {
        TensorPtr<T> out;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
};

// Debug dump used by test fixtures: shape header line, then row-major values.
template <typename T>
void dump_csv(const Tensor<T>& t, const std::string& path);
template <typename T>
TensorPtr<T> load_csv(const std::string& path);

extern template struct Tensor<float>;
extern template struct Tensor<double>;
extern template void dump_csv<float>(const Tensor<float>&, const std::string&);
extern template void dump_csv<double>(const Tensor<double>&, const std::string&);
extern template TensorPtr<float> load_csv<float>(const std::string&);
extern template TensorPtr<double> load_csv<double>(const std::string&);

}  // namespace medconv
