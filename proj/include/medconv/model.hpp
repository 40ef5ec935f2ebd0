#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "medconv/ops.hpp"
#include "medconv/tensor.hpp"

namespace medconv {

struct ModelConfig {
    std::array<std::int64_t, 4> stage_blocks{1, 1, 1, 1};
    std::int64_t stem_channels = 8;
    std::array<std::int64_t, 4> stage_channels{8, 16, 32, 64};
    std::int64_t bottleneck_expansion = 4;
    std::int64_t num_classes = 3;
    std::array<std::int64_t, 4> input_shape{1, 24, 24, 24};  // C,D,H,W
    bool stem_pool = false;  // stride-2 pooling after the stem (full-scale layout)

    void validate() const;

    // Desk-scale default: trains on CPU in minutes.
    static ModelConfig micro();
    // ResNet-50 style [3,4,6,3] layout.
    static ModelConfig full();
    static ModelConfig preset(const std::string& name);
    std::string preset_name() const;  // "medconv-micro", "medconv-full", or "custom"
};

template <typename T>
struct ConvLayer {
    TensorPtr<T> weight;
    Triple stride{1, 1, 1};
    Triple pad{0, 0, 0};
};

template <typename T>
struct NormLayer {
    TensorPtr<T> gamma;
    TensorPtr<T> beta;
    BatchNormState<T> state;
};

template <typename T>
struct BottleneckBlock {
    ConvLayer<T> conv1, conv2, conv3;
    NormLayer<T> bn1, bn2, bn3;
    bool has_projection = false;
    ConvLayer<T> proj;
    NormLayer<T> proj_bn;
};

// A named slice of the serializable state: parameter tensors plus batch-norm
// running statistics. Names are unique and stable across builds.
template <typename T>
struct StateEntry {
    std::string name;
    Shape shape;
    std::vector<T>* blob = nullptr;
    bool trainable = false;
};

template <typename T>
struct Network {
    ModelConfig config;
    ConvLayer<T> stem;
    NormLayer<T> stem_bn;
    std::vector<std::vector<BottleneckBlock<T>>> stages;
    TensorPtr<T> head_weight;
    TensorPtr<T> head_bias;

    std::vector<StateEntry<T>> state_entries();
    std::vector<TensorPtr<T>> parameters();  // trainable tensors, registry order
    void set_requires_grad(bool on);
};

template <typename T>
Network<T> build_model(const ModelConfig& config, std::uint64_t seed);

template <typename T>
TensorPtr<T> forward(Network<T>& net, const TensorPtr<T>& batch, Mode mode, Tape<T>* tape);

// One bottleneck block: conv1-bn-relu, conv2-bn-relu, conv3-bn, plus the skip
// (projection when configured), relu after the sum.
template <typename T>
TensorPtr<T> forward_block(BottleneckBlock<T>& block, const TensorPtr<T>& input, Mode mode, Tape<T>* tape);

template <typename T>
std::int64_t count_params(Network<T>& net);

// "MCKP" checkpoint: magic, u32 version, u32 header length, JSON header
// (config + entry name/shape table), then little-endian f32 values per entry
// in header order.
template <typename T>
void save_checkpoint(Network<T>& net, const std::string& path);

template <typename T>
Network<T> load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

#define MEDCONV_EXTERN_MODEL(T)                                                               \
    extern template struct Network<T>;                                                        \
    extern template Network<T> build_model<T>(const ModelConfig&, std::uint64_t);             \
    extern template TensorPtr<T> forward<T>(Network<T>&, const TensorPtr<T>&, Mode, Tape<T>*); \
    extern template std::int64_t count_params<T>(Network<T>&);                                \
    extern template void save_checkpoint<T>(Network<T>&, const std::string&);                 \
    extern template Network<T> load_checkpoint<T>(const std::string&);
MEDCONV_EXTERN_MODEL(float)
MEDCONV_EXTERN_MODEL(double)
#undef MEDCONV_EXTERN_MODEL

}  // namespace medconv
