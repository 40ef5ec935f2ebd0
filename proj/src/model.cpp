#include "medconv/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "medconv/rng.hpp"

namespace medconv {

using json = nlohmann::json;

void ModelConfig::validate() const {
    for (int s = 0; s < 4; ++s) {
        if (stage_blocks[static_cast<std::size_t>(s)] < 1) {
            throw ConfigError(concat("model config: stage ", s + 1, " must have at least one block"));
        }
        if (stage_channels[static_cast<std::size_t>(s)] < 1) {
            throw ConfigError(concat("model config: stage ", s + 1, " width must be positive"));
        }
    }
    if (stem_channels < 1) throw ConfigError("model config: stem_channels must be positive");
    if (bottleneck_expansion < 1) throw ConfigError("model config: bottleneck_expansion must be positive");
    if (num_classes < 2) throw ConfigError(concat("model config: num_classes must be >= 2, got ", num_classes));
    for (auto e : input_shape) {
        if (e < 1) throw ConfigError(concat("model config: input_shape has non-positive extent ", e));
    }
    // Walk the downsampling chain; every stage must keep extents >= 1.
    std::array<std::int64_t, 3> ext{input_shape[1], input_shape[2], input_shape[3]};
    auto down = [&](const char* where) {
        for (auto& e : ext) {
            e = (e + 2 - 3) / 2 + 1;  // kernel 3, stride 2, pad 1
            if (e < 1) throw ConfigError(concat("model config: spatial extent reaches 0 at ", where));
        }
    };
    down("stem");
    if (stem_pool) down("stem pool");
    down("stage 2");
    down("stage 3");
    down("stage 4");
}

ModelConfig ModelConfig::micro() {
    return ModelConfig{};
}

ModelConfig ModelConfig::full() {
    ModelConfig config;
    config.stage_blocks = {3, 4, 6, 3};
    config.stem_channels = 64;
    config.stage_channels = {64, 128, 256, 512};
    config.bottleneck_expansion = 4;
    config.num_classes = 3;
    config.input_shape = {1, 96, 96, 96};
    config.stem_pool = true;
    return config;
}

ModelConfig ModelConfig::preset(const std::string& name) {
    if (name == "medconv-micro") return micro();
    if (name == "medconv-full") return full();
    throw ConfigError(concat("unknown model preset '", name, "' (expected medconv-micro or medconv-full)"));
}

std::string ModelConfig::preset_name() const {
    auto same = [](const ModelConfig& a, const ModelConfig& b) {
        return a.stage_blocks == b.stage_blocks && a.stem_channels == b.stem_channels &&
               a.stage_channels == b.stage_channels && a.bottleneck_expansion == b.bottleneck_expansion &&
               a.num_classes == b.num_classes && a.input_shape == b.input_shape && a.stem_pool == b.stem_pool;
    };
    if (same(*this, micro())) return "medconv-micro";
    if (same(*this, full())) return "medconv-full";
    return "custom";
}

std::string model_config_to_json(const ModelConfig& config) {
    json j;
    j["stage_blocks"] = config.stage_blocks;
    j["stem_channels"] = config.stem_channels;
    j["stage_channels"] = config.stage_channels;
    j["bottleneck_expansion"] = config.bottleneck_expansion;
    j["num_classes"] = config.num_classes;
    j["input_shape"] = config.input_shape;
    j["stem_pool"] = config.stem_pool;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(concat("model config: invalid JSON: ", e.what()));
    }
    ModelConfig config;
    try {
        if (j.contains("preset")) config = ModelConfig::preset(j.at("preset").get<std::string>());
        if (j.contains("stage_blocks")) {
            auto v = j.at("stage_blocks");
            for (int i = 0; i < 4; ++i) config.stage_blocks[static_cast<std::size_t>(i)] = v.at(static_cast<std::size_t>(i));
        }
        config.stem_channels = j.value("stem_channels", config.stem_channels);
        if (j.contains("stage_channels")) {
            auto v = j.at("stage_channels");
            for (int i = 0; i < 4; ++i) config.stage_channels[static_cast<std::size_t>(i)] = v.at(static_cast<std::size_t>(i));
        }
        config.bottleneck_expansion = j.value("bottleneck_expansion", config.bottleneck_expansion);
        config.num_classes = j.value("num_classes", config.num_classes);
        if (j.contains("input_shape")) {
            auto v = j.at("input_shape");
            for (int i = 0; i < 4; ++i) config.input_shape[static_cast<std::size_t>(i)] = v.at(static_cast<std::size_t>(i));
        }
        config.stem_pool = j.value("stem_pool", config.stem_pool);
    } catch (const json::exception& e) {
        throw ConfigError(concat("model config: ", e.what()));
    }
    config.validate();
    return config;
}

namespace {

template <typename T>
TensorPtr<T> he_conv_weight(Rng& rng, std::int64_t cout, std::int64_t cin, std::int64_t k) {
    auto w = make_tensor<T>({cout, cin, k, k, k});
    const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k * k));
    for (auto& v : w->data) v = static_cast<T>(rng.normal(0.0, stddev));
    return w;
}

template <typename T>
NormLayer<T> make_norm(std::int64_t channels) {
    NormLayer<T> bn;
    bn.gamma = full_like_shape<T>({channels}, T(1));
    bn.beta = make_tensor<T>({channels});
    bn.state = BatchNormState<T>(channels);
    return bn;
}

constexpr double kBnEps = 1e-5;

}  // namespace

template <typename T>
TensorPtr<T> forward_block(BottleneckBlock<T>& block, const TensorPtr<T>& x, Mode mode, Tape<T>* tape) {
    auto out = conv3d(tape, x, block.conv1.weight, TensorPtr<T>{}, block.conv1.stride, block.conv1.pad);
    out = batch_norm3d(tape, out, block.bn1.gamma, block.bn1.beta, static_cast<T>(kBnEps), mode, &block.bn1.state);
    out = relu(tape, out);
    out = conv3d(tape, out, block.conv2.weight, TensorPtr<T>{}, block.conv2.stride, block.conv2.pad);
    out = batch_norm3d(tape, out, block.bn2.gamma, block.bn2.beta, static_cast<T>(kBnEps), mode, &block.bn2.state);
    out = relu(tape, out);
    out = conv3d(tape, out, block.conv3.weight, TensorPtr<T>{}, block.conv3.stride, block.conv3.pad);
    out = batch_norm3d(tape, out, block.bn3.gamma, block.bn3.beta, static_cast<T>(kBnEps), mode, &block.bn3.state);
    TensorPtr<T> skip = x;
    if (block.has_projection) {
        skip = conv3d(tape, x, block.proj.weight, TensorPtr<T>{}, block.proj.stride, block.proj.pad);
        skip = batch_norm3d(tape, skip, block.proj_bn.gamma, block.proj_bn.beta, static_cast<T>(kBnEps), mode,
                            &block.proj_bn.state);
    }
    return relu(tape, add(tape, out, skip));
}

template <typename T>
Network<T> build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(hash_combine(seed, 0x3d5e7c0deULL));

    Network<T> net;
    net.config = config;
    net.stem.weight = he_conv_weight<T>(rng, config.stem_channels, config.input_shape[0], 3);
    net.stem.stride = {2, 2, 2};
    net.stem.pad = {1, 1, 1};
    net.stem_bn = make_norm<T>(config.stem_channels);

    std::int64_t in_ch = config.stem_channels;
    net.stages.resize(4);
    for (int s = 0; s < 4; ++s) {
        const std::int64_t width = config.stage_channels[static_cast<std::size_t>(s)];
        const std::int64_t out_ch = width * config.bottleneck_expansion;
        for (std::int64_t b = 0; b < config.stage_blocks[static_cast<std::size_t>(s)]; ++b) {
            BottleneckBlock<T> block;
            // First block of stages 2-4 downsamples by stride 2 in conv2 and
            // in the projection shortcut.
            const std::int64_t stride = (b == 0 && s > 0) ? 2 : 1;
            block.conv1.weight = he_conv_weight<T>(rng, width, in_ch, 1);
            block.conv2.weight = he_conv_weight<T>(rng, width, width, 3);
            block.conv2.stride = {stride, stride, stride};
            block.conv2.pad = {1, 1, 1};
            block.conv3.weight = he_conv_weight<T>(rng, out_ch, width, 1);
            block.bn1 = make_norm<T>(width);
            block.bn2 = make_norm<T>(width);
            block.bn3 = make_norm<T>(out_ch);
            if (stride != 1 || in_ch != out_ch) {
                block.has_projection = true;
                block.proj.weight = he_conv_weight<T>(rng, out_ch, in_ch, 1);
                block.proj.stride = {stride, stride, stride};
                block.proj_bn = make_norm<T>(out_ch);
            }
            net.stages[static_cast<std::size_t>(s)].push_back(std::move(block));
            in_ch = out_ch;
        }
    }

    net.head_weight = make_tensor<T>({config.num_classes, in_ch});
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_ch));
    for (auto& v : net.head_weight->data) v = static_cast<T>(rng.normal(0.0, stddev));
    net.head_bias = make_tensor<T>({config.num_classes});
    net.set_requires_grad(true);
    return net;
}

template <typename T>
std::vector<StateEntry<T>> Network<T>::state_entries() {
    std::vector<StateEntry<T>> entries;
    auto add_tensor = [&](const std::string& name, const TensorPtr<T>& t, bool trainable) {
        entries.push_back(StateEntry<T>{name, t->shape, &t->data, trainable});
    };
    auto add_norm = [&](const std::string& prefix, NormLayer<T>& bn) {
        add_tensor(prefix + ".gamma", bn.gamma, true);
        add_tensor(prefix + ".beta", bn.beta, true);
        const Shape c{static_cast<std::int64_t>(bn.state.running_mean.size())};
        entries.push_back(StateEntry<T>{prefix + ".running_mean", c, &bn.state.running_mean, false});
        entries.push_back(StateEntry<T>{prefix + ".running_var", c, &bn.state.running_var, false});
    };
    add_tensor("stem.conv.weight", stem.weight, true);
    add_norm("stem.bn", stem_bn);
    for (std::size_t s = 0; s < stages.size(); ++s) {
        for (std::size_t b = 0; b < stages[s].size(); ++b) {
            const std::string prefix = concat("stage", s + 1, ".block", b);
            auto& block = stages[s][b];
            add_tensor(prefix + ".conv1.weight", block.conv1.weight, true);
            add_norm(prefix + ".bn1", block.bn1);
            add_tensor(prefix + ".conv2.weight", block.conv2.weight, true);
            add_norm(prefix + ".bn2", block.bn2);
            add_tensor(prefix + ".conv3.weight", block.conv3.weight, true);
            add_norm(prefix + ".bn3", block.bn3);
            if (block.has_projection) {
                add_tensor(prefix + ".proj.weight", block.proj.weight, true);
                add_norm(prefix + ".proj_bn", block.proj_bn);
            }
        }
    }
    add_tensor("head.weight", head_weight, true);
    add_tensor("head.bias", head_bias, true);
    return entries;
}

template <typename T>
std::vector<TensorPtr<T>> Network<T>::parameters() {
    std::vector<TensorPtr<T>> params;
    auto add_norm = [&](NormLayer<T>& bn) {
        params.push_back(bn.gamma);
        params.push_back(bn.beta);
    };
    params.push_back(stem.weight);
    add_norm(stem_bn);
    for (auto& stage : stages) {
        for (auto& block : stage) {
            params.push_back(block.conv1.weight);
            add_norm(block.bn1);
            params.push_back(block.conv2.weight);
            add_norm(block.bn2);
            params.push_back(block.conv3.weight);
            add_norm(block.bn3);
            if (block.has_projection) {
                params.push_back(block.proj.weight);
                add_norm(block.proj_bn);
            }
        }
    }
    params.push_back(head_weight);
    params.push_back(head_bias);
    return params;
}

template <typename T>
void Network<T>::set_requires_grad(bool on) {
    for (auto& p : parameters()) p->requires_grad = on;
}

template <typename T>
TensorPtr<T> forward(Network<T>& net, const TensorPtr<T>& batch, Mode mode, Tape<T>* tape) {
    if (!batch || batch->shape.size() != 5) throw Error("forward: batch must be N,C,D,H,W");
    const auto& in = net.config.input_shape;
    for (int i = 0; i < 4; ++i) {
        if (batch->shape[static_cast<std::size_t>(i + 1)] != in[static_cast<std::size_t>(i)]) {
            throw Error(concat("forward: batch shape ", shape_str(batch->shape), " does not match configured input ",
                               in[0], "x", in[1], "x", in[2], "x", in[3]));
        }
    }
    auto x = conv3d(tape, batch, net.stem.weight, TensorPtr<T>{}, net.stem.stride, net.stem.pad);
    x = batch_norm3d(tape, x, net.stem_bn.gamma, net.stem_bn.beta, static_cast<T>(kBnEps), mode, &net.stem_bn.state);
    x = relu(tape, x);
    if (net.config.stem_pool) x = max_pool3d(tape, x, {3, 3, 3}, {2, 2, 2}, {1, 1, 1});
    for (auto& stage : net.stages) {
        for (auto& block : stage) x = forward_block(block, x, mode, tape);
    }
    x = global_avg_pool3d(tape, x);
    return linear(tape, x, net.head_weight, net.head_bias);
}

template <typename T>
std::int64_t count_params(Network<T>& net) {
    std::int64_t count = 0;
    for (auto& entry : net.state_entries()) {
        if (entry.trainable) count += static_cast<std::int64_t>(entry.blob->size());
    }
    return count;
}

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32le(std::ofstream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

std::uint32_t read_u32le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

template <typename T>
void save_checkpoint(Network<T>& net, const std::string& path) {
    auto entries = net.state_entries();
    json header;
    header["config"] = json::parse(model_config_to_json(net.config));
    json table = json::array();
    for (const auto& entry : entries) {
        json item;
        item["name"] = entry.name;
        item["shape"] = entry.shape;
        item["trainable"] = entry.trainable;
        table.push_back(item);
    }
    header["entries"] = table;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(concat("cannot open checkpoint '", path, "' for writing"));
    out.write(kCheckpointMagic, 4);
    put_u32le(out, kCheckpointVersion);
    put_u32le(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& entry : entries) {
        for (T v : *entry.blob) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32le(out, bits);
        }
    }
    if (!out) throw DataError(concat("write failed for checkpoint '", path, "'"));
}

template <typename T>
Network<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(concat("cannot open checkpoint '", path, "'"));
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw DataError(concat("checkpoint '", path, "': bad magic, not an MCKP file"));
    }
    const std::uint32_t version = read_u32le(in);
    if (version != kCheckpointVersion) {
        throw DataError(concat("checkpoint '", path, "': unsupported version ", version));
    }
    const std::uint32_t header_len = read_u32le(in);
    std::string text(header_len, '\0');
    in.read(text.data(), header_len);
    if (!in) throw DataError(concat("checkpoint '", path, "': truncated header"));

    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(concat("checkpoint '", path, "': invalid header JSON: ", e.what()));
    }
    const ModelConfig config = model_config_from_json(header.at("config").dump());
    Network<T> net = build_model<T>(config, 0);
    auto entries = net.state_entries();
    const auto& table = header.at("entries");
    if (table.size() != entries.size()) {
        throw DataError(concat("checkpoint '", path, "': has ", table.size(), " entries, model expects ",
                               entries.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const std::string name = table.at(i).at("name").get<std::string>();
        const auto shape = table.at(i).at("shape").get<std::vector<std::int64_t>>();
        if (name != entries[i].name || shape != entries[i].shape) {
            throw DataError(concat("checkpoint '", path, "': entry ", i, " is '", name, "' ",
                                   shape_str(shape), ", model expects '", entries[i].name, "' ",
                                   shape_str(entries[i].shape)));
        }
        auto& blob = *entries[i].blob;
        for (auto& v : blob) {
            const std::uint32_t bits = read_u32le(in);
            float f;
            std::memcpy(&f, &bits, 4);
            v = static_cast<T>(f);
        }
    }
    if (!in) throw DataError(concat("checkpoint '", path, "': truncated payload"));
    return net;
}

#define MEDCONV_INST_MODEL(T)                                                          \
    template struct Network<T>;                                                        \
    template Network<T> build_model<T>(const ModelConfig&, std::uint64_t);             \
    template TensorPtr<T> forward<T>(Network<T>&, const TensorPtr<T>&, Mode, Tape<T>*); \
    template TensorPtr<T> forward_block<T>(BottleneckBlock<T>&, const TensorPtr<T>&, Mode, Tape<T>*); \
    template std::int64_t count_params<T>(Network<T>&);                                \
    template void save_checkpoint<T>(Network<T>&, const std::string&);                 \
    template Network<T> load_checkpoint<T>(const std::string&);
MEDCONV_INST_MODEL(float)
MEDCONV_INST_MODEL(double)
#undef MEDCONV_INST_MODEL

}  // namespace medconv
