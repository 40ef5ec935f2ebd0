#include "medconv/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "medconv/common.hpp"

namespace fs = std::filesystem;

namespace medconv {

namespace {

constexpr char kVolumeMagic[4] = {'M', 'C', 'V', 'L'};
constexpr std::uint32_t kVolumeVersion = 1;
constexpr std::uint32_t kDtypeF32LE = 1;

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32(const std::string& buf, std::size_t off) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off])) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 1])) << 8) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 2])) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 3])) << 24);
}

float get_f32(const std::string& buf, std::size_t off) {
    return std::bit_cast<float>(get_u32(buf, off));
}

}  // namespace

void save_volume(const Volume& vol, const std::string& path) {
    if (vol.numel() != static_cast<std::int64_t>(vol.values.size())) {
        throw DataError(concat("save_volume: ", vol.values.size(), " voxels for dims ", vol.dx, "x", vol.dy,
                               "x", vol.dz));
    }
    std::string buf;
    buf.reserve(28 + vol.values.size() * 4);
    buf.append(kVolumeMagic, 4);
    put_u32(buf, kVolumeVersion);
    put_u32(buf, static_cast<std::uint32_t>(vol.dx));
    put_u32(buf, static_cast<std::uint32_t>(vol.dy));
    put_u32(buf, static_cast<std::uint32_t>(vol.dz));
    put_u32(buf, kDtypeF32LE);
    const std::array<float, 3> spacing = vol.spacing.value_or(std::array<float, 3>{0.0f, 0.0f, 0.0f});
    for (float s : spacing) put_f32(buf, s);
    for (float v : vol.values) put_f32(buf, v);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(concat("cannot open '", path, "' for writing"));
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError(concat("write failed for '", path, "'"));
}

Volume load_volume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(concat("cannot open volume '", path, "'"));
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();

    constexpr std::size_t header_size = 4 + 4 * 5 + 4 * 3;
    if (buf.size() < header_size) throw DataError(concat("volume '", path, "': truncated header"));
    if (std::memcmp(buf.data(), kVolumeMagic, 4) != 0) {
        throw DataError(concat("volume '", path, "': bad magic, not an MCVL file"));
    }
    const std::uint32_t version = get_u32(buf, 4);
    if (version != kVolumeVersion) throw DataError(concat("volume '", path, "': unsupported version ", version));
    Volume vol;
    vol.dx = get_u32(buf, 8);
    vol.dy = get_u32(buf, 12);
    vol.dz = get_u32(buf, 16);
    if (vol.dx == 0 || vol.dy == 0 || vol.dz == 0) {
        throw DataError(concat("volume '", path, "': zero dimension"));
    }
    const std::uint32_t dtype = get_u32(buf, 20);
    if (dtype != kDtypeF32LE) throw DataError(concat("volume '", path, "': unsupported dtype code ", dtype));
    std::array<float, 3> spacing{get_f32(buf, 24), get_f32(buf, 28), get_f32(buf, 32)};
    if (spacing[0] != 0.0f || spacing[1] != 0.0f || spacing[2] != 0.0f) vol.spacing = spacing;

    const std::size_t expect = static_cast<std::size_t>(vol.numel()) * 4;
    const std::size_t have = buf.size() - header_size;
    if (have < expect) {
        throw DataError(concat("volume '", path, "': truncated payload, ", have / 4, " voxels of ", vol.numel()));
    }
    if (have > expect) {
        throw DataError(concat("volume '", path, "': payload larger than dimensions imply"));
    }
    vol.values.resize(static_cast<std::size_t>(vol.numel()));
    for (std::size_t i = 0; i < vol.values.size(); ++i) vol.values[i] = get_f32(buf, header_size + i * 4);
    return vol;
}

Volume window_intensity(const Volume& vol, float level, float width) {
    if (width <= 0.0f) throw ConfigError(concat("window_intensity: width must be > 0, got ", width));
    const float lo = level - width / 2.0f;
    Volume out = vol;
    for (float& v : out.values) {
        float w = (v - lo) / width;
        v = w < 0.0f ? 0.0f : (w > 1.0f ? 1.0f : w);
    }
    return out;
}

namespace {

float sample_zero_outside(const Volume& vol, std::int64_t x, std::int64_t y, std::int64_t z) {
    if (x < 0 || y < 0 || z < 0 || x >= vol.dx || y >= vol.dy || z >= vol.dz) return 0.0f;
    return vol.at(x, y, z);
}

// Align-corners coordinate mapping, so identity crops resample exactly.
double src_coord(std::int64_t i, std::int64_t out_n, std::int64_t lo, std::int64_t hi) {
    if (out_n == 1) return (static_cast<double>(lo) + static_cast<double>(hi)) / 2.0;
    return static_cast<double>(lo) +
           static_cast<double>(i) * static_cast<double>(hi - lo) / static_cast<double>(out_n - 1);
}

}  // namespace

Volume mask_crop(const Volume& vol, const Volume& mask, std::int64_t pad,
                 const std::array<std::int64_t, 3>& out_dims, Interp interp) {
    if (mask.dx != vol.dx || mask.dy != vol.dy || mask.dz != vol.dz) {
        throw Error(concat("mask_crop: mask dims ", mask.dx, "x", mask.dy, "x", mask.dz,
                           " do not match volume ", vol.dx, "x", vol.dy, "x", vol.dz));
    }
    if (pad < 0) throw Error("mask_crop: pad must be >= 0");
    for (auto d : out_dims) {
        if (d <= 0) throw Error("mask_crop: output dims must be positive");
    }

    std::int64_t x0 = vol.dx, y0 = vol.dy, z0 = vol.dz, x1 = -1, y1 = -1, z1 = -1;
    for (std::int64_t z = 0; z < vol.dz; ++z) {
        for (std::int64_t y = 0; y < vol.dy; ++y) {
            for (std::int64_t x = 0; x < vol.dx; ++x) {
                if (mask.at(x, y, z) > 0.5f) {
                    x0 = std::min(x0, x); x1 = std::max(x1, x);
                    y0 = std::min(y0, y); y1 = std::max(y1, y);
                    z0 = std::min(z0, z); z1 = std::max(z1, z);
                }
            }
        }
    }
    if (x1 < 0) throw DataError("mask_crop: empty mask (no L1 voxels)");

    x0 = std::max<std::int64_t>(0, x0 - pad); x1 = std::min(vol.dx - 1, x1 + pad);
    y0 = std::max<std::int64_t>(0, y0 - pad); y1 = std::min(vol.dy - 1, y1 + pad);
    z0 = std::max<std::int64_t>(0, z0 - pad); z1 = std::min(vol.dz - 1, z1 + pad);

    Volume out(out_dims[0], out_dims[1], out_dims[2]);
    out.spacing = vol.spacing;
    for (std::int64_t z = 0; z < out.dz; ++z) {
        const double sz = src_coord(z, out.dz, z0, z1);
        for (std::int64_t y = 0; y < out.dy; ++y) {
            const double sy = src_coord(y, out.dy, y0, y1);
            for (std::int64_t x = 0; x < out.dx; ++x) {
                const double sx = src_coord(x, out.dx, x0, x1);
                if (interp == Interp::kNearest) {
                    out.at(x, y, z) = sample_zero_outside(vol, std::llround(sx), std::llround(sy), std::llround(sz));
                    continue;
                }
                const std::int64_t fx = static_cast<std::int64_t>(std::floor(sx));
                const std::int64_t fy = static_cast<std::int64_t>(std::floor(sy));
                const std::int64_t fz = static_cast<std::int64_t>(std::floor(sz));
                const double tx = sx - static_cast<double>(fx);
                const double ty = sy - static_cast<double>(fy);
                const double tz = sz - static_cast<double>(fz);
                double acc = 0.0;
                for (int dz8 = 0; dz8 < 2; ++dz8) {
                    const double wz = dz8 ? tz : 1.0 - tz;
                    if (wz == 0.0) continue;
                    for (int dy8 = 0; dy8 < 2; ++dy8) {
                        const double wy = dy8 ? ty : 1.0 - ty;
                        if (wy == 0.0) continue;
                        for (int dx8 = 0; dx8 < 2; ++dx8) {
                            const double wx = dx8 ? tx : 1.0 - tx;
                            if (wx == 0.0) continue;
                            acc += wz * wy * wx *
                                   static_cast<double>(sample_zero_outside(vol, fx + dx8, fy + dy8, fz + dz8));
                        }
                    }
                }
                out.at(x, y, z) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Volume flip_axis(const Volume& vol, int axis) {
    if (axis < 0 || axis > 2) throw Error(concat("flip_axis: axis ", axis, " outside [0,2]"));
    Volume out(vol.dx, vol.dy, vol.dz);
    out.spacing = vol.spacing;
    for (std::int64_t z = 0; z < vol.dz; ++z) {
        for (std::int64_t y = 0; y < vol.dy; ++y) {
            for (std::int64_t x = 0; x < vol.dx; ++x) {
                const std::int64_t sx = axis == 0 ? vol.dx - 1 - x : x;
                const std::int64_t sy = axis == 1 ? vol.dy - 1 - y : y;
                const std::int64_t sz = axis == 2 ? vol.dz - 1 - z : z;
                out.at(x, y, z) = vol.at(sx, sy, sz);
            }
        }
    }
    return out;
}

Volume augment_sample(const Volume& vol, const AugPolicy& policy, Rng& rng) {
    if (policy.apply_prob < 0.0 || policy.apply_prob > 1.0 || policy.flip_prob < 0.0 || policy.flip_prob > 1.0) {
        throw ConfigError("augment_sample: probabilities must be in [0,1]");
    }
    if (!rng.bernoulli(policy.apply_prob)) return vol;

    Volume out = vol;
    for (int axis = 0; axis < 3; ++axis) {
        if (rng.bernoulli(policy.flip_prob)) out = flip_axis(out, axis);
    }
    if (policy.max_shift > 0) {
        const std::int64_t span = 2 * policy.max_shift + 1;
        const std::int64_t ox = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(span))) - policy.max_shift;
        const std::int64_t oy = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(span))) - policy.max_shift;
        const std::int64_t oz = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(span))) - policy.max_shift;
        Volume shifted(out.dx, out.dy, out.dz);
        shifted.spacing = out.spacing;
        for (std::int64_t z = 0; z < out.dz; ++z) {
            for (std::int64_t y = 0; y < out.dy; ++y) {
                for (std::int64_t x = 0; x < out.dx; ++x) {
                    shifted.at(x, y, z) = sample_zero_outside(out, x + ox, y + oy, z + oz);
                }
            }
        }
        out = std::move(shifted);
    }
    if (policy.jitter) {
        const float a = static_cast<float>(rng.uniform(policy.jitter_scale_lo, policy.jitter_scale_hi));
        const float b = static_cast<float>(rng.uniform(policy.jitter_offset_lo, policy.jitter_offset_hi));
        for (float& v : out.values) v = a * v + b;
    }
    return out;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

std::string Manifest::resolve(const std::string& rel) const {
    if (rel.empty()) return rel;
    fs::path p(rel);
    if (p.is_absolute() || base_dir.empty()) return rel;
    return (fs::path(base_dir) / p).string();
}

void save_manifest(const Manifest& manifest, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError(concat("cannot open '", path, "' for writing"));
    out << "path,mask_path,label,class_name,split\n";
    for (const auto& record : manifest.records) {
        out << record.volume_path << "," << record.mask_path << "," << record.label << ","
            << record.class_name << "," << record.split << "\n";
    }
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(concat("cannot open manifest '", path, "'"));
    std::string header;
    if (!std::getline(in, header)) throw DataError(concat("manifest '", path, "' is empty"));
    if (header != "path,mask_path,label,class_name,split") {
        throw DataError(concat("manifest '", path, "': unexpected header '", header, "'"));
    }
    Manifest manifest;
    manifest.base_dir = fs::path(path).parent_path().string();
    std::string line;
    std::int64_t max_label = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        SampleRecord record;
        std::string label_str;
        if (!std::getline(ls, record.volume_path, ',') || !std::getline(ls, record.mask_path, ',') ||
            !std::getline(ls, label_str, ',') || !std::getline(ls, record.class_name, ',') ||
            !std::getline(ls, record.split, ',')) {
            throw DataError(concat("manifest '", path, "': malformed row '", line, "'"));
        }
        record.label = std::stoll(label_str);
        if (record.label < 0) throw DataError(concat("manifest '", path, "': negative label"));
        max_label = std::max(max_label, record.label);
        manifest.records.push_back(std::move(record));
    }
    if (manifest.records.empty()) throw DataError(concat("manifest '", path, "' has no records"));
    manifest.class_names.assign(static_cast<std::size_t>(max_label + 1), "");
    for (const auto& record : manifest.records) {
        auto& name = manifest.class_names[static_cast<std::size_t>(record.label)];
        if (name.empty()) {
            name = record.class_name;
        } else if (name != record.class_name) {
            throw DataError(concat("manifest '", path, "': class ", record.label, " named both '", name,
                                   "' and '", record.class_name, "'"));
        }
    }
    for (std::size_t c = 0; c < manifest.class_names.size(); ++c) {
        if (manifest.class_names[c].empty()) {
            throw DataError(concat("manifest '", path, "': class ids are not dense, id ", c, " unused"));
        }
    }
    for (const auto& record : manifest.records) {
        if (!fs::exists(manifest.resolve(record.volume_path))) {
            throw DataError(concat("manifest '", path, "': volume '", record.volume_path, "' is not resolvable"));
        }
        if (!record.mask_path.empty() && !fs::exists(manifest.resolve(record.mask_path))) {
            throw DataError(concat("manifest '", path, "': mask '", record.mask_path, "' is not resolvable"));
        }
    }
    return manifest;
}

ClassStats class_stats(const Manifest& manifest, const std::string& split) {
    const std::int64_t classes = static_cast<std::int64_t>(manifest.class_names.size());
    ClassStats stats;
    stats.split = split;
    stats.counts.assign(static_cast<std::size_t>(classes), 0);
    stats.class_indices.assign(static_cast<std::size_t>(classes), {});
    std::int64_t pos = 0;
    for (const auto& record : manifest.records) {
        if (record.split != split) continue;
        ++stats.counts[static_cast<std::size_t>(record.label)];
        stats.class_indices[static_cast<std::size_t>(record.label)].push_back(pos);
        ++pos;
    }
    stats.total = pos;
    if (stats.total == 0) throw DataError(concat("split '", split, "' is empty"));
    stats.frequencies.reserve(static_cast<std::size_t>(classes));
    for (auto c : stats.counts) {
        stats.frequencies.push_back(static_cast<double>(c) / static_cast<double>(stats.total));
    }
    if (std::all_of(stats.counts.begin(), stats.counts.end(), [](std::int64_t c) { return c > 0; })) {
        stats.weights = inverse_freq_weights(stats.counts);
    }
    return stats;
}

std::vector<AugPolicy> balanced_augment_policy(const ClassStats& stats, const AugPolicy& base) {
    double head_freq = 0.0;
    for (double f : stats.frequencies) head_freq = std::max(head_freq, f);
    std::vector<AugPolicy> out(stats.frequencies.size(), base);
    if (head_freq >= 1.0) return out;  // single populated class: nothing to rebalance
    for (std::size_t c = 0; c < out.size(); ++c) {
        const double scale = (1.0 - stats.frequencies[c]) / (1.0 - head_freq);
        out[c].apply_prob = std::min(1.0, base.apply_prob * scale);
    }
    return out;
}

std::vector<std::int64_t> oversample_indices(const ClassStats& stats, std::uint64_t seed, bool enabled) {
    Rng rng(hash_combine(seed, 0x05e7a11ULL));
    std::vector<std::int64_t> out;
    if (!enabled) {
        out.resize(static_cast<std::size_t>(stats.total));
        std::iota(out.begin(), out.end(), 0);
    } else {
        std::int64_t n_max = 0;
        for (auto c : stats.counts) n_max = std::max(n_max, c);
        out.reserve(static_cast<std::size_t>(n_max) * stats.counts.size());
        for (const auto& indices : stats.class_indices) {
            if (indices.empty()) continue;
            for (std::int64_t k = 0; k < n_max; ++k) {
                out.push_back(indices[rng.below(indices.size())]);
            }
        }
    }
    // Fisher-Yates
    for (std::size_t i = out.size(); i > 1; --i) {
        std::swap(out[i - 1], out[rng.below(i)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// phantom generator
// ---------------------------------------------------------------------------

std::vector<std::int64_t> largest_remainder_counts(std::int64_t n, const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw ConfigError("largest_remainder_counts: negative weight");
        total += w;
    }
    if (total <= 0.0) throw ConfigError("largest_remainder_counts: weights sum to zero");
    std::vector<std::int64_t> counts(weights.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(n) * weights[i] / total;
        counts[i] = static_cast<std::int64_t>(std::floor(exact));
        assigned += counts[i];
        remainders.push_back({exact - std::floor(exact), i});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::int64_t k = 0; k < n - assigned; ++k) {
        ++counts[remainders[static_cast<std::size_t>(k) % remainders.size()].second];
    }
    return counts;
}

namespace {

using json = nlohmann::json;

void apply_phantom_json(PhantomConfig& config, const json& j) {
    if (j.contains("dims")) {
        auto d = j.at("dims");
        for (int i = 0; i < 3; ++i) config.dims[static_cast<std::size_t>(i)] = d.at(static_cast<std::size_t>(i));
    }
    if (j.contains("proportions")) config.proportions = j.at("proportions").get<std::vector<double>>();
    if (j.contains("class_names")) config.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (j.contains("class_params")) {
        config.class_params.clear();
        for (const auto& cp : j.at("class_params")) {
            PhantomClassParams params;
            params.shell_mean = cp.value("shell_mean", params.shell_mean);
            params.interior_mean = cp.value("interior_mean", params.interior_mean);
            params.shell_thickness = cp.value("shell_thickness", params.shell_thickness);
            config.class_params.push_back(params);
        }
    }
    config.noise_sigma = j.value("noise_sigma", config.noise_sigma);
    config.density_jitter_sigma = j.value("density_jitter_sigma", config.density_jitter_sigma);
    config.background_mean = j.value("background_mean", config.background_mean);
    config.background_sigma = j.value("background_sigma", config.background_sigma);
    if (j.contains("split_fractions")) {
        auto f = j.at("split_fractions");
        for (int i = 0; i < 3; ++i) {
            config.split_fractions[static_cast<std::size_t>(i)] = f.at(static_cast<std::size_t>(i));
        }
    }
    config.write_masks = j.value("write_masks", config.write_masks);
    config.seed = j.value("seed", config.seed);
}

void validate_phantom_config(const PhantomConfig& config) {
    for (auto d : config.dims) {
        if (d < 8) throw ConfigError(concat("phantom config: dims must be >= 8 per axis, got ", d));
    }
    if (config.proportions.empty()) throw ConfigError("phantom config: proportions are empty");
    double sum = 0.0;
    for (double p : config.proportions) {
        if (p <= 0.0) throw ConfigError("phantom config: proportions must be positive");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(concat("phantom config: proportions sum to ", sum, ", not 1"));
    if (config.class_names.size() != config.proportions.size() ||
        config.class_params.size() != config.proportions.size()) {
        throw ConfigError("phantom config: class_names/class_params/proportions sizes differ");
    }
}

struct Rotation {
    double m[3][3];
};

Rotation random_rotation(Rng& rng) {
    double q[4];
    double norm = 0.0;
    for (double& v : q) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : q) v /= norm;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Rotation r;
    r.m[0][0] = 1 - 2 * (y * y + z * z); r.m[0][1] = 2 * (x * y - w * z);     r.m[0][2] = 2 * (x * z + w * y);
    r.m[1][0] = 2 * (x * y + w * z);     r.m[1][1] = 1 - 2 * (x * x + z * z); r.m[1][2] = 2 * (y * z - w * x);
    r.m[2][0] = 2 * (x * z - w * y);     r.m[2][1] = 2 * (y * z + w * x);     r.m[2][2] = 1 - 2 * (x * x + y * y);
    return r;
}

}  // namespace

PhantomConfig phantom_config_from_json_text(const std::string& text) {
    PhantomConfig config;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(concat("phantom config: invalid JSON: ", e.what()));
    }
    try {
        apply_phantom_json(config, j);
    } catch (const json::exception& e) {
        throw ConfigError(concat("phantom config: ", e.what()));
    }
    validate_phantom_config(config);
    return config;
}

PhantomConfig load_phantom_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(concat("cannot open phantom config '", path, "'"));
    std::stringstream ss;
    ss << in.rdbuf();
    return phantom_config_from_json_text(ss.str());
}

Manifest generate_phantoms(const PhantomConfig& config, std::int64_t n, const std::string& out_dir) {
    validate_phantom_config(config);
    const std::int64_t classes = static_cast<std::int64_t>(config.proportions.size());
    if (n < classes) throw ConfigError(concat("generate_phantoms: n=", n, " is below the class count ", classes));

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError(concat("cannot create output directory '", out_dir, "': ", ec.message()));

    const auto class_counts = largest_remainder_counts(n, config.proportions);
    const std::vector<double> fractions(config.split_fractions.begin(), config.split_fractions.end());
    static const char* kSplits[3] = {"train", "val", "test"};

    Manifest manifest;
    manifest.base_dir = out_dir;
    manifest.class_names = config.class_names;

    std::int64_t index = 0;
    for (std::int64_t cls = 0; cls < classes; ++cls) {
        const auto split_counts = largest_remainder_counts(class_counts[static_cast<std::size_t>(cls)], fractions);
        std::int64_t within = 0;
        for (std::int64_t k = 0; k < class_counts[static_cast<std::size_t>(cls)]; ++k, ++within, ++index) {
            int split_id = 0;
            std::int64_t acc = 0;
            for (int s = 0; s < 3; ++s) {
                acc += split_counts[static_cast<std::size_t>(s)];
                if (within < acc) {
                    split_id = s;
                    break;
                }
            }

            Rng rng = sample_stream(config.seed, 0, static_cast<std::uint64_t>(index));
            const auto& dims = config.dims;
            const auto& params = config.class_params[static_cast<std::size_t>(cls)];

            double center[3], semi[3];
            for (int a = 0; a < 3; ++a) {
                center[a] = static_cast<double>(dims[static_cast<std::size_t>(a)]) *
                            (0.5 + rng.uniform(-0.06, 0.06));
            }
            for (int a = 0; a < 3; ++a) {
                semi[a] = static_cast<double>(dims[static_cast<std::size_t>(a)]) * rng.uniform(0.28, 0.40);
            }
            const Rotation rot = random_rotation(rng);
            const double density_shift = rng.normal(0.0, config.density_jitter_sigma);

            Volume vol(dims[0], dims[1], dims[2]);
            Volume mask(dims[0], dims[1], dims[2]);
            for (std::int64_t z = 0; z < vol.dz; ++z) {
                for (std::int64_t y = 0; y < vol.dy; ++y) {
                    for (std::int64_t x = 0; x < vol.dx; ++x) {
                        const double noise = rng.normal();
                        const double p[3] = {static_cast<double>(x) - center[0],
                                             static_cast<double>(y) - center[1],
                                             static_cast<double>(z) - center[2]};
                        // body coordinates = R^T * offset
                        double b[3];
                        for (int a = 0; a < 3; ++a) {
                            b[a] = rot.m[0][a] * p[0] + rot.m[1][a] * p[1] + rot.m[2][a] * p[2];
                        }
                        double r_outer = 0.0, r_inner = 0.0;
                        for (int a = 0; a < 3; ++a) {
                            const double s_out = b[a] / semi[a];
                            const double inner_semi = std::max(semi[a] - params.shell_thickness, 0.5);
                            const double s_in = b[a] / inner_semi;
                            r_outer += s_out * s_out;
                            r_inner += s_in * s_in;
                        }
                        double value;
                        if (r_outer <= 1.0) {
                            mask.at(x, y, z) = 1.0f;
                            const double base = r_inner <= 1.0 ? params.interior_mean : params.shell_mean;
                            value = base + density_shift + noise * config.noise_sigma;
                        } else {
                            value = config.background_mean + noise * config.background_sigma;
                        }
                        vol.at(x, y, z) = static_cast<float>(value);
                    }
                }
            }

            char name[64];
            std::snprintf(name, sizeof(name), "vol_%06lld.mcvl", static_cast<long long>(index));
            save_volume(vol, (fs::path(out_dir) / name).string());
            SampleRecord record;
            record.volume_path = name;
            if (config.write_masks) {
                char mask_name[64];
                std::snprintf(mask_name, sizeof(mask_name), "mask_%06lld.mcvl", static_cast<long long>(index));
                save_volume(mask, (fs::path(out_dir) / mask_name).string());
                record.mask_path = mask_name;
            }
            record.label = cls;
            record.class_name = config.class_names[static_cast<std::size_t>(cls)];
            record.split = kSplits[split_id];
            manifest.records.push_back(std::move(record));
        }
    }

    save_manifest(manifest, (fs::path(out_dir) / "manifest.csv").string());
    return manifest;
}

}  // namespace medconv
