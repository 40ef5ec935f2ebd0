#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "medconv/losses.hpp"
#include "medconv/rng.hpp"

namespace medconv {

// Dense volumetric sample in Hounsfield-like units, index ((z*dy)+y)*dx + x.
struct Volume {
    std::int64_t dx = 0, dy = 0, dz = 0;
    std::optional<std::array<float, 3>> spacing;  // mm, when known
    std::vector<float> values;

    Volume() = default;
    Volume(std::int64_t x, std::int64_t y, std::int64_t z)
        : dx(x), dy(y), dz(z), values(static_cast<std::size_t>(x * y * z), 0.0f) {}

    float& at(std::int64_t x, std::int64_t y, std::int64_t z) {
        return values[static_cast<std::size_t>((z * dy + y) * dx + x)];
    }
    float at(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return values[static_cast<std::size_t>((z * dy + y) * dx + x)];
    }
    std::int64_t numel() const { return dx * dy * dz; }
};

// "MCVL" container, bit-exact round trip. Layout: magic, u32 version=1,
// u32 dx,dy,dz, u32 dtype (1 = little-endian f32), 3*f32 spacing (zeros when
// unspecified), then voxels.
void save_volume(const Volume& vol, const std::string& path);
Volume load_volume(const std::string& path);

// Clamp to [level - width/2, level + width/2], then rescale to [0,1].
Volume window_intensity(const Volume& vol, float level, float width);

enum class Interp { kTrilinear, kNearest };

// Crop to the mask bounding box expanded by pad (clamped to the volume),
// then resample to out_dims. Nearest-neighbor is intended for masks.
Volume mask_crop(const Volume& vol, const Volume& mask, std::int64_t pad,
                 const std::array<std::int64_t, 3>& out_dims, Interp interp = Interp::kTrilinear);

Volume flip_axis(const Volume& vol, int axis);

struct AugPolicy {
    double apply_prob = 0.5;  // probability the pipeline runs at all
    double flip_prob = 0.5;   // per axis
    std::int64_t max_shift = 2;
    bool jitter = true;
    double jitter_scale_lo = 0.9, jitter_scale_hi = 1.1;
    double jitter_offset_lo = -0.05, jitter_offset_hi = 0.05;
};

// Axis flips, random crop-with-pad shift, intensity jitter a*x+b on windowed
// values. Label-preserving by construction.
Volume augment_sample(const Volume& vol, const AugPolicy& policy, Rng& rng);

struct SampleRecord {
    std::string volume_path;          // as written in the manifest
    std::string mask_path;            // empty when absent
    std::int64_t label = 0;
    std::string class_name;
    std::string split;                // train|val|test
};

struct Manifest {
    std::string base_dir;             // directory the manifest was loaded from
    std::vector<std::string> class_names;
    std::vector<SampleRecord> records;

    std::string resolve(const std::string& rel) const;
};

void save_manifest(const Manifest& manifest, const std::string& path);
Manifest load_manifest(const std::string& path);

struct ClassStats {
    std::string split;
    std::int64_t total = 0;
    std::vector<std::int64_t> counts;
    std::vector<double> frequencies;
    // Positions within the split's record list, per class.
    std::vector<std::vector<std::int64_t>> class_indices;
    // Filled only when every class is present in the split.
    std::optional<ClassWeights> weights;
};

ClassStats class_stats(const Manifest& manifest, const std::string& split);

// Head class keeps the base application probability; tails are scaled by
// (1 - f_c) / (1 - f_head), capped at 1.
std::vector<AugPolicy> balanced_augment_policy(const ClassStats& stats, const AugPolicy& base);

// enabled: each class drawn with replacement to max-count occurrences and the
// result globally shuffled; disabled: a seeded permutation of the split.
std::vector<std::int64_t> oversample_indices(const ClassStats& stats, std::uint64_t seed, bool enabled);

struct PhantomClassParams {
    double shell_mean = 0.0;     // cortical rim intensity
    double interior_mean = 0.0;  // trabecular intensity
    double shell_thickness = 2.0;  // voxels
};

struct PhantomConfig {
    std::array<std::int64_t, 3> dims{24, 24, 24};
    std::vector<double> proportions{0.60, 0.25, 0.15};
    std::vector<std::string> class_names{"normal", "osteopenia", "osteoporosis"};
    std::vector<PhantomClassParams> class_params{
        {950.0, 420.0, 2.4},
        {800.0, 260.0, 1.9},
        {650.0, 110.0, 1.4},
    };
    double noise_sigma = 110.0;          // per-voxel
    double density_jitter_sigma = 55.0;  // per-sample global shift
    double background_mean = -80.0;
    double background_sigma = 40.0;
    std::array<double, 3> split_fractions{0.8, 0.0, 0.2};  // train/val/test
    bool write_masks = true;
    std::uint64_t seed = 7;
};

PhantomConfig load_phantom_config(const std::string& path);
PhantomConfig phantom_config_from_json_text(const std::string& text);

// Writes n volumes (optionally masks) plus manifest.csv into out_dir.
// Per-class counts follow largest-remainder rounding of n*proportions; class
// interior means are ordered normal > osteopenia > osteoporosis.
Manifest generate_phantoms(const PhantomConfig& config, std::int64_t n, const std::string& out_dir);

// Largest-remainder apportionment of n into parts proportional to `weights`;
// ties go to the lowest index.
std::vector<std::int64_t> largest_remainder_counts(std::int64_t n, const std::vector<double>& weights);

}  // namespace medconv
