#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "medconv/common.hpp"
#include "medconv/data.hpp"
#include "medconv/rng.hpp"

using namespace medconv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("medconv_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Volume random_volume(std::int64_t d, Rng& rng) {
    Volume vol(d, d, d);
    for (auto& v : vol.values) v = static_cast<float>(rng.uniform(-1000.0, 1500.0));
    return vol;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("volume: bit-exact round trip and format errors") {
    TempDir dir("vol");
    Rng rng(1);
    Volume vol = random_volume(4, rng);
    vol.spacing = {{1.0f, 1.0f, 2.5f}};
    const auto path = (dir.path / "v.mcvl").string();
    save_volume(vol, path);
    const Volume back = load_volume(path);
    CHECK(back.dx == 4);
    CHECK(back.dy == 4);
    CHECK(back.dz == 4);
    REQUIRE(back.spacing.has_value());
    CHECK((*back.spacing)[2] == 2.5f);
    CHECK(back.values == vol.values);  // float equality: bitwise round trip

    // bad magic
    {
        std::string bytes = file_bytes(path);
        bytes[0] = 'X';
        std::ofstream out(dir.path / "bad_magic.mcvl", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    try {
        load_volume((dir.path / "bad_magic.mcvl").string());
        FAIL("expected bad magic error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }

    // truncated payload: header says 4x4x4 but one float is missing
    {
        std::string bytes = file_bytes(path);
        bytes.resize(bytes.size() - 4);
        std::ofstream out(dir.path / "trunc.mcvl", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    try {
        load_volume((dir.path / "trunc.mcvl").string());
        FAIL("expected truncation error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }

    // oversized payload
    {
        std::string bytes = file_bytes(path);
        bytes.append(8, '\0');
        std::ofstream out(dir.path / "extra.mcvl", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_volume((dir.path / "extra.mcvl").string()), DataError);
    CHECK_THROWS_AS(load_volume((dir.path / "missing.mcvl").string()), DataError);
}

TEST_CASE("window_intensity: formula, clamps, monotonicity, idempotence") {
    Volume vol(3, 1, 1);
    vol.values = {300.0f, -450.0f, -2000.0f};
    const Volume out = window_intensity(vol, 300.0f, 1500.0f);
    CHECK(out.values[0] == doctest::Approx(0.5));
    CHECK(out.values[1] == 0.0f);
    CHECK(out.values[2] == 0.0f);

    Rng rng(2);
    Volume big(8, 8, 8);
    for (auto& v : big.values) v = static_cast<float>(rng.uniform(-2000.0, 3000.0));
    const Volume windowed = window_intensity(big, 300.0f, 1500.0f);
    for (float v : windowed.values) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    // monotone: a <= b implies out(a) <= out(b)
    for (std::size_t i = 1; i < big.values.size(); ++i) {
        if (big.values[i - 1] <= big.values[i]) CHECK(windowed.values[i - 1] <= windowed.values[i]);
    }
    // re-windowing already-normalized data with level 0.5 width 1 is identity
    const Volume again = window_intensity(windowed, 0.5f, 1.0f);
    for (std::size_t i = 0; i < windowed.values.size(); ++i) {
        CHECK(again.values[i] == doctest::Approx(windowed.values[i]).epsilon(1e-6));
    }

    CHECK_THROWS_AS(window_intensity(vol, 300.0f, 0.0f), ConfigError);
}

TEST_CASE("mask_crop: identity, bounding-box arithmetic, empty mask") {
    Rng rng(3);
    Volume vol = random_volume(8, rng);
    Volume all(8, 8, 8);
    std::fill(all.values.begin(), all.values.end(), 1.0f);
    const Volume same = mask_crop(vol, all, 0, {8, 8, 8});
    for (std::size_t i = 0; i < vol.values.size(); ++i) {
        CHECK(same.values[i] == doctest::Approx(vol.values[i]).epsilon(1e-6));
    }

    // single true voxel at (2,2,2), pad 2: region spans 0..4 per axis (5^3)
    Volume point(8, 8, 8);
    point.at(2, 2, 2) = 1.0f;
    const Volume crop = mask_crop(vol, point, 2, {5, 5, 5}, Interp::kNearest);
    for (std::int64_t z = 0; z < 5; ++z) {
        for (std::int64_t y = 0; y < 5; ++y) {
            for (std::int64_t x = 0; x < 5; ++x) {
                CHECK(crop.at(x, y, z) == vol.at(x, y, z));
            }
        }
    }

    Volume empty(8, 8, 8);
    CHECK_THROWS_AS(mask_crop(vol, empty, 0, {4, 4, 4}), DataError);
    Volume wrong(4, 4, 4);
    CHECK_THROWS_AS(mask_crop(vol, wrong, 0, {4, 4, 4}), Error);
}

TEST_CASE("flip_axis is an involution; augment respects bounds and determinism") {
    Rng rng(4);
    Volume vol(5, 6, 7);
    for (auto& v : vol.values) v = static_cast<float>(rng.uniform(0.0, 1.0));
    for (int axis = 0; axis < 3; ++axis) {
        const Volume twice = flip_axis(flip_axis(vol, axis), axis);
        CHECK(twice.values == vol.values);
    }

    AugPolicy policy;
    policy.apply_prob = 1.0;
    policy.flip_prob = 0.5;
    policy.max_shift = 2;
    float lo = 1e9f, hi = -1e9f;
    for (float v : vol.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (int trial = 0; trial < 20; ++trial) {
        Rng stream = sample_stream(7, 0, static_cast<std::uint64_t>(trial));
        const Volume aug = augment_sample(vol, policy, stream);
        for (float v : aug.values) {
            CHECK(v >= 0.9f * lo - 0.05f - 1e-6f);
            CHECK(v <= 1.1f * hi + 0.05f + 1e-6f);
        }
    }

    Rng s1 = sample_stream(9, 3, 21), s2 = sample_stream(9, 3, 21);
    const Volume a = augment_sample(vol, policy, s1);
    const Volume b = augment_sample(vol, policy, s2);
    CHECK(a.values == b.values);

    AugPolicy off;
    off.apply_prob = 0.0;
    Rng s3 = sample_stream(9, 3, 22);
    const Volume untouched = augment_sample(vol, off, s3);
    CHECK(untouched.values == vol.values);
}

TEST_CASE("balanced_augment_policy: head keeps base, tails scale with rarity") {
    ClassStats stats;
    stats.split = "train";
    stats.total = 100;
    stats.counts = {70, 20, 10};
    stats.frequencies = {0.70, 0.20, 0.10};

    AugPolicy base;
    base.apply_prob = 0.3;
    const auto policies = balanced_augment_policy(stats, base);
    CHECK(policies[0].apply_prob == doctest::Approx(0.3));
    CHECK(policies[1].apply_prob > 0.3);
    CHECK(policies[2].apply_prob > policies[1].apply_prob);
    CHECK(policies[2].apply_prob <= 1.0);
    // (1 - f_c) / (1 - f_head) scaling
    CHECK(policies[1].apply_prob == doctest::Approx(0.3 * 0.8 / 0.3));
    CHECK(policies[2].apply_prob == doctest::Approx(0.3 * 0.9 / 0.3));

    ClassStats balanced = stats;
    balanced.counts = {10, 10, 10};
    balanced.frequencies = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    for (const auto& p : balanced_augment_policy(balanced, base)) {
        CHECK(p.apply_prob == doctest::Approx(0.3));
    }

    AugPolicy full;
    full.apply_prob = 1.0;
    for (const auto& p : balanced_augment_policy(stats, full)) CHECK(p.apply_prob == 1.0);
}

TEST_CASE("oversample_indices: equal multiplicity enabled, permutation disabled") {
    ClassStats stats;
    stats.split = "train";
    stats.total = 100;
    stats.counts = {70, 20, 10};
    stats.class_indices.resize(3);
    std::int64_t pos = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::int64_t k = 0; k < stats.counts[c]; ++k) stats.class_indices[c].push_back(pos++);
    }

    const auto enabled = oversample_indices(stats, 42, true);
    CHECK(enabled.size() == 210);
    std::vector<std::int64_t> per_class(3, 0);
    for (auto idx : enabled) {
        if (idx < 70) ++per_class[0];
        else if (idx < 90) ++per_class[1];
        else ++per_class[2];
    }
    CHECK(per_class == std::vector<std::int64_t>{70, 70, 70});

    const auto disabled = oversample_indices(stats, 42, false);
    CHECK(disabled.size() == 100);
    std::vector<std::int64_t> seen(100, 0);
    for (auto idx : disabled) ++seen[static_cast<std::size_t>(idx)];
    for (auto s : seen) CHECK(s == 1);

    CHECK(oversample_indices(stats, 42, true) == enabled);
    CHECK(oversample_indices(stats, 43, true) != enabled);
}

TEST_CASE("largest_remainder_counts: the (0.60,0.25,0.15) split of 200") {
    CHECK(largest_remainder_counts(200, {0.60, 0.25, 0.15}) == std::vector<std::int64_t>{120, 50, 30});
    CHECK(largest_remainder_counts(750, {0.60, 0.25, 0.15}) == std::vector<std::int64_t>{450, 188, 112});
    auto counts = largest_remainder_counts(7, {0.5, 0.5});
    CHECK(counts[0] + counts[1] == 7);
    CHECK(counts[0] == 4);  // tie goes to the lowest index
}

TEST_CASE("manifest: round trip, dense ids, conflicting names, resolvability") {
    TempDir dir("manifest");
    Rng rng(5);
    for (int i = 0; i < 3; ++i) {
        save_volume(random_volume(4, rng), (dir.path / ("v" + std::to_string(i) + ".mcvl")).string());
    }
    Manifest manifest;
    manifest.base_dir = dir.path.string();
    manifest.class_names = {"normal", "osteopenia", "osteoporosis"};
    for (int i = 0; i < 3; ++i) {
        SampleRecord record;
        record.volume_path = "v" + std::to_string(i) + ".mcvl";
        record.label = i;
        record.class_name = manifest.class_names[static_cast<std::size_t>(i)];
        record.split = i == 2 ? "test" : "train";
        manifest.records.push_back(record);
    }
    const auto path = (dir.path / "manifest.csv").string();
    save_manifest(manifest, path);
    const Manifest back = load_manifest(path);
    CHECK(back.class_names == manifest.class_names);
    REQUIRE(back.records.size() == 3);
    CHECK(back.records[2].split == "test");
    CHECK(fs::exists(back.resolve(back.records[0].volume_path)));

    // non-dense ids
    {
        std::ofstream out(dir.path / "sparse.csv");
        out << "path,mask_path,label,class_name,split\n";
        out << "v0.mcvl,,0,normal,train\n";
        out << "v1.mcvl,,2,osteoporosis,train\n";
    }
    CHECK_THROWS_AS(load_manifest((dir.path / "sparse.csv").string()), DataError);

    // conflicting class names
    {
        std::ofstream out(dir.path / "conflict.csv");
        out << "path,mask_path,label,class_name,split\n";
        out << "v0.mcvl,,0,normal,train\n";
        out << "v1.mcvl,,0,weird,train\n";
    }
    CHECK_THROWS_AS(load_manifest((dir.path / "conflict.csv").string()), DataError);

    // unresolvable volume path
    {
        std::ofstream out(dir.path / "missing.csv");
        out << "path,mask_path,label,class_name,split\n";
        out << "nope.mcvl,,0,normal,train\n";
    }
    CHECK_THROWS_AS(load_manifest((dir.path / "missing.csv").string()), DataError);
}

TEST_CASE("class_stats: counts, frequencies, recount oracle, empty split") {
    Manifest manifest;
    manifest.class_names = {"a", "b", "c"};
    Rng rng(6);
    std::vector<std::int64_t> expected(3, 0);
    for (int i = 0; i < 60; ++i) {
        SampleRecord record;
        record.label = static_cast<std::int64_t>(rng.below(3));
        record.class_name = manifest.class_names[static_cast<std::size_t>(record.label)];
        record.split = i % 4 == 0 ? "val" : "train";
        if (record.split == "train") ++expected[static_cast<std::size_t>(record.label)];
        manifest.records.push_back(record);
    }
    const ClassStats stats = class_stats(manifest, "train");
    CHECK(stats.counts == expected);
    double freq_sum = 0.0;
    for (double f : stats.frequencies) freq_sum += f;
    CHECK(std::abs(freq_sum - 1.0) <= 1e-12);
    CHECK(stats.weights.has_value());

    Manifest three;
    three.class_names = {"a", "b", "c"};
    for (int i = 0; i < 3; ++i) {
        SampleRecord record;
        record.label = i;
        record.class_name = three.class_names[static_cast<std::size_t>(i)];
        record.split = "train";
        three.records.push_back(record);
    }
    const ClassStats uniform = class_stats(three, "train");
    for (double f : uniform.frequencies) CHECK(f == doctest::Approx(1.0 / 3.0));

    CHECK_THROWS_AS(class_stats(manifest, "test"), DataError);
}

TEST_CASE("generate_phantoms: counts, determinism, class intensity ordering") {
    TempDir dir_a("phantom_a");
    TempDir dir_b("phantom_b");
    PhantomConfig config;
    config.dims = {12, 12, 12};
    config.seed = 404;
    config.split_fractions = {0.8, 0.0, 0.2};

    const Manifest manifest = generate_phantoms(config, 50, dir_a.path.string());
    std::vector<std::int64_t> counts(3, 0);
    for (const auto& record : manifest.records) ++counts[static_cast<std::size_t>(record.label)];
    CHECK(counts == largest_remainder_counts(50, config.proportions));

    generate_phantoms(config, 50, dir_b.path.string());
    CHECK(file_bytes(dir_a.path / "vol_000000.mcvl") == file_bytes(dir_b.path / "vol_000000.mcvl"));
    CHECK(file_bytes(dir_a.path / "vol_000031.mcvl") == file_bytes(dir_b.path / "vol_000031.mcvl"));
    CHECK(file_bytes(dir_a.path / "manifest.csv") == file_bytes(dir_b.path / "manifest.csv"));

    // interior intensity ordering: normal > osteopenia > osteoporosis,
    // measured over the mask voxels of every phantom
    std::vector<double> mean_by_class(3, 0.0);
    std::vector<std::int64_t> n_by_class(3, 0);
    for (const auto& record : manifest.records) {
        const Volume vol = load_volume(manifest.resolve(record.volume_path));
        const Volume mask = load_volume(manifest.resolve(record.mask_path));
        double sum = 0.0;
        std::int64_t voxels = 0;
        for (std::size_t i = 0; i < vol.values.size(); ++i) {
            if (mask.values[i] > 0.5f) {
                sum += vol.values[i];
                ++voxels;
            }
        }
        mean_by_class[static_cast<std::size_t>(record.label)] += sum / static_cast<double>(voxels);
        ++n_by_class[static_cast<std::size_t>(record.label)];
    }
    for (int c = 0; c < 3; ++c) mean_by_class[static_cast<std::size_t>(c)] /= static_cast<double>(n_by_class[static_cast<std::size_t>(c)]);
    CHECK(mean_by_class[0] > mean_by_class[1]);
    CHECK(mean_by_class[1] > mean_by_class[2]);

    CHECK_THROWS_AS(generate_phantoms(config, 2, dir_a.path.string()), ConfigError);
}

TEST_CASE("phantom config JSON: defaults, overrides, validation") {
    const PhantomConfig defaults = phantom_config_from_json_text("{}");
    CHECK(defaults.dims[0] == 24);
    CHECK(defaults.proportions == std::vector<double>{0.60, 0.25, 0.15});

    const PhantomConfig custom = phantom_config_from_json_text(
        R"({"dims":[16,16,16],"proportions":[0.5,0.3,0.2],"seed":9,"split_fractions":[0.7,0.1,0.2]})");
    CHECK(custom.dims[0] == 16);
    CHECK(custom.seed == 9);

    CHECK_THROWS_AS(phantom_config_from_json_text("{not json"), ConfigError);
    CHECK_THROWS_AS(phantom_config_from_json_text(R"({"proportions":[0.9,0.2,0.1]})"), ConfigError);
    CHECK_THROWS_AS(phantom_config_from_json_text(R"({"dims":[4,16,16]})"), ConfigError);
}
