#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "medconv/calibration.hpp"
#include "medconv/data.hpp"
#include "medconv/losses.hpp"
#include "medconv/matrix.hpp"
#include "medconv/metrics.hpp"
#include "medconv/model.hpp"

namespace medconv {

struct OptimizerConfig {
    std::string type = "sgd";  // sgd | sam | schedulefree
    double lr = 0.02;
    double momentum = 0.9;
    double rho = 0.05;   // SAM radius
    double beta = 0.9;   // schedule-free interpolation
    double l2 = 0.0;
};

struct TrainConfig {
    ModelConfig model;
    std::string loss = "balce";               // ce | balce
    std::string balce_variant = "softmax";    // softmax | binary-per-class
    OptimizerConfig optimizer;
    std::int64_t epochs = 20;
    std::int64_t batch_size = 16;
    std::uint64_t seed = 1;
    bool oversample = false;
    bool augment = true;
    AugPolicy aug_policy;
    bool balanced_aug = false;
    double window_level = 300.0;
    double window_width = 1500.0;
    std::int64_t crop_pad = 2;
    double tau1 = 1.0;
    double tau2 = 0.5;
    std::string manifest_path;
    std::string out_dir = "run";

    void validate() const;
    // Row name mirroring the flag-chain convention, e.g.
    // "medconv-micro+balce+oversample".
    std::string row_name() const;
};

TrainConfig train_config_from_json_text(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& config);
// FNV-1a over the canonical JSON form, as a hex string.
std::string config_hash(const TrainConfig& config);

struct RunArtifacts {
    std::string out_dir;
    std::string checkpoint_path;
    std::string train_log_path;
    std::string val_logits_path;   // empty when the split is empty
    std::string test_logits_path;  // empty when the split is empty
    std::string report_csv_path;
    std::string report_md_path;
    std::string effective_config_path;
    std::string hash;
};

// Full training run: preprocess, train, checkpoint, cache eval logits, write
// the calibrated test report. Deterministic for a fixed config + seed.
RunArtifacts run_training(const TrainConfig& config);

struct EvalSpec {
    std::string checkpoint_path;
    std::string manifest_path;
    std::string split = "test";
    double tau1 = 1.0;
    double tau2 = 0.5;
    double window_level = 300.0;
    double window_width = 1500.0;
    std::int64_t crop_pad = 2;
    std::int64_t batch_size = 16;
    std::string out_dir;
    bool reuse_cached_logits = true;
};

// One eval pass (or a cached-logits replay): writes <split>_logits.csv,
// report.csv and report.md under out_dir and returns the report.
MetricsReport run_eval(const EvalSpec& spec);

// Merged comparison across run directories, one row per run, deduplicated by
// config hash; rows carry deltas against the first run.
struct ComparisonRow {
    std::string name;
    std::string hash;
    MetricsReport report;
};

struct Comparison {
    std::vector<ComparisonRow> rows;
    std::vector<std::string> warnings;  // missing-artifact notes
};

Comparison compare_runs(const std::vector<std::string>& run_dirs);
void save_comparison_csv(const Comparison& comparison, const std::string& path);
std::string comparison_markdown(const Comparison& comparison);

// Preprocessing shared by training and eval: window, then mask-crop (or a
// plain resample when no mask is recorded) to the model's input dims.
Volume preprocess_record(const Manifest& manifest, const SampleRecord& record, double window_level,
                         double window_width, std::int64_t crop_pad,
                         const std::array<std::int64_t, 3>& out_dims);

// Cached-logits evaluation shared by eval and sweep paths.
MetricsReport report_from_logits(const LogitsCache& cache, const std::vector<std::int64_t>& train_counts,
                                 double tau1, double tau2);

}  // namespace medconv
