#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "medconv/calibration.hpp"
#include "medconv/data.hpp"
#include "medconv/trainer.hpp"

namespace fs = std::filesystem;
using namespace medconv;

namespace {

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> values;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) values.push_back(std::stod(tok));
    }
    if (values.empty()) throw ConfigError("sweep: empty grid");
    return values;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir, std::int64_t n,
                 std::int64_t seed_override) {
    PhantomConfig config;
    if (!config_path.empty()) config = load_phantom_config(config_path);
    if (seed_override >= 0) config.seed = static_cast<std::uint64_t>(seed_override);
    const Manifest manifest = generate_phantoms(config, n, out_dir);

    std::vector<std::int64_t> counts(manifest.class_names.size(), 0);
    for (const auto& record : manifest.records) ++counts[static_cast<std::size_t>(record.label)];
    std::cout << "wrote " << manifest.records.size() << " phantoms to " << out_dir << "\n";
    for (std::size_t c = 0; c < counts.size(); ++c) {
        std::cout << "  class " << c << " (" << manifest.class_names[c] << "): " << counts[c] << "\n";
    }
    return 0;
}

struct TrainOverrides {
    std::string manifest, out_dir, loss, optimizer;
    std::int64_t seed = -1, epochs = -1, batch_size = -1;
    double tau1 = -1, tau2 = -1, window_level = -1e30, window_width = -1;
    bool oversample = false, balaug = false;
};

void apply_overrides(TrainConfig& config, const TrainOverrides& o, const CLI::App& app) {
    if (!o.manifest.empty()) config.manifest_path = o.manifest;
    if (!o.out_dir.empty()) config.out_dir = o.out_dir;
    if (!o.loss.empty()) config.loss = o.loss;
    if (!o.optimizer.empty()) config.optimizer.type = o.optimizer;
    if (o.seed >= 0) config.seed = static_cast<std::uint64_t>(o.seed);
    if (o.epochs >= 0) config.epochs = o.epochs;
    if (o.batch_size >= 0) config.batch_size = o.batch_size;
    if (o.tau1 > 0) config.tau1 = o.tau1;
    if (o.tau2 > 0) config.tau2 = o.tau2;
    if (o.window_level > -1e29) config.window_level = o.window_level;
    if (o.window_width > 0) config.window_width = o.window_width;
    if (app.count("--oversample") > 0) config.oversample = o.oversample;
    if (app.count("--balaug") > 0) config.balanced_aug = o.balaug;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"medconv: long-tailed volumetric bone-density classification"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset + manifest");
    std::string gen_config, gen_out = "data";
    std::int64_t gen_n = 200, gen_seed = -1;
    gen->add_option("--config", gen_config, "phantom config JSON (defaults apply when omitted)");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--n", gen_n, "number of phantoms");
    gen->add_option("--seed", gen_seed, "seed override");

    // train
    auto* train = app.add_subcommand("train", "train a model from a config");
    std::string train_config_path;
    TrainOverrides overrides;
    train->add_option("--config", train_config_path, "train config JSON");
    train->add_option("--manifest", overrides.manifest, "manifest CSV path");
    train->add_option("--out", overrides.out_dir, "run output directory");
    train->add_option("--loss", overrides.loss, "ce|balce")->check(CLI::IsMember({"ce", "balce"}));
    train->add_option("--optimizer", overrides.optimizer, "sgd|sam|schedulefree")
        ->check(CLI::IsMember({"sgd", "sam", "schedulefree"}));
    train->add_option("--seed", overrides.seed, "seed override");
    train->add_option("--epochs", overrides.epochs, "epoch count");
    train->add_option("--batch-size", overrides.batch_size, "batch size");
    train->add_option("--tau1", overrides.tau1, "head-class temperature");
    train->add_option("--tau2", overrides.tau2, "tail-class temperature");
    train->add_option("--window-level", overrides.window_level, "intensity window level");
    train->add_option("--window-width", overrides.window_width, "intensity window width");
    train->add_flag("--oversample", overrides.oversample, "class-balanced oversampling");
    train->add_flag("--balaug", overrides.balaug, "balanced augmentation");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    EvalSpec spec;
    bool no_cache = false;
    eval->add_option("--checkpoint", spec.checkpoint_path, "checkpoint path")->required();
    eval->add_option("--manifest", spec.manifest_path, "manifest CSV path")->required();
    eval->add_option("--split", spec.split, "train|val|test");
    eval->add_option("--tau1", spec.tau1, "head-class temperature");
    eval->add_option("--tau2", spec.tau2, "tail-class temperature");
    eval->add_option("--window-level", spec.window_level, "intensity window level");
    eval->add_option("--window-width", spec.window_width, "intensity window width");
    eval->add_option("--out", spec.out_dir, "output directory for report + cached logits");
    eval->add_flag("--no-cache", no_cache, "ignore cached logits");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "temperature sweep over cached logits");
    std::string sweep_logits, sweep_manifest, sweep_counts, sweep_mode = "fixed_tau1", sweep_grid, sweep_out;
    double sweep_tau1 = 1.0;
    sweep->add_option("--logits", sweep_logits, "cached logits CSV")->required();
    sweep->add_option("--manifest", sweep_manifest, "manifest CSV (train counts pick the head class)");
    sweep->add_option("--counts", sweep_counts, "comma-separated per-class training counts");
    sweep->add_option("--mode", sweep_mode, "tied|fixed_tau1")->check(CLI::IsMember({"tied", "fixed_tau1"}));
    sweep->add_option("--tau1", sweep_tau1, "tau1 held fixed in fixed_tau1 mode");
    sweep->add_option("--grid", sweep_grid, "comma-separated temperatures");
    sweep->add_option("--out", sweep_out, "output directory");

    // report
    auto* report = app.add_subcommand("report", "merge run directories into a comparison table");
    std::vector<std::string> run_dirs;
    std::string report_out;
    report->add_option("runs", run_dirs, "run directories")->required();
    report->add_option("--out", report_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_config, gen_out, gen_n, gen_seed);

        if (train->parsed()) {
            TrainConfig config;
            if (!train_config_path.empty()) config = load_train_config(train_config_path);
            apply_overrides(config, overrides, *train);
            const RunArtifacts artifacts = run_training(config);
            std::cout << "run " << artifacts.hash << " complete: " << artifacts.out_dir << "\n";
            if (!artifacts.report_csv_path.empty()) {
                std::ifstream md(artifacts.report_md_path);
                std::cout << md.rdbuf();
            }
            return 0;
        }

        if (eval->parsed()) {
            spec.reuse_cached_logits = !no_cache;
            const MetricsReport result = run_eval(spec);
            std::cout << report_markdown(result, concat("split=", spec.split));
            return 0;
        }

        if (sweep->parsed()) {
            const LogitsCache cache = load_logits_cache(sweep_logits);
            std::vector<std::int64_t> counts;
            if (!sweep_counts.empty()) {
                std::stringstream ss(sweep_counts);
                std::string tok;
                while (std::getline(ss, tok, ',')) counts.push_back(std::stoll(tok));
            } else if (!sweep_manifest.empty()) {
                counts = class_stats(load_manifest(sweep_manifest), "train").counts;
            } else {
                throw ConfigError("sweep: provide --manifest or --counts for head-class selection");
            }
            const SweepMode mode = sweep_mode == "tied" ? SweepMode::kTied : SweepMode::kFixedTau1;
            std::vector<double> grid_values;
            if (!sweep_grid.empty()) {
                grid_values = parse_grid(sweep_grid);
            } else if (mode == SweepMode::kTied) {
                grid_values = {0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0};
            } else {
                grid_values = {1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1};
            }
            std::vector<std::pair<double, double>> grid;
            for (double v : grid_values) {
                grid.push_back(mode == SweepMode::kTied ? std::pair{v, v} : std::pair{sweep_tau1, v});
            }
            const SweepTable table = sweep_tau(cache.logits, cache.labels, counts, grid, mode);
            if (!sweep_out.empty()) {
                fs::create_directories(sweep_out);
                save_sweep_csv(table, (fs::path(sweep_out) / "sweep.csv").string(), "");
                std::ofstream md((fs::path(sweep_out) / "sweep.md").string());
                md << sweep_markdown(table);
            }
            std::cout << sweep_markdown(table);
            return 0;
        }

        if (report->parsed()) {
            const Comparison comparison = compare_runs(run_dirs);
            for (const auto& warning : comparison.warnings) std::cerr << "warning: " << warning << "\n";
            if (!report_out.empty()) {
                fs::create_directories(report_out);
                save_comparison_csv(comparison, (fs::path(report_out) / "comparison.csv").string());
                std::ofstream md((fs::path(report_out) / "comparison.md").string());
                md << comparison_markdown(comparison);
            }
            std::cout << comparison_markdown(comparison);
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
