#include "medconv/trainer.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "medconv/optimizers.hpp"

namespace fs = std::filesystem;

namespace medconv {

using json = nlohmann::json;

void TrainConfig::validate() const {
    model.validate();
    if (loss != "ce" && loss != "balce") throw ConfigError(concat("config: loss must be ce or balce, got '", loss, "'"));
    if (balce_variant != "softmax" && balce_variant != "binary-per-class") {
        throw ConfigError(concat("config: balce_variant must be softmax or binary-per-class, got '", balce_variant, "'"));
    }
    if (optimizer.type != "sgd" && optimizer.type != "sam" && optimizer.type != "schedulefree") {
        throw ConfigError(concat("config: optimizer must be sgd, sam or schedulefree, got '", optimizer.type, "'"));
    }
    if (optimizer.lr <= 0.0) throw ConfigError("config: learning rate must be > 0");
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("config: batch size must be >= 1");
    if (tau1 <= 0.0 || tau2 <= 0.0) throw ConfigError("config: temperatures must be > 0");
    if (window_width <= 0.0) throw ConfigError("config: window width must be > 0");
    if (manifest_path.empty()) throw ConfigError("config: manifest path is required");
    if (out_dir.empty()) throw ConfigError("config: out_dir is required");
}

std::string TrainConfig::row_name() const {
    std::string name = model.preset_name();
    if (loss == "balce") name += balce_variant == "binary-per-class" ? "+balce-binary" : "+balce";
    if (optimizer.type != "sgd") name += "+" + optimizer.type;
    if (oversample) name += "+oversample";
    if (balanced_aug) name += "+balaug";
    return name;
}

std::string train_config_to_json(const TrainConfig& config) {
    json j;
    j["model"] = json::parse(model_config_to_json(config.model));
    j["loss"] = config.loss;
    j["balce_variant"] = config.balce_variant;
    j["optimizer"] = {{"type", config.optimizer.type}, {"lr", config.optimizer.lr},
                      {"momentum", config.optimizer.momentum}, {"rho", config.optimizer.rho},
                      {"beta", config.optimizer.beta}, {"l2", config.optimizer.l2}};
    j["epochs"] = config.epochs;
    j["batch_size"] = config.batch_size;
    j["seed"] = config.seed;
    j["oversample"] = config.oversample;
    j["augment"] = {{"enabled", config.augment},
                    {"apply_prob", config.aug_policy.apply_prob},
                    {"flip_prob", config.aug_policy.flip_prob},
                    {"max_shift", config.aug_policy.max_shift},
                    {"jitter", config.aug_policy.jitter},
                    {"balanced", config.balanced_aug}};
    j["window"] = {{"level", config.window_level}, {"width", config.window_width}};
    j["crop_pad"] = config.crop_pad;
    j["tau1"] = config.tau1;
    j["tau2"] = config.tau2;
    j["manifest"] = config.manifest_path;
    j["out_dir"] = config.out_dir;
    return j.dump(2);
}

TrainConfig train_config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(concat("train config: invalid JSON: ", e.what()));
    }
    TrainConfig config;
    try {
        if (j.contains("model")) config.model = model_config_from_json(j.at("model").dump());
        config.loss = j.value("loss", config.loss);
        config.balce_variant = j.value("balce_variant", config.balce_variant);
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            config.optimizer.type = o.value("type", config.optimizer.type);
            config.optimizer.lr = o.value("lr", config.optimizer.lr);
            config.optimizer.momentum = o.value("momentum", config.optimizer.momentum);
            config.optimizer.rho = o.value("rho", config.optimizer.rho);
            config.optimizer.beta = o.value("beta", config.optimizer.beta);
            config.optimizer.l2 = o.value("l2", config.optimizer.l2);
        }
        config.epochs = j.value("epochs", config.epochs);
        config.batch_size = j.value("batch_size", config.batch_size);
        config.seed = j.value("seed", config.seed);
        config.oversample = j.value("oversample", config.oversample);
        if (j.contains("augment")) {
            const auto& a = j.at("augment");
            config.augment = a.value("enabled", config.augment);
            config.aug_policy.apply_prob = a.value("apply_prob", config.aug_policy.apply_prob);
            config.aug_policy.flip_prob = a.value("flip_prob", config.aug_policy.flip_prob);
            config.aug_policy.max_shift = a.value("max_shift", config.aug_policy.max_shift);
            config.aug_policy.jitter = a.value("jitter", config.aug_policy.jitter);
            config.balanced_aug = a.value("balanced", config.balanced_aug);
        }
        if (j.contains("window")) {
            config.window_level = j.at("window").value("level", config.window_level);
            config.window_width = j.at("window").value("width", config.window_width);
        }
        config.crop_pad = j.value("crop_pad", config.crop_pad);
        config.tau1 = j.value("tau1", config.tau1);
        config.tau2 = j.value("tau2", config.tau2);
        config.manifest_path = j.value("manifest", config.manifest_path);
        config.out_dir = j.value("out_dir", config.out_dir);
    } catch (const json::exception& e) {
        throw ConfigError(concat("train config: ", e.what()));
    }
    return config;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(concat("cannot open config '", path, "'"));
    std::stringstream ss;
    ss << in.rdbuf();
    return train_config_from_json_text(ss.str());
}

std::string config_hash(const TrainConfig& config) {
    // FNV-1a 64 over the canonical (sorted-key) JSON text.
    json j = json::parse(train_config_to_json(config));
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

// One run directory, one writer.
class RunLock {
  public:
    explicit RunLock(const std::string& dir) : path_((fs::path(dir) / ".lock").string()) {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            throw DataError(concat("run directory '", dir, "' is locked (remove ", path_, " if stale)"));
        }
    }
    ~RunLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
        }
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

  private:
    std::string path_;
    int fd_ = -1;
};

struct SplitView {
    std::vector<const SampleRecord*> records;
    std::vector<std::int64_t> labels;
};

SplitView split_view(const Manifest& manifest, const std::string& split) {
    SplitView view;
    for (const auto& record : manifest.records) {
        if (record.split != split) continue;
        view.records.push_back(&record);
        view.labels.push_back(record.label);
    }
    return view;
}

TensorPtr<float> batch_from_volumes(const std::vector<const Volume*>& volumes,
                                    const std::array<std::int64_t, 3>& dims) {
    const std::int64_t n = static_cast<std::int64_t>(volumes.size());
    const std::int64_t voxels = dims[0] * dims[1] * dims[2];
    auto batch = make_tensor<float>({n, 1, dims[0], dims[1], dims[2]});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy(volumes[static_cast<std::size_t>(i)]->values.begin(),
                  volumes[static_cast<std::size_t>(i)]->values.end(), batch->data.begin() + i * voxels);
    }
    return batch;
}

LogitsCache eval_logits(Network<float>& net, const std::vector<Volume>& volumes,
                        const std::vector<std::int64_t>& labels, std::int64_t batch_size) {
    const auto& in = net.config.input_shape;
    const std::array<std::int64_t, 3> dims{in[1], in[2], in[3]};
    LogitsCache cache;
    cache.labels = labels;
    cache.logits = Matrix(static_cast<std::int64_t>(volumes.size()), net.config.num_classes);
    for (std::size_t start = 0; start < volumes.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop = std::min(volumes.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const Volume*> ptrs;
        for (std::size_t i = start; i < stop; ++i) ptrs.push_back(&volumes[i]);
        auto batch = batch_from_volumes(ptrs, dims);
        auto logits = forward(net, batch, Mode::kEval, static_cast<Tape<float>*>(nullptr));
        for (std::size_t i = start; i < stop; ++i) {
            for (std::int64_t c = 0; c < net.config.num_classes; ++c) {
                cache.logits.at(static_cast<std::int64_t>(i), c) =
                    static_cast<double>(logits->data[(i - start) * static_cast<std::size_t>(net.config.num_classes) +
                                                     static_cast<std::size_t>(c)]);
            }
        }
    }
    return cache;
}

}  // namespace

Volume preprocess_record(const Manifest& manifest, const SampleRecord& record, double window_level,
                         double window_width, std::int64_t crop_pad,
                         const std::array<std::int64_t, 3>& out_dims) {
    Volume vol = load_volume(manifest.resolve(record.volume_path));
    vol = window_intensity(vol, static_cast<float>(window_level), static_cast<float>(window_width));
    if (!record.mask_path.empty()) {
        const Volume mask = load_volume(manifest.resolve(record.mask_path));
        return mask_crop(vol, mask, crop_pad, out_dims);
    }
    if (vol.dx == out_dims[0] && vol.dy == out_dims[1] && vol.dz == out_dims[2]) return vol;
    // No mask: resample the full volume to the model input dims.
    Volume all(vol.dx, vol.dy, vol.dz);
    std::fill(all.values.begin(), all.values.end(), 1.0f);
    return mask_crop(vol, all, 0, out_dims);
}

MetricsReport report_from_logits(const LogitsCache& cache, const std::vector<std::int64_t>& train_counts,
                                 double tau1, double tau2) {
    const TauAssignment taus = assign_taus(train_counts, tau1, tau2);
    const Matrix probs = adjust_logits(cache.logits, taus);
    const auto preds = argmax_rows(probs);
    const ConfusionMatrix cm = confusion_matrix(preds, cache.labels, cache.logits.cols);
    return build_report(cm, probs, cache.labels);
}

RunArtifacts run_training(const TrainConfig& config) {
    config.validate();
    std::error_code ec;
    fs::create_directories(config.out_dir, ec);
    if (ec) throw DataError(concat("cannot create run directory '", config.out_dir, "': ", ec.message()));
    RunLock lock(config.out_dir);

    RunArtifacts artifacts;
    artifacts.out_dir = config.out_dir;
    artifacts.hash = config_hash(config);

    const Manifest manifest = load_manifest(config.manifest_path);
    if (static_cast<std::int64_t>(manifest.class_names.size()) != config.model.num_classes) {
        throw ConfigError(concat("config: model expects ", config.model.num_classes, " classes, manifest has ",
                                 manifest.class_names.size()));
    }
    const ClassStats train_stats = class_stats(manifest, "train");

    ClassWeights weights;
    if (config.loss == "balce") weights = inverse_freq_weights(train_stats.counts);

    const BalCeVariant variant =
        config.balce_variant == "binary-per-class" ? BalCeVariant::kBinaryPerClass : BalCeVariant::kSoftmax;

    Network<float> net = build_model<float>(config.model, config.seed);
    auto params = net.parameters();
    const auto& in_shape = config.model.input_shape;
    const std::array<std::int64_t, 3> dims{in_shape[1], in_shape[2], in_shape[3]};

    const SplitView train = split_view(manifest, "train");
    const SplitView val = split_view(manifest, "val");
    const SplitView test = split_view(manifest, "test");

    auto preprocess_split = [&](const SplitView& view) {
        std::vector<Volume> volumes;
        volumes.reserve(view.records.size());
        for (const auto* record : view.records) {
            volumes.push_back(preprocess_record(manifest, *record, config.window_level, config.window_width,
                                                config.crop_pad, dims));
        }
        return volumes;
    };
    const std::vector<Volume> train_volumes = preprocess_split(train);
    const std::vector<Volume> val_volumes = preprocess_split(val);
    const std::vector<Volume> test_volumes = preprocess_split(test);

    std::vector<AugPolicy> policies(manifest.class_names.size(), config.aug_policy);
    if (config.balanced_aug) policies = balanced_augment_policy(train_stats, config.aug_policy);

    SgdState<float> sgd_state;
    ScheduleFreeState<float> sf_state;
    const auto& opt = config.optimizer;

    artifacts.train_log_path = (fs::path(config.out_dir) / "train_log.csv").string();
    std::ofstream log(artifacts.train_log_path);
    if (!log) throw DataError(concat("cannot open '", artifacts.train_log_path, "' for writing"));
    log << "# config_hash=" << artifacts.hash << "\n";
    log << "epoch,train_loss,val_accuracy";
    for (std::size_t c = 0; c < manifest.class_names.size(); ++c) log << ",val_recall_" << c;
    log << "\n";

    for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = oversample_indices(train_stats, hash_combine(config.seed, static_cast<std::uint64_t>(epoch)),
                                              config.oversample);
        double loss_sum = 0.0;
        std::int64_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<Volume> augmented;
            std::vector<std::int64_t> labels;
            augmented.reserve(stop - start);
            for (std::size_t k = start; k < stop; ++k) {
                const std::int64_t pos = order[k];
                const std::int64_t label = train.labels[static_cast<std::size_t>(pos)];
                const Volume& base = train_volumes[static_cast<std::size_t>(pos)];
                if (config.augment) {
                    Rng rng = sample_stream(config.seed, static_cast<std::uint64_t>(epoch) + 1,
                                            static_cast<std::uint64_t>(pos));
                    augmented.push_back(augment_sample(base, policies[static_cast<std::size_t>(label)], rng));
                } else {
                    augmented.push_back(base);
                }
                labels.push_back(label);
            }
            std::vector<const Volume*> ptrs;
            for (const auto& v : augmented) ptrs.push_back(&v);
            auto batch = batch_from_volumes(ptrs, dims);

            auto loss_fn = [&]() -> float {
                for (auto& p : params) {
                    p->ensure_grad();
                    p->zero_grad();
                }
                Tape<float> tape;
                auto logits = forward(net, batch, Mode::kTrain, &tape);
                LossValue<float> loss = config.loss == "ce"
                                            ? cross_entropy(&tape, logits, labels)
                                            : balanced_cross_entropy(&tape, logits, labels, weights, variant);
                tape.backward(loss.value);
                return loss.value->data[0];
            };

            float loss_value = 0.0f;
            try {
                if (opt.type == "sgd") {
                    loss_value = loss_fn();
                    if (!std::isfinite(static_cast<double>(loss_value))) throw NumericError("non-finite loss");
                    sgd_momentum_step(params, sgd_state, static_cast<float>(opt.lr),
                                      static_cast<float>(opt.momentum), static_cast<float>(opt.l2));
                } else if (opt.type == "sam") {
                    loss_value = sam_step(params, LossFn<float>(loss_fn), sgd_state, static_cast<float>(opt.lr),
                                          static_cast<float>(opt.momentum), static_cast<float>(opt.rho),
                                          static_cast<float>(opt.l2));
                } else {
                    loss_value = schedulefree_step(params, LossFn<float>(loss_fn), sf_state,
                                                   static_cast<float>(opt.lr), static_cast<float>(opt.beta));
                }
            } catch (const NumericError& e) {
                throw NumericError(concat(e.what(), " (epoch ", epoch, ", batch ", start / config.batch_size,
                                          ", lr ", opt.lr, ")"));
            }
            loss_sum += static_cast<double>(loss_value) * static_cast<double>(stop - start);
            seen += static_cast<std::int64_t>(stop - start);
        }
        const double epoch_loss = loss_sum / static_cast<double>(seen);

        log << epoch << "," << format_double(epoch_loss);
        if (!val.records.empty()) {
            if (opt.type == "schedulefree") schedulefree_apply_average(params, sf_state);
            const LogitsCache cache = eval_logits(net, val_volumes, val.labels, config.batch_size);
            const auto preds = argmax_rows(cache.logits);
            const ConfusionMatrix cm = confusion_matrix(preds, cache.labels, cache.logits.cols);
            const BasicRates rates = basic_rates(cm);
            log << "," << format_double(rates.accuracy);
            for (std::int64_t c = 0; c < cm.classes; ++c) {
                const std::int64_t support = cm.support(c);
                log << "," << (support > 0 ? format_double(static_cast<double>(cm.at(c, c)) / support) : "");
            }
        } else {
            log << ",";
            for (std::size_t c = 0; c < manifest.class_names.size(); ++c) log << ",";
        }
        log << "\n";
    }

    if (opt.type == "schedulefree") schedulefree_apply_average(params, sf_state);

    artifacts.checkpoint_path = (fs::path(config.out_dir) / "checkpoint.mckp").string();
    save_checkpoint(net, artifacts.checkpoint_path);

    if (!val.records.empty()) {
        const LogitsCache cache = eval_logits(net, val_volumes, val.labels, config.batch_size);
        artifacts.val_logits_path = (fs::path(config.out_dir) / "val_logits.csv").string();
        save_logits_cache(cache, artifacts.val_logits_path);
    }
    LogitsCache test_cache;
    if (!test.records.empty()) {
        test_cache = eval_logits(net, test_volumes, test.labels, config.batch_size);
        artifacts.test_logits_path = (fs::path(config.out_dir) / "test_logits.csv").string();
        save_logits_cache(test_cache, artifacts.test_logits_path);

        const MetricsReport report = report_from_logits(test_cache, train_stats.counts, config.tau1, config.tau2);
        artifacts.report_csv_path = (fs::path(config.out_dir) / "report.csv").string();
        save_report_csv(report, artifacts.report_csv_path, artifacts.hash);
        artifacts.report_md_path = (fs::path(config.out_dir) / "report.md").string();
        std::ofstream md(artifacts.report_md_path);
        md << report_markdown(report, config.row_name());
    }

    artifacts.effective_config_path = (fs::path(config.out_dir) / "effective_config.json").string();
    std::ofstream cfg(artifacts.effective_config_path);
    cfg << train_config_to_json(config) << "\n";
    return artifacts;
}

MetricsReport run_eval(const EvalSpec& spec) {
    if (spec.tau1 <= 0.0 || spec.tau2 <= 0.0) throw ConfigError("eval: temperatures must be > 0");
    std::error_code ec;
    if (!spec.out_dir.empty()) fs::create_directories(spec.out_dir, ec);

    const Manifest manifest = load_manifest(spec.manifest_path);
    // Head-class selection always uses training-split counts.
    const ClassStats train_stats = class_stats(manifest, "train");

    const std::string cache_path =
        spec.out_dir.empty() ? "" : (fs::path(spec.out_dir) / (spec.split + "_logits.csv")).string();
    LogitsCache cache;
    if (spec.reuse_cached_logits && !cache_path.empty() && fs::exists(cache_path)) {
        cache = load_logits_cache(cache_path);
    } else {
        Network<float> net = load_checkpoint<float>(spec.checkpoint_path);
        if (static_cast<std::int64_t>(manifest.class_names.size()) != net.config.num_classes) {
            throw ConfigError(concat("eval: checkpoint num_classes=", net.config.num_classes,
                                     " but manifest has ", manifest.class_names.size(), " classes"));
        }
        const SplitView view = split_view(manifest, spec.split);
        if (view.records.empty()) throw DataError(concat("split '", spec.split, "' is empty"));
        const auto& in_shape = net.config.input_shape;
        const std::array<std::int64_t, 3> dims{in_shape[1], in_shape[2], in_shape[3]};
        std::vector<Volume> volumes;
        volumes.reserve(view.records.size());
        for (const auto* record : view.records) {
            volumes.push_back(preprocess_record(manifest, *record, spec.window_level, spec.window_width,
                                                spec.crop_pad, dims));
        }
        cache = eval_logits(net, volumes, view.labels, spec.batch_size);
        if (!cache_path.empty()) save_logits_cache(cache, cache_path);
    }

    const MetricsReport report = report_from_logits(cache, train_stats.counts, spec.tau1, spec.tau2);
    if (!spec.out_dir.empty()) {
        save_report_csv(report, (fs::path(spec.out_dir) / "report.csv").string(), "");
        std::ofstream md((fs::path(spec.out_dir) / "report.md").string());
        md << report_markdown(report, concat("split=", spec.split, " tau1=", spec.tau1, " tau2=", spec.tau2));
    }
    return report;
}

Comparison compare_runs(const std::vector<std::string>& run_dirs) {
    if (run_dirs.empty()) throw ConfigError("report: at least one run directory is required");
    Comparison comparison;
    std::vector<std::pair<std::string, std::string>> seen;  // hash -> config text
    for (const auto& dir : run_dirs) {
        const std::string cfg_path = (fs::path(dir) / "effective_config.json").string();
        const std::string report_path = (fs::path(dir) / "report.csv").string();
        if (!fs::exists(cfg_path) || !fs::exists(report_path)) {
            comparison.warnings.push_back(concat("run '", dir, "': missing artifacts, skipped"));
            continue;
        }
        std::ifstream in(cfg_path);
        std::stringstream ss;
        ss << in.rdbuf();
        const TrainConfig config = train_config_from_json_text(ss.str());
        const std::string hash = config_hash(config);
        const std::string canonical = json::parse(train_config_to_json(config)).dump();
        bool duplicate = false;
        for (const auto& [h, text] : seen) {
            if (h == hash) {
                if (text != canonical) {
                    throw DataError(concat("report: config hash collision between differing configs (", hash, ")"));
                }
                duplicate = true;
                break;
            }
        }
        if (duplicate) continue;
        seen.push_back({hash, canonical});
        ComparisonRow row;
        row.name = config.row_name();
        row.hash = hash;
        row.report = load_report_csv(report_path);
        comparison.rows.push_back(std::move(row));
    }
    return comparison;
}

void save_comparison_csv(const Comparison& comparison, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError(concat("cannot open '", path, "' for writing"));
    out << "model,config_hash,accuracy,sensitivity,specificity,f1,roc_auc,delta_accuracy\n";
    const double base = comparison.rows.empty() ? 0.0 : comparison.rows.front().report.accuracy;
    for (const auto& row : comparison.rows) {
        out << row.name << "," << row.hash << "," << format_double(row.report.accuracy) << ","
            << format_double(row.report.micro_sensitivity) << "," << format_double(row.report.micro_specificity)
            << "," << format_double(row.report.f1_weighted) << "," << format_double(row.report.roc_auc_macro_ovr)
            << "," << format_double(row.report.accuracy - base) << "\n";
    }
}

std::string comparison_markdown(const Comparison& comparison) {
    std::ostringstream os;
    os << "| Model | Accuracy | Sensitivity | Specificity | F1 Score | ROC AUC | dAcc |\n";
    os << "|---|---|---|---|---|---|---|\n";
    const double base = comparison.rows.empty() ? 0.0 : comparison.rows.front().report.accuracy;
    char buf[64];
    for (const auto& row : comparison.rows) {
        os << "| " << row.name;
        for (double v : {row.report.accuracy, row.report.micro_sensitivity, row.report.micro_specificity,
                         row.report.f1_weighted, row.report.roc_auc_macro_ovr}) {
            std::snprintf(buf, sizeof(buf), " | %.4f", v);
            os << buf;
        }
        std::snprintf(buf, sizeof(buf), " | %+.4f |\n", row.report.accuracy - base);
        os << buf;
    }
    return os.str();
}

}  // namespace medconv
