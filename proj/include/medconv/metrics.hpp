#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "medconv/matrix.hpp"

namespace medconv {

// C x C counts indexed (true class, predicted class).
struct ConfusionMatrix {
    std::int64_t classes = 0;
    std::vector<std::int64_t> counts;

    explicit ConfusionMatrix(std::int64_t c = 0)
        : classes(c), counts(static_cast<std::size_t>(c * c), 0) {}

    std::int64_t& at(std::int64_t truth, std::int64_t pred) {
        return counts[static_cast<std::size_t>(truth * classes + pred)];
    }
    std::int64_t at(std::int64_t truth, std::int64_t pred) const {
        return counts[static_cast<std::size_t>(truth * classes + pred)];
    }
    std::int64_t total() const;
    std::int64_t support(std::int64_t cls) const;  // row sum
};

ConfusionMatrix confusion_matrix(const std::vector<std::int64_t>& preds,
                                 const std::vector<std::int64_t>& labels, std::int64_t classes);

struct BasicRates {
    double accuracy = 0.0;
    // Micro-averaged one-vs-rest pooling; sensitivity coincides with accuracy
    // and specificity with 1 - (1-acc)/(C-1). This is the reporting convention
    // the reference result tables follow.
    double micro_sensitivity = 0.0;
    double micro_specificity = 0.0;
};

BasicRates basic_rates(const ConfusionMatrix& cm);

struct F1Scores {
    double weighted = 0.0;   // support-weighted mean
    double macro_avg = 0.0;  // unweighted mean over classes
    std::vector<double> per_class;
};

F1Scores f1_scores(const ConfusionMatrix& cm);

struct AucResult {
    double macro = 0.0;
    std::vector<double> per_class;  // NaN for skipped classes
    std::vector<bool> valid;        // class had both positives and negatives
};

// One-vs-rest AUC per class via the rank (Mann-Whitney) statistic, ties
// credited 0.5. Scores may be probabilities or raw logits.
AucResult roc_auc_ovr(const Matrix& scores, const std::vector<std::int64_t>& labels);

struct MetricsReport {
    double accuracy = 0.0;
    double micro_sensitivity = 0.0;
    double micro_specificity = 0.0;
    double f1_weighted = 0.0;  // the report's headline F1 column
    double f1_macro = 0.0;
    double roc_auc_macro_ovr = 0.0;
    std::vector<double> per_class_precision;
    std::vector<double> per_class_recall;
    std::vector<double> per_class_f1;
    std::vector<std::int64_t> per_class_support;
    std::vector<double> per_class_auc;
};

MetricsReport build_report(const ConfusionMatrix& cm, const Matrix& scores,
                           const std::vector<std::int64_t>& labels);

// CSV columns follow the comparison-table order (accuracy, sensitivity,
// specificity, f1, roc_auc) with per-class detail appended.
void save_report_csv(const MetricsReport& report, const std::string& path, const std::string& config_hash);
MetricsReport load_report_csv(const std::string& path);
std::string report_markdown(const MetricsReport& report, const std::string& row_name);

}  // namespace medconv
