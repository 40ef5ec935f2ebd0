#include "medconv/calibration.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "medconv/common.hpp"

namespace medconv {

TauAssignment assign_taus(const std::vector<std::int64_t>& counts, double tau1, double tau2) {
    if (counts.empty()) throw Error("assign_taus: counts must be nonempty");
    if (tau1 <= 0.0 || tau2 <= 0.0) {
        throw Error(concat("assign_taus: temperatures must be > 0, got tau1=", tau1, " tau2=", tau2));
    }
    std::int64_t head = 0;
    for (std::size_t c = 1; c < counts.size(); ++c) {
        if (counts[c] > counts[static_cast<std::size_t>(head)]) head = static_cast<std::int64_t>(c);
    }
    TauAssignment taus;
    taus.head_class = head;
    taus.tau1 = tau1;
    taus.tau2 = tau2;
    taus.per_class.assign(counts.size(), tau2);
    taus.per_class[static_cast<std::size_t>(head)] = tau1;
    return taus;
}

Matrix adjust_logits(const Matrix& logits, const TauAssignment& taus) {
    if (static_cast<std::int64_t>(taus.per_class.size()) != logits.cols) {
        throw Error(concat("adjust_logits: ", taus.per_class.size(), " temperatures for ", logits.cols, " classes"));
    }
    Matrix scaled(logits.rows, logits.cols);
    for (std::int64_t r = 0; r < logits.rows; ++r) {
        for (std::int64_t c = 0; c < logits.cols; ++c) {
            scaled.at(r, c) = logits.at(r, c) / taus.per_class[static_cast<std::size_t>(c)];
        }
    }
    return softmax_rows(scaled);
}

SweepTable sweep_tau(const Matrix& logits, const std::vector<std::int64_t>& labels,
                     const std::vector<std::int64_t>& counts,
                     const std::vector<std::pair<double, double>>& grid, SweepMode mode) {
    if (grid.empty()) throw Error("sweep_tau: empty grid");
    if (logits.rows != static_cast<std::int64_t>(labels.size())) {
        throw Error("sweep_tau: logits rows must match labels");
    }
    SweepTable table;
    table.rows.reserve(grid.size());
    for (const auto& [g1, g2] : grid) {
        const double tau1 = g1;
        const double tau2 = mode == SweepMode::kTied ? g1 : g2;
        const TauAssignment taus = assign_taus(counts, tau1, tau2);
        const Matrix probs = adjust_logits(logits, taus);
        const auto preds = argmax_rows(probs);
        const ConfusionMatrix cm = confusion_matrix(preds, labels, logits.cols);
        const MetricsReport report = build_report(cm, probs, labels);
        SweepRow row;
        row.tau1 = tau1;
        row.tau2 = tau2;
        row.accuracy = report.accuracy;
        row.sensitivity = report.micro_sensitivity;
        row.specificity = report.micro_specificity;
        row.f1 = report.f1_weighted;
        row.roc_auc = report.roc_auc_macro_ovr;
        table.rows.push_back(row);
    }
    return table;
}

void save_sweep_csv(const SweepTable& table, const std::string& path, const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) throw DataError(concat("cannot open '", path, "' for writing"));
    if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
    out << "tau1,tau2,accuracy,sensitivity,specificity,f1,roc_auc\n";
    for (const auto& row : table.rows) {
        out << format_double(row.tau1) << "," << format_double(row.tau2) << "," << format_double(row.accuracy)
            << "," << format_double(row.sensitivity) << "," << format_double(row.specificity) << ","
            << format_double(row.f1) << "," << format_double(row.roc_auc) << "\n";
    }
}

std::string sweep_markdown(const SweepTable& table) {
    std::ostringstream os;
    os << "| tau1 | tau2 | Accuracy | Sensitivity | Specificity | F1 | AUC |\n";
    os << "|---|---|---|---|---|---|---|\n";
    char buf[64];
    for (const auto& row : table.rows) {
        os << "|";
        for (double v : {row.tau1, row.tau2}) {
            std::snprintf(buf, sizeof(buf), " %.3g |", v);
            os << buf;
        }
        for (double v : {row.accuracy, row.sensitivity, row.specificity, row.f1, row.roc_auc}) {
            std::snprintf(buf, sizeof(buf), " %.4f |", v);
            os << buf;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace medconv
