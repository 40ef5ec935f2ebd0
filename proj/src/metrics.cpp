#include "medconv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "medconv/common.hpp"

namespace medconv {

std::int64_t ConfusionMatrix::total() const {
    std::int64_t n = 0;
    for (auto v : counts) n += v;
    return n;
}

std::int64_t ConfusionMatrix::support(std::int64_t cls) const {
    std::int64_t n = 0;
    for (std::int64_t p = 0; p < classes; ++p) n += at(cls, p);
    return n;
}

ConfusionMatrix confusion_matrix(const std::vector<std::int64_t>& preds,
                                 const std::vector<std::int64_t>& labels, std::int64_t classes) {
    if (preds.size() != labels.size()) {
        throw Error(concat("confusion_matrix: ", preds.size(), " predictions vs ", labels.size(), " labels"));
    }
    if (classes < 2) throw Error("confusion_matrix: needs at least 2 classes");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto t = labels[i], p = preds[i];
        if (t < 0 || t >= classes) throw Error(concat("confusion_matrix: label ", t, " outside [0,", classes, ")"));
        if (p < 0 || p >= classes) throw Error(concat("confusion_matrix: prediction ", p, " outside [0,", classes, ")"));
        ++cm.at(t, p);
    }
    return cm;
}

BasicRates basic_rates(const ConfusionMatrix& cm) {
    const std::int64_t n = cm.total();
    if (n == 0) throw Error("basic_rates: empty confusion matrix");
    std::int64_t tp = 0, fn = 0, fp = 0, tn = 0;
    for (std::int64_t c = 0; c < cm.classes; ++c) {
        const std::int64_t tp_c = cm.at(c, c);
        const std::int64_t support = cm.support(c);
        std::int64_t pred_c = 0;
        for (std::int64_t t = 0; t < cm.classes; ++t) pred_c += cm.at(t, c);
        tp += tp_c;
        fn += support - tp_c;
        fp += pred_c - tp_c;
        tn += n - support - (pred_c - tp_c);
    }
    BasicRates rates;
    rates.accuracy = static_cast<double>(tp) / static_cast<double>(n);
    rates.micro_sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
    rates.micro_specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
    return rates;
}

F1Scores f1_scores(const ConfusionMatrix& cm) {
    const std::int64_t n = cm.total();
    if (n == 0) throw Error("f1_scores: empty confusion matrix");
    F1Scores out;
    out.per_class.resize(static_cast<std::size_t>(cm.classes), 0.0);
    double weighted = 0.0;
    std::int64_t weight_total = 0;
    for (std::int64_t c = 0; c < cm.classes; ++c) {
        const std::int64_t tp = cm.at(c, c);
        const std::int64_t support = cm.support(c);
        std::int64_t pred_c = 0;
        for (std::int64_t t = 0; t < cm.classes; ++t) pred_c += cm.at(t, c);
        const double precision = pred_c > 0 ? static_cast<double>(tp) / static_cast<double>(pred_c) : 0.0;
        const double recall = support > 0 ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
        const double f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        out.per_class[static_cast<std::size_t>(c)] = f1;
        weighted += static_cast<double>(support) * f1;
        weight_total += support;
    }
    double macro = 0.0;
    for (double f : out.per_class) macro += f;
    out.macro_avg = macro / static_cast<double>(cm.classes);
    out.weighted = weight_total > 0 ? weighted / static_cast<double>(weight_total) : 0.0;
    return out;
}

AucResult roc_auc_ovr(const Matrix& scores, const std::vector<std::int64_t>& labels) {
    const std::int64_t n = scores.rows, classes = scores.cols;
    if (n != static_cast<std::int64_t>(labels.size())) throw Error("roc_auc_ovr: score rows must match labels");
    if (n < 2) throw Error("roc_auc_ovr: needs at least 2 samples");
    AucResult out;
    out.per_class.assign(static_cast<std::size_t>(classes), std::numeric_limits<double>::quiet_NaN());
    out.valid.assign(static_cast<std::size_t>(classes), false);

    std::vector<std::pair<double, bool>> col(static_cast<std::size_t>(n));  // (score, is_positive)
    double macro_sum = 0.0;
    std::int64_t macro_n = 0;
    for (std::int64_t c = 0; c < classes; ++c) {
        std::int64_t pos = 0;
        for (std::int64_t r = 0; r < n; ++r) {
            const bool p = labels[static_cast<std::size_t>(r)] == c;
            col[static_cast<std::size_t>(r)] = {scores.at(r, c), p};
            pos += p ? 1 : 0;
        }
        const std::int64_t neg = n - pos;
        if (pos == 0 || neg == 0) continue;  // skipped from the macro mean
        std::sort(col.begin(), col.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        // 2U = 2*wins + ties, exact in integers; a positive "wins" a
        // (positive, negative) pair when its score is strictly higher.
        std::int64_t twice_u = 0;
        std::int64_t neg_below = 0;
        std::size_t i = 0;
        while (i < col.size()) {
            std::size_t j = i;
            std::int64_t grp_pos = 0, grp_neg = 0;
            while (j < col.size() && col[j].first == col[i].first) {
                if (col[j].second) ++grp_pos;
                else ++grp_neg;
                ++j;
            }
            twice_u += 2 * grp_pos * neg_below + grp_pos * grp_neg;
            neg_below += grp_neg;
            i = j;
        }
        const double auc = static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
        out.per_class[static_cast<std::size_t>(c)] = auc;
        out.valid[static_cast<std::size_t>(c)] = true;
        macro_sum += auc;
        ++macro_n;
    }
    if (macro_n == 0) throw Error("roc_auc_ovr: no class has both positives and negatives");
    out.macro = macro_sum / static_cast<double>(macro_n);
    return out;
}

MetricsReport build_report(const ConfusionMatrix& cm, const Matrix& scores,
                           const std::vector<std::int64_t>& labels) {
    if (cm.total() != static_cast<std::int64_t>(labels.size())) {
        throw Error("build_report: confusion matrix total does not match label count");
    }
    const BasicRates rates = basic_rates(cm);
    const F1Scores f1 = f1_scores(cm);
    const AucResult auc = roc_auc_ovr(scores, labels);

    MetricsReport report;
    report.accuracy = rates.accuracy;
    report.micro_sensitivity = rates.micro_sensitivity;
    report.micro_specificity = rates.micro_specificity;
    report.f1_weighted = f1.weighted;
    report.f1_macro = f1.macro_avg;
    report.roc_auc_macro_ovr = auc.macro;
    report.per_class_f1 = f1.per_class;
    report.per_class_auc = auc.per_class;
    for (std::int64_t c = 0; c < cm.classes; ++c) {
        const std::int64_t tp = cm.at(c, c);
        const std::int64_t support = cm.support(c);
        std::int64_t pred_c = 0;
        for (std::int64_t t = 0; t < cm.classes; ++t) pred_c += cm.at(t, c);
        report.per_class_precision.push_back(pred_c > 0 ? static_cast<double>(tp) / pred_c : 0.0);
        report.per_class_recall.push_back(support > 0 ? static_cast<double>(tp) / support : 0.0);
        report.per_class_support.push_back(support);
    }
    return report;
}

void save_report_csv(const MetricsReport& report, const std::string& path, const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) throw DataError(concat("cannot open '", path, "' for writing"));
    if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
    out << "accuracy,sensitivity,specificity,f1,roc_auc,f1_macro";
    const std::size_t classes = report.per_class_recall.size();
    for (std::size_t c = 0; c < classes; ++c) {
        out << ",precision_" << c << ",recall_" << c << ",f1_" << c << ",support_" << c << ",auc_" << c;
    }
    out << "\n";
    out << format_double(report.accuracy) << "," << format_double(report.micro_sensitivity) << ","
        << format_double(report.micro_specificity) << "," << format_double(report.f1_weighted) << ","
        << format_double(report.roc_auc_macro_ovr) << "," << format_double(report.f1_macro);
    for (std::size_t c = 0; c < classes; ++c) {
        out << "," << format_double(report.per_class_precision[c]) << "," << format_double(report.per_class_recall[c])
            << "," << format_double(report.per_class_f1[c]) << "," << report.per_class_support[c] << ","
            << format_double(report.per_class_auc[c]);
    }
    out << "\n";
}

MetricsReport load_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(concat("cannot open report '", path, "'"));
    std::string header;
    while (std::getline(in, header)) {
        if (!header.empty() && header[0] != '#') break;
    }
    std::string row;
    if (!std::getline(in, row)) throw DataError(concat("report '", path, "' has no data row"));
    std::vector<std::string> names, cells;
    {
        std::stringstream hs(header), rs(row);
        std::string tok;
        while (std::getline(hs, tok, ',')) names.push_back(tok);
        while (std::getline(rs, tok, ',')) cells.push_back(tok);
    }
    if (names.size() != cells.size()) throw DataError(concat("report '", path, "': header/row width mismatch"));
    MetricsReport report;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const std::string& name = names[i];
        const double v = std::stod(cells[i]);
        if (name == "accuracy") report.accuracy = v;
        else if (name == "sensitivity") report.micro_sensitivity = v;
        else if (name == "specificity") report.micro_specificity = v;
        else if (name == "f1") report.f1_weighted = v;
        else if (name == "roc_auc") report.roc_auc_macro_ovr = v;
        else if (name == "f1_macro") report.f1_macro = v;
        else if (name.rfind("precision_", 0) == 0) report.per_class_precision.push_back(v);
        else if (name.rfind("recall_", 0) == 0) report.per_class_recall.push_back(v);
        else if (name.rfind("f1_", 0) == 0) report.per_class_f1.push_back(v);
        else if (name.rfind("support_", 0) == 0) report.per_class_support.push_back(std::stoll(cells[i]));
        else if (name.rfind("auc_", 0) == 0) report.per_class_auc.push_back(v);
    }
    return report;
}

std::string report_markdown(const MetricsReport& report, const std::string& row_name) {
    std::ostringstream os;
    os << "| Model | Accuracy | Sensitivity | Specificity | F1 Score | ROC AUC |\n";
    os << "|---|---|---|---|---|---|\n";
    char buf[64];
    os << "| " << row_name;
    for (double v : {report.accuracy, report.micro_sensitivity, report.micro_specificity, report.f1_weighted,
                     report.roc_auc_macro_ovr}) {
        std::snprintf(buf, sizeof(buf), "%.4f", v);
        os << " | " << buf;
    }
    os << " |\n";
    return os.str();
}

}  // namespace medconv
