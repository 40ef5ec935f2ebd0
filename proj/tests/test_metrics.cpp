#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "medconv/common.hpp"
#include "medconv/metrics.hpp"
#include "medconv/rng.hpp"

using namespace medconv;

namespace {

// Independent tally: per-pair counting for AUC, one pass per pair.
double brute_force_auc(const Matrix& scores, const std::vector<std::int64_t>& labels, std::int64_t cls) {
    std::int64_t twice_u = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != cls) continue;
        ++pos;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] == cls) continue;
            const double si = scores.at(static_cast<std::int64_t>(i), cls);
            const double sj = scores.at(static_cast<std::int64_t>(j), cls);
            if (si > sj) twice_u += 2;
            else if (si == sj) twice_u += 1;
        }
    }
    for (auto l : labels) {
        if (l != cls) ++neg;
    }
    if (pos == 0 || neg == 0) return -1.0;
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace

TEST_CASE("confusion_matrix: diagonal for perfect predictions, totals, recount oracle") {
    std::vector<std::int64_t> labels{0, 1, 2, 1, 0, 2, 2};
    ConfusionMatrix cm = confusion_matrix(labels, labels, 3);
    for (std::int64_t t = 0; t < 3; ++t) {
        for (std::int64_t p = 0; p < 3; ++p) {
            if (t != p) CHECK(cm.at(t, p) == 0);
        }
    }
    CHECK(cm.support(0) == 2);
    CHECK(cm.support(1) == 2);
    CHECK(cm.support(2) == 3);
    CHECK(cm.total() == 7);

    Rng rng(77);
    std::vector<std::int64_t> truth(20), preds(20);
    for (auto& v : truth) v = static_cast<std::int64_t>(rng.below(3));
    for (auto& v : preds) v = static_cast<std::int64_t>(rng.below(3));
    ConfusionMatrix random_cm = confusion_matrix(preds, truth, 3);
    // independent recount
    for (std::int64_t t = 0; t < 3; ++t) {
        for (std::int64_t p = 0; p < 3; ++p) {
            std::int64_t count = 0;
            for (std::size_t i = 0; i < truth.size(); ++i) {
                if (truth[i] == t && preds[i] == p) ++count;
            }
            CHECK(random_cm.at(t, p) == count);
        }
    }
    CHECK(random_cm.total() == 20);

    CHECK_THROWS_AS(confusion_matrix({0, 1}, {0}, 3), Error);
    CHECK_THROWS_AS(confusion_matrix({0, 3}, {0, 1}, 3), Error);
}

TEST_CASE("basic_rates: micro sensitivity equals accuracy, specificity identity") {
    Rng rng(31);
    for (std::int64_t classes : {2, 3, 5}) {
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<std::int64_t> truth(40), preds(40);
            for (auto& v : truth) v = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(classes)));
            for (auto& v : preds) v = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(classes)));
            const BasicRates rates = basic_rates(confusion_matrix(preds, truth, classes));
            CHECK(rates.micro_sensitivity == rates.accuracy);
            const double expected_spec = 1.0 - (1.0 - rates.accuracy) / static_cast<double>(classes - 1);
            CHECK(std::abs(rates.micro_specificity - expected_spec) <= 1e-12);
        }
    }

    // the reference reporting convention: 3 classes, acc 0.6538 -> spec 0.8269
    ConfusionMatrix cm(3);
    // 78 samples, 51 correct ( = 65.38% ), off-diagonals spread arbitrarily
    cm.at(0, 0) = 30; cm.at(1, 1) = 13; cm.at(2, 2) = 8;
    cm.at(0, 1) = 9; cm.at(1, 0) = 7; cm.at(1, 2) = 4; cm.at(2, 0) = 5; cm.at(2, 1) = 2;
    const BasicRates rates = basic_rates(cm);
    CHECK(rates.accuracy == doctest::Approx(0.6538).epsilon(1e-3));
    CHECK(rates.micro_sensitivity == rates.accuracy);
    CHECK(rates.micro_specificity == doctest::Approx(0.8269).epsilon(1e-3));

    ConfusionMatrix perfect(3);
    perfect.at(0, 0) = 5; perfect.at(1, 1) = 2; perfect.at(2, 2) = 1;
    CHECK(basic_rates(perfect).micro_specificity == 1.0);

    CHECK_THROWS_AS(basic_rates(ConfusionMatrix(3)), Error);
}

TEST_CASE("f1_scores: perfect, zero-division rule, hand-computed case") {
    std::vector<std::int64_t> labels{0, 1, 2, 2};
    F1Scores perfect = f1_scores(confusion_matrix(labels, labels, 3));
    for (double f : perfect.per_class) CHECK(f == 1.0);
    CHECK(perfect.weighted == 1.0);
    CHECK(perfect.macro_avg == 1.0);

    // class 2 never predicted and never present: F1=0 with support 0,
    // excluded from the weighted mean
    F1Scores partial = f1_scores(confusion_matrix({0, 1, 1}, {0, 1, 0}, 3));
    CHECK(partial.per_class[2] == 0.0);
    // weighted mean over supports (2,1,0): c0 F1 = 2*(0.5*... compute: preds (0,1,1), truth (0,1,0)
    // c0: TP1 FP0 FN1 -> P1 R0.5 F1 2/3 ; c1: TP1 FP1 FN0 -> P0.5 R1 F1 2/3
    CHECK(partial.weighted == doctest::Approx((2.0 * (2.0 / 3.0) + 1.0 * (2.0 / 3.0)) / 3.0).epsilon(1e-12));

    // 6-sample case, hand-computed per-class P/R arithmetic
    std::vector<std::int64_t> truth{0, 0, 0, 1, 1, 2};
    std::vector<std::int64_t> preds{0, 0, 1, 1, 2, 2};
    F1Scores scores = f1_scores(confusion_matrix(preds, truth, 3));
    CHECK(std::abs(scores.per_class[0] - 4.0 / 5.0) <= 1e-12);
    CHECK(std::abs(scores.per_class[1] - 1.0 / 2.0) <= 1e-12);
    CHECK(std::abs(scores.per_class[2] - 2.0 / 3.0) <= 1e-12);
    CHECK(std::abs(scores.macro_avg - (4.0 / 5.0 + 1.0 / 2.0 + 2.0 / 3.0) / 3.0) <= 1e-12);
    CHECK(std::abs(scores.weighted - (3.0 * (4.0 / 5.0) + 2.0 * (1.0 / 2.0) + 1.0 * (2.0 / 3.0)) / 6.0) <= 1e-12);
}

TEST_CASE("roc_auc_ovr: separation, the 4-sample binary oracle, ties") {
    // perfectly separating scores
    Matrix sep(4, 2);
    sep.at(0, 1) = 0.1; sep.at(1, 1) = 0.2; sep.at(2, 1) = 0.8; sep.at(3, 1) = 0.9;
    for (std::int64_t r = 0; r < 4; ++r) sep.at(r, 0) = 1.0 - sep.at(r, 1);
    AucResult res = roc_auc_ovr(sep, {0, 0, 1, 1});
    CHECK(res.per_class[0] == 1.0);
    CHECK(res.per_class[1] == 1.0);
    CHECK(res.macro == 1.0);

    // brute-force over all 4 positive-negative pairs: 3 wins of 4
    Matrix m(4, 2);
    const double s1[4] = {0.1, 0.4, 0.35, 0.8};
    for (int r = 0; r < 4; ++r) {
        m.at(r, 1) = s1[r];
        m.at(r, 0) = 1.0 - s1[r];
    }
    AucResult binary = roc_auc_ovr(m, {0, 0, 1, 1});
    CHECK(binary.per_class[1] == 0.75);

    // all scores equal: every pair ties, AUC 0.5
    Matrix flat(6, 3);
    for (auto& v : flat.values) v = 0.25;
    AucResult tied = roc_auc_ovr(flat, {0, 1, 2, 0, 1, 2});
    for (double v : tied.per_class) CHECK(v == 0.5);
    CHECK(tied.macro == 0.5);

    // class without positives is skipped from the macro mean
    Matrix skip(4, 3);
    skip.at(0, 0) = 0.9; skip.at(1, 0) = 0.1; skip.at(2, 0) = 0.8; skip.at(3, 0) = 0.3;
    for (int r = 0; r < 4; ++r) {
        skip.at(r, 1) = 1.0 - skip.at(r, 0);
        skip.at(r, 2) = 0.0;
    }
    AucResult partial = roc_auc_ovr(skip, {0, 1, 0, 1});
    CHECK(partial.valid[0]);
    CHECK(partial.valid[1]);
    CHECK_FALSE(partial.valid[2]);
    CHECK(std::isnan(partial.per_class[2]));

    CHECK_THROWS_AS(roc_auc_ovr(flat, {0, 0, 0, 0, 0, 0}), Error);
}

TEST_CASE("roc_auc_ovr: equals exhaustive pairwise counting exactly, including ties") {
    Rng rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        const std::int64_t classes = trial % 2 == 0 ? 3 : 5;
        const std::int64_t n = 10 + static_cast<std::int64_t>(rng.below(60));
        Matrix scores(n, classes);
        std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
        for (auto& l : labels) l = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(classes)));
        for (auto& v : scores.values) {
            // quantized scores force plenty of ties
            v = std::floor(rng.uniform() * 8.0) / 8.0;
        }
        bool all_present = true;
        for (std::int64_t c = 0; c < classes; ++c) {
            if (std::count(labels.begin(), labels.end(), c) == 0 ||
                std::count(labels.begin(), labels.end(), c) == n) {
                all_present = false;
            }
        }
        if (!all_present) continue;
        AucResult res = roc_auc_ovr(scores, labels);
        for (std::int64_t c = 0; c < classes; ++c) {
            CHECK(res.per_class[static_cast<std::size_t>(c)] == brute_force_auc(scores, labels, c));
        }
    }
}

TEST_CASE("roc_auc_ovr: invariant under strictly increasing per-class transform") {
    Rng rng(5);
    Matrix scores(30, 3);
    std::vector<std::int64_t> labels(30);
    for (auto& l : labels) l = static_cast<std::int64_t>(rng.below(3));
    labels[0] = 0; labels[1] = 1; labels[2] = 2;
    for (auto& v : scores.values) v = rng.uniform(-2.0, 2.0);
    AucResult before = roc_auc_ovr(scores, labels);
    Matrix transformed = scores;
    for (std::int64_t r = 0; r < 30; ++r) {
        transformed.at(r, 1) = std::exp(3.0 * transformed.at(r, 1)) + 7.0;
    }
    AucResult after = roc_auc_ovr(transformed, labels);
    CHECK(before.per_class[1] == after.per_class[1]);
}

TEST_CASE("build_report: fields equal the individual metrics, CSV round trip") {
    Rng rng(123);
    const std::int64_t n = 50, classes = 3;
    Matrix scores(n, classes);
    std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = static_cast<std::int64_t>(rng.below(3));
    labels[0] = 0; labels[1] = 1; labels[2] = 2;
    for (auto& v : scores.values) v = rng.uniform();
    const auto preds = argmax_rows(scores);
    const ConfusionMatrix cm = confusion_matrix(preds, labels, classes);
    const MetricsReport report = build_report(cm, scores, labels);

    const BasicRates rates = basic_rates(cm);
    const F1Scores f1 = f1_scores(cm);
    const AucResult auc = roc_auc_ovr(scores, labels);
    CHECK(report.accuracy == rates.accuracy);
    CHECK(report.micro_sensitivity == rates.micro_sensitivity);
    CHECK(report.micro_specificity == rates.micro_specificity);
    CHECK(report.f1_weighted == f1.weighted);
    CHECK(report.f1_macro == f1.macro_avg);
    CHECK(report.roc_auc_macro_ovr == auc.macro);
    CHECK(report.micro_sensitivity == report.accuracy);

    const auto path = std::filesystem::temp_directory_path() / "medconv_report_roundtrip.csv";
    save_report_csv(report, path.string(), "deadbeef00000000");
    const MetricsReport loaded = load_report_csv(path.string());
    CHECK(loaded.accuracy == report.accuracy);
    CHECK(loaded.micro_sensitivity == report.micro_sensitivity);
    CHECK(loaded.micro_specificity == report.micro_specificity);
    CHECK(loaded.f1_weighted == report.f1_weighted);
    CHECK(loaded.f1_macro == report.f1_macro);
    CHECK(loaded.roc_auc_macro_ovr == report.roc_auc_macro_ovr);
    CHECK(loaded.per_class_recall == report.per_class_recall);
    CHECK(loaded.per_class_auc.size() == report.per_class_auc.size());
    std::filesystem::remove(path);
}
