#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "medconv/matrix.hpp"
#include "medconv/metrics.hpp"

namespace medconv {

// Per-class temperatures. The head class (largest training count, ties broken
// by lowest index) carries tau1; every other class carries tau2. Temperatures
// divide the logits, so tau2 = 0.5 doubles the tail logits.
struct TauAssignment {
    std::vector<double> per_class;
    std::int64_t head_class = 0;
    double tau1 = 1.0;
    double tau2 = 0.5;
};

TauAssignment assign_taus(const std::vector<std::int64_t>& counts, double tau1, double tau2);

// softmax over (z_c / tau_c); rows sum to 1.
Matrix adjust_logits(const Matrix& logits, const TauAssignment& taus);

enum class SweepMode { kTied, kFixedTau1 };

struct SweepRow {
    double tau1 = 0.0;
    double tau2 = 0.0;
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double f1 = 0.0;
    double roc_auc = 0.0;
};

struct SweepTable {
    std::vector<SweepRow> rows;
};

// Evaluates a temperature grid on cached logits; the model is never re-run.
// Tied mode forces tau1 == tau2 per grid point; fixed_tau1 holds tau1 and
// varies tau2.
SweepTable sweep_tau(const Matrix& logits, const std::vector<std::int64_t>& labels,
                     const std::vector<std::int64_t>& counts,
                     const std::vector<std::pair<double, double>>& grid, SweepMode mode);

void save_sweep_csv(const SweepTable& table, const std::string& path, const std::string& config_hash);
std::string sweep_markdown(const SweepTable& table);

}  // namespace medconv
