#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace medconv {

// Row-major N x C score matrix: the interchange object between the model,
// calibration, and metrics.
struct Matrix {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::int64_t r, std::int64_t c) : rows(r), cols(c), values(static_cast<std::size_t>(r * c), 0.0) {}

    double& at(std::int64_t r, std::int64_t c) { return values[static_cast<std::size_t>(r * cols + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return values[static_cast<std::size_t>(r * cols + c)]; }
    const double* row(std::int64_t r) const { return values.data() + r * cols; }
    double* row(std::int64_t r) { return values.data() + r * cols; }
};

// Stable per-row softmax.
Matrix softmax_rows(const Matrix& logits);

// Index of the first maximum per row.
std::vector<std::int64_t> argmax_rows(const Matrix& m);

// Cached evaluation logits paired with ground-truth labels; the unit sweeps
// operate on this without re-running the model.
struct LogitsCache {
    Matrix logits;
    std::vector<std::int64_t> labels;
};

// CSV with header "label,z0,...,z{C-1}"; values round-trip bit-exactly.
void save_logits_cache(const LogitsCache& cache, const std::string& path);
LogitsCache load_logits_cache(const std::string& path);

std::string format_double(double v);

}  // namespace medconv
