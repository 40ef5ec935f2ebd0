#include "medconv/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "medconv/common.hpp"

namespace medconv {

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows, logits.cols);
    for (std::int64_t r = 0; r < logits.rows; ++r) {
        const double* z = logits.row(r);
        double* p = out.row(r);
        double mx = z[0];
        for (std::int64_t c = 1; c < logits.cols; ++c) mx = std::max(mx, z[c]);
        double s = 0.0;
        for (std::int64_t c = 0; c < logits.cols; ++c) {
            p[c] = std::exp(z[c] - mx);
            s += p[c];
        }
        for (std::int64_t c = 0; c < logits.cols; ++c) p[c] /= s;
    }
    return out;
}

std::vector<std::int64_t> argmax_rows(const Matrix& m) {
    std::vector<std::int64_t> out(static_cast<std::size_t>(m.rows));
    for (std::int64_t r = 0; r < m.rows; ++r) {
        const double* p = m.row(r);
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < m.cols; ++c) {
            if (p[c] > p[best]) best = c;
        }
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void save_logits_cache(const LogitsCache& cache, const std::string& path) {
    if (cache.logits.rows != static_cast<std::int64_t>(cache.labels.size())) {
        throw DataError("logits cache: row count does not match label count");
    }
    std::ofstream out(path);
    if (!out) throw DataError(concat("cannot open '", path, "' for writing"));
    out << "label";
    for (std::int64_t c = 0; c < cache.logits.cols; ++c) out << ",z" << c;
    out << "\n";
    for (std::int64_t r = 0; r < cache.logits.rows; ++r) {
        out << cache.labels[static_cast<std::size_t>(r)];
        for (std::int64_t c = 0; c < cache.logits.cols; ++c) out << "," << format_double(cache.logits.at(r, c));
        out << "\n";
    }
}

LogitsCache load_logits_cache(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(concat("cannot open logits cache '", path, "'"));
    std::string header;
    if (!std::getline(in, header)) throw DataError(concat("empty logits cache: ", path));
    std::int64_t cols = -1;  // count z columns from the header
    {
        std::stringstream hs(header);
        std::string tok;
        cols = 0;
        bool first = true;
        while (std::getline(hs, tok, ',')) {
            if (first) {
                if (tok != "label") throw DataError(concat("logits cache '", path, "': bad header"));
                first = false;
            } else {
                ++cols;
            }
        }
    }
    if (cols < 2) throw DataError(concat("logits cache '", path, "': needs at least 2 score columns"));
    LogitsCache cache;
    std::vector<double> values;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string tok;
        if (!std::getline(ls, tok, ',')) throw DataError(concat("logits cache '", path, "': bad row"));
        cache.labels.push_back(std::stoll(tok));
        std::int64_t got = 0;
        while (std::getline(ls, tok, ',')) {
            values.push_back(std::stod(tok));
            ++got;
        }
        if (got != cols) throw DataError(concat("logits cache '", path, "': row has ", got, " scores, expected ", cols));
    }
    cache.logits.rows = static_cast<std::int64_t>(cache.labels.size());
    cache.logits.cols = cols;
    cache.logits.values = std::move(values);
    return cache;
}

}  // namespace medconv
