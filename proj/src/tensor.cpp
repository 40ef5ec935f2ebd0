#include "medconv/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace medconv {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d <= 0) throw Error(concat("tensor shape has non-positive extent: ", shape_str(shape)));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape.size() > 5) throw Error(concat("tensor rank ", shape.size(), " exceeds 5"));
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
        throw Error(concat("tensor data size ", data.size(), " does not match shape ", shape_str(shape)));
    }
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (T v : data) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

template <typename T>
void dump_csv(const Tensor<T>& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError(concat("cannot open '", path, "' for writing"));
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) out << ",";
        out << t.shape[i];
    }
    out << "\n";
    char buf[64];
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(t.data[i]));
        out << buf << "\n";
    }
}

template <typename T>
TensorPtr<T> load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(concat("cannot open '", path, "' for reading"));
    std::string header;
    if (!std::getline(in, header)) throw DataError(concat("empty tensor dump: ", path));
    Shape shape;
    std::stringstream hs(header);
    std::string tok;
    while (std::getline(hs, tok, ',')) shape.push_back(std::stoll(tok));
    std::vector<T> values;
    values.reserve(static_cast<std::size_t>(shape_numel(shape)));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        values.push_back(static_cast<T>(std::stod(line)));
    }
    return make_tensor<T>(std::move(shape), std::move(values));
}

template struct Tensor<float>;
template struct Tensor<double>;
template void dump_csv<float>(const Tensor<float>&, const std::string&);
template void dump_csv<double>(const Tensor<double>&, const std::string&);
template TensorPtr<float> load_csv<float>(const std::string&);
template TensorPtr<double> load_csv<double>(const std::string&);

}  // namespace medconv
