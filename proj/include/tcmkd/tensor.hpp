#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tcmkd {

// Dense row-major tensor. Plain value type; autodiff bookkeeping lives in
// Graph nodes and Parameter, not here.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> values;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        values.assign(static_cast<size_t>(numel_of(shape)), T(0));
    }

    Tensor(std::vector<int> s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
        if (static_cast<int64_t>(values.size()) != numel_of(shape))
            throw std::invalid_argument("tensor: value count " + std::to_string(values.size()) +
                                        " does not match shape " + shape_str());
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension " + std::to_string(d));
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(values.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : values)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill(T v) { std::fill(values.begin(), values.end(), v); }
};

template <typename T, typename U>
Tensor<T> tensor_cast(const Tensor<U>& src) {
    Tensor<T> out(src.shape);
    for (size_t i = 0; i < src.values.size(); ++i) out.values[i] = static_cast<T>(src.values[i]);
    return out;
}

} // namespace tcmkd
