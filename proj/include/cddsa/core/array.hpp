#pragma once

#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cddsa/core/errors.hpp"

namespace cddsa::nn {

using Shape = std::vector<int>;

inline long shape_numel(const Shape& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major tensor (last dimension fastest). Conventions:
//   images / feature maps : (N, C, H, W)
//   row batches           : (N, F)
//   scalars               : (1)
template <typename S>
struct Array {
    Shape shape;
    std::vector<S> data;

    Array() = default;
    explicit Array(Shape s, S fill = S(0))
        : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}
    Array(Shape s, std::vector<S> values) : shape(std::move(s)), data(std::move(values)) {
        if (static_cast<long>(data.size()) != shape_numel(shape))
            throw ShapeError("Array: value count does not match shape " + shape_str(shape));
    }

    long numel() const { return static_cast<long>(data.size()); }
    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }
    S& operator[](long i) { return data[static_cast<std::size_t>(i)]; }
    const S& operator[](long i) const { return data[static_cast<std::size_t>(i)]; }

    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }

    static Array scalar(S v) { return Array(Shape{1}, std::vector<S>{v}); }
};

template <typename S>
inline void check_same_shape(const Array<S>& a, const Array<S>& b, const char* op) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

}  // namespace cddsa::nn
