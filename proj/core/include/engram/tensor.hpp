#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <type_traits>
#include <vector>

namespace engram {

// Dense row-major matrix. Deliberately minimal: the model code needs exactly
// three kernels (y = W x, y += W^T x, G += a b^T) plus row views, and keeping
// them as plain loops lets the compiler vectorize them.
template <typename T>
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T{}) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }
    void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

// The span parameters use type_identity so deduction is anchored on Mat (or
// the scalar) and callers can pass mutable spans or vectors freely.

// y = W x  (W is [out x in])
template <typename T>
void matvec(const Mat<T>& w, std::span<const std::type_identity_t<T>> x,
            std::span<std::type_identity_t<T>> y) {
    assert(x.size() == w.cols && y.size() == w.rows);
    for (std::size_t r = 0; r < w.rows; ++r) {
        const T* wr = w.data.data() + r * w.cols;
        T acc{};
        for (std::size_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
        y[r] = acc;
    }
}

// y += W^T x  (x has out entries, y has in entries)
template <typename T>
void matvec_transposed_add(const Mat<T>& w, std::span<const std::type_identity_t<T>> x,
                           std::span<std::type_identity_t<T>> y) {
    assert(x.size() == w.rows && y.size() == w.cols);
    for (std::size_t r = 0; r < w.rows; ++r) {
        const T s = x[r];
        if (s == T{}) continue;
        const T* wr = w.data.data() + r * w.cols;
        for (std::size_t c = 0; c < w.cols; ++c) y[c] += s * wr[c];
    }
}

// G += a b^T
template <typename T>
void add_outer(Mat<T>& g, std::span<const std::type_identity_t<T>> a,
               std::span<const std::type_identity_t<T>> b) {
    assert(a.size() == g.rows && b.size() == g.cols);
    for (std::size_t r = 0; r < g.rows; ++r) {
        const T s = a[r];
        if (s == T{}) continue;
        T* gr = g.data.data() + r * g.cols;
        for (std::size_t c = 0; c < g.cols; ++c) gr[c] += s * b[c];
    }
}

template <typename T>
void axpy(T a, std::span<const std::type_identity_t<T>> x,
          std::span<std::type_identity_t<T>> y) {
    assert(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

template <typename T>
T dot(std::span<const std::type_identity_t<T>> a,
      std::span<const std::type_identity_t<T>> b) {
    assert(a.size() == b.size());
    T acc{};
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace engram
