#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace metrik {

/// Dense row-major 2-d array. Small, owning, value-semantic.
template <class T>
class Array2 {
public:
    Array2() = default;
    Array2(int rows, int cols, T fill = T{})
        : rows_(rows), cols_(cols), v_(static_cast<std::size_t>(rows) * cols, fill) {}

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return v_.size(); }

    T& operator()(int r, int c) {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return v_[static_cast<std::size_t>(r) * cols_ + c];
    }
    const T& operator()(int r, int c) const {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return v_[static_cast<std::size_t>(r) * cols_ + c];
    }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }
    T* row(int r) { return v_.data() + static_cast<std::size_t>(r) * cols_; }
    const T* row(int r) const { return v_.data() + static_cast<std::size_t>(r) * cols_; }

    void fill(T value) { v_.assign(v_.size(), value); }

    bool same_shape(const Array2& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    friend bool operator==(const Array2& a, const Array2& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.v_ == b.v_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> v_;
};

/// Dense row-major 3-d array indexed (i, j, k), k fastest.
template <class T>
class Array3 {
public:
    Array3() = default;
    Array3(int d0, int d1, int d2, T fill = T{})
        : d0_(d0), d1_(d1), d2_(d2), v_(static_cast<std::size_t>(d0) * d1 * d2, fill) {}

    int dim0() const { return d0_; }
    int dim1() const { return d1_; }
    int dim2() const { return d2_; }
    std::size_t size() const { return v_.size(); }

    T& operator()(int i, int j, int k) {
        assert(i >= 0 && i < d0_ && j >= 0 && j < d1_ && k >= 0 && k < d2_);
        return v_[(static_cast<std::size_t>(i) * d1_ + j) * d2_ + k];
    }
    const T& operator()(int i, int j, int k) const {
        assert(i >= 0 && i < d0_ && j >= 0 && j < d1_ && k >= 0 && k < d2_);
        return v_[(static_cast<std::size_t>(i) * d1_ + j) * d2_ + k];
    }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }

    void fill(T value) { v_.assign(v_.size(), value); }

    bool same_shape(const Array3& o) const {
        return d0_ == o.d0_ && d1_ == o.d1_ && d2_ == o.d2_;
    }
    friend bool operator==(const Array3& a, const Array3& b) {
        return a.d0_ == b.d0_ && a.d1_ == b.d1_ && a.d2_ == b.d2_ && a.v_ == b.v_;
    }

private:
    int d0_ = 0;
    int d1_ = 0;
    int d2_ = 0;
    std::vector<T> v_;
};

using Matrix = Array2<double>;
using Cube = Array3<double>;
using BinaryMatrix = Array2<std::uint8_t>;
using BinaryCube = Array3<std::uint8_t>;

}  // namespace metrik
