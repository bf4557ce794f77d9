#pragma once

// Dense row-major matrices and the handful of kernels the model needs.
// Every reduction runs in a fixed index order so results are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "extsum/error.hpp"

namespace extsum {

template <typename T = double>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        if (rows == 0 || cols == 0) {
            throw ShapeError("matrix dimensions must be positive, got " + shape_string(rows, cols));
        }
    }

    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (rows == 0 || cols == 0) {
            throw ShapeError("matrix dimensions must be positive, got " + shape_string(rows, cols));
        }
        if (data_.size() != rows * cols) {
            throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                             shape_string(rows, cols));
        }
    }

    /// Construction that also rejects NaN and infinities.
    static Matrix checked(std::size_t rows, std::size_t cols, std::vector<T> data) {
        for (const T v : data) {
            if (!std::isfinite(v)) {
                throw ValidationError("non-finite value in matrix " + shape_string(rows, cols));
            }
        }
        return Matrix(rows, cols, std::move(data));
    }

    static Matrix from_rows(const std::vector<std::vector<T>>& rows) {
        if (rows.empty() || rows.front().empty()) {
            throw ShapeError("from_rows: empty input");
        }
        std::vector<T> data;
        data.reserve(rows.size() * rows.front().size());
        for (const auto& r : rows) {
            if (r.size() != rows.front().size()) {
                throw ShapeError("from_rows: ragged rows");
            }
            data.insert(data.end(), r.begin(), r.end());
        }
        return checked(rows.size(), rows.front().size(), std::move(data));
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    std::string shape() const { return shape_string(rows_, cols_); }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Matrix& operator+=(const Matrix& o) {
        require_same_shape(*this, o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Matrix& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

    static std::string shape_string(std::size_t r, std::size_t c) {
        return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
    }

    static void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
        if (!a.same_shape(b)) {
            throw ShapeError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
        }
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using Mat = Matrix<double>;
using Vec = std::vector<double>;

/// a * b with a fixed k-loop order.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + a.shape() + " * " + b.shape());
    }
    Matrix<T> out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        T* o = out.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const T aik = a(i, k);
            const T* brow = b.row(k).data();
            for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * brow[j];
        }
    }
    return out;
}

/// a * b^T.
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: " + a.shape() + " * " + b.shape() + "^T");
    }
    Matrix<T> out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const T* arow = a.row(i).data();
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const T* brow = b.row(j).data();
            T acc = T(0);
            for (std::size_t k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
            out(i, j) = acc;
        }
    }
    return out;
}

/// a^T * b.
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: " + a.shape() + "^T * " + b.shape());
    }
    Matrix<T> out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const T* arow = a.row(k).data();
        const T* brow = b.row(k).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const T aki = arow[i];
            T* o = out.row(i).data();
            for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aki * brow[j];
        }
    }
    return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
    Matrix<T> out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

template <typename T>
Matrix<T> operator+(Matrix<T> a, const Matrix<T>& b) {
    a += b;
    return a;
}

/// In-place numerically stable softmax of one row. -inf entries get weight 0;
/// a row must contain at least one finite entry.
template <typename T>
void softmax_inplace(std::span<T> x) {
    T mx = -std::numeric_limits<T>::infinity();
    for (const T v : x) mx = std::max(mx, v);
    T sum = T(0);
    for (T& v : x) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (T& v : x) v /= sum;
}

template <typename T>
Matrix<T> softmax_rows(Matrix<T> m) {
    for (std::size_t r = 0; r < m.rows(); ++r) softmax_inplace(m.row(r));
    return m;
}

/// Inverse RMS 1 / sqrt(mean(x^2) + eps).
template <typename T>
T inv_rms(std::span<const T> x, T eps) {
    T ss = T(0);
    for (const T v : x) ss += v * v;
    const T ms = ss / static_cast<T>(x.size());
    const T denom = std::sqrt(ms + eps);
    return denom > T(0) ? T(1) / denom : T(0);
}

/// y_i = gain_i * x_i / sqrt(mean(x^2) + eps). A zero vector maps to zero
/// even when eps == 0.
template <typename T>
std::vector<T> rms_norm(std::span<const T> x, std::span<const T> gain, T eps) {
    if (x.size() != gain.size()) {
        throw ShapeError("rms_norm: length " + std::to_string(x.size()) + " vs gain length " +
                         std::to_string(gain.size()));
    }
    if (eps < T(0)) throw ConfigError("rms_norm: eps must be non-negative");
    const T s = inv_rms(x, eps);
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = gain[i] * x[i] * s;
    return y;
}

template <typename T>
std::vector<T> rms_norm(const std::vector<T>& x, const std::vector<T>& gain, T eps) {
    return rms_norm(std::span<const T>(x), std::span<const T>(gain), eps);
}

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double silu(double z) { return z * sigmoid(z); }

inline double silu_grad(double z) {
    const double s = sigmoid(z);
    return s * (1.0 + z * (1.0 - s));
}

template <typename T>
T max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
    Matrix<T>::require_same_shape(a, b, "max_abs_diff");
    T m = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace extsum
