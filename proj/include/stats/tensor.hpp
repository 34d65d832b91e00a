#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stats/errors.hpp"

namespace stats {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

/// Dense row-major tensor of doubles. Value type; copies are deep.
///
/// Most of the library works on rank-2 tensors. Rank-1 tensors are viewed as a
/// single row by `rows()`/`cols()`.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_size(shape_) != data_.size())
            throw ContractViolation("Tensor: shape " + shape_str(shape_) + " does not match " +
                                    std::to_string(data_.size()) + " values");
    }

    static Tensor scalar(double v) { return Tensor({1, 1}, v); }
    static Tensor matrix(std::size_t r, std::size_t c, double fill = 0.0) { return Tensor({r, c}, fill); }
    static Tensor row(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({1, n}, std::move(v));
    }
    static Tensor column(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({n, 1}, std::move(v));
    }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const noexcept {
        if (shape_.size() >= 2) return shape_[0];
        return 1;
    }
    std::size_t cols() const noexcept {
        if (shape_.empty()) return 1;
        if (shape_.size() == 1) return shape_[0];
        return data_.size() / std::max<std::size_t>(shape_[0], 1);
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    double item() const {
        if (data_.size() != 1) throw ContractViolation("Tensor::item on non-scalar " + shape_str(shape_));
        return data_[0];
    }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size())
            throw ContractViolation("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }

    Tensor transposed() const {
        const std::size_t r = rows(), c = cols();
        Tensor out({c, r});
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out.data_[j * r + i] = data_[i * c + j];
        return out;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    Shape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double sum_of(const Tensor& t) { return std::accumulate(t.values().begin(), t.values().end(), 0.0); }

inline double squared_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v * v;
    return s;
}

// Dense kernels. All accumulate into `out`, which must be pre-sized.

/// out(MxN) += A(MxK) * B(KxN)
inline void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                    std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        const double* arow = a.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

/// out(MxN) += A(MxK) * B(NxK)^T
inline void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                    std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        double* orow = out.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            orow[j] += s;
        }
    }
}

/// out(KxN) += A(MxK)^T * B(MxN)
inline void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                    std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        const double* brow = b.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* orow = out.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw ContractViolation("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor out({a.rows(), b.cols()});
    gemm_nn(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
    return out;
}

}  // namespace stats
