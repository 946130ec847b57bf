#include "iccr/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "iccr/errors.hpp"

namespace iccr::ad {

namespace {
std::size_t shape_product(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw DimensionError("tensor extent must be positive");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    size_ = shape_product(shape_);
    cols_ = shape_.empty() ? 1 : shape_.back();
    data_ = std::make_unique_for_overwrite<double[]>(size_);
    std::memset(data_.get(), 0, size_ * sizeof(double));
}

Tensor::Tensor(int rows, int cols) : Tensor(std::vector<int>{rows, cols}) {}

Tensor Tensor::uninitialized(int rows, int cols) {
    Tensor t;
    t.shape_ = {rows, cols};
    t.size_ = shape_product(t.shape_);
    t.cols_ = cols;
    t.data_ = std::make_unique_for_overwrite<double[]>(t.size_);
    return t;
}

Tensor::Tensor(const Tensor& other)
    : shape_(other.shape_), size_(other.size_), cols_(other.cols_) {
    if (size_ > 0) {
        data_ = std::make_unique_for_overwrite<double[]>(size_);
        std::memcpy(data_.get(), other.data_.get(), size_ * sizeof(double));
    }
}

Tensor& Tensor::operator=(const Tensor& other) {
    if (this == &other) return *this;
    shape_ = other.shape_;
    cols_ = other.cols_;
    if (size_ != other.size_) {
        size_ = other.size_;
        data_ = size_ > 0 ? std::make_unique_for_overwrite<double[]>(size_) : nullptr;
    }
    if (size_ > 0) std::memcpy(data_.get(), other.data_.get(), size_ * sizeof(double));
    return *this;
}

Tensor Tensor::scalar(double v) {
    Tensor t = uninitialized(1, 1);
    t.data_[0] = v;
    return t;
}

Tensor Tensor::row(std::vector<double> values) {
    Tensor t = uninitialized(1, static_cast<int>(values.size()));
    std::memcpy(t.data_.get(), values.data(), values.size() * sizeof(double));
    return t;
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> values) {
    if (values.size() != static_cast<std::size_t>(rows) * cols) {
        throw DimensionError("matrix: value count does not match shape");
    }
    Tensor t = uninitialized(rows, cols);
    std::memcpy(t.data_.get(), values.data(), values.size() * sizeof(double));
    return t;
}

int Tensor::rows() const {
    if (shape_.size() != 2) throw DimensionError("rows(): tensor is not a matrix");
    return shape_[0];
}

int Tensor::cols() const {
    if (shape_.size() != 2) throw DimensionError("cols(): tensor is not a matrix");
    return shape_[1];
}

void Tensor::fill(double v) {
    for (std::size_t i = 0; i < size_; ++i) data_[i] = v;
}

bool Tensor::all_finite() const {
    // x - x is 0 for finite x and NaN otherwise; the sum form vectorizes
    double probe = 0.0;
    for (std::size_t i = 0; i < size_; ++i) probe += data_[i] - data_[i];
    return probe == 0.0;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << "]";
    return os.str();
}

void matmul_into(const Tensor& a, const Tensor& b, Tensor& out) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner extents disagree " + a.shape_str() + " * " + b.shape_str());
    }
    const double* __restrict__ pa = a.data();
    const double* __restrict__ pb = b.data();
    double* __restrict__ pc = out.data();
    for (int i = 0; i < m; ++i) {
        const double* arow = pa + static_cast<std::size_t>(i) * k;
        double* crow = pc + static_cast<std::size_t>(i) * n;
        std::memset(crow, 0, static_cast<std::size_t>(n) * sizeof(double));
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = pb + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt_into(const Tensor& a, const Tensor& b, Tensor& out) {
    const int m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw DimensionError("matmul_nt: inner extents disagree " + a.shape_str() + " * " + b.shape_str() + "^T");
    }
    const double* __restrict__ pa = a.data();
    const double* __restrict__ pb = b.data();
    double* __restrict__ pc = out.data();
    for (int i = 0; i < m; ++i) {
        const double* arow = pa + static_cast<std::size_t>(i) * k;
        double* crow = pc + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = pb + static_cast<std::size_t>(j) * k;
            // four independent accumulators in a fixed lane order keep the
            // reduction deterministic while breaking the FMA latency chain
            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
            int kk = 0;
            for (; kk + 4 <= k; kk += 4) {
                a0 += arow[kk] * brow[kk];
                a1 += arow[kk + 1] * brow[kk + 1];
                a2 += arow[kk + 2] * brow[kk + 2];
                a3 += arow[kk + 3] * brow[kk + 3];
            }
            double acc = (a0 + a1) + (a2 + a3);
            for (; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = acc;
        }
    }
}

void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    // out[i][j] += dot(a.row(i), b.row(j))
    const int m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw DimensionError("matmul_nt: inner extents disagree " + a.shape_str() + " * " + b.shape_str() + "^T");
    }
    const double* __restrict__ pa = a.data();
    const double* __restrict__ pb = b.data();
    double* __restrict__ pc = out.data();
    for (int i = 0; i < m; ++i) {
        const double* arow = pa + static_cast<std::size_t>(i) * k;
        double* crow = pc + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = pb + static_cast<std::size_t>(j) * k;
            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
            int kk = 0;
            for (; kk + 4 <= k; kk += 4) {
                a0 += arow[kk] * brow[kk];
                a1 += arow[kk + 1] * brow[kk + 1];
                a2 += arow[kk + 2] * brow[kk + 2];
                a3 += arow[kk + 3] * brow[kk + 3];
            }
            double acc = (a0 + a1) + (a2 + a3);
            for (; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    // out[i][j] += sum_k a[k][i] * b[k][j]
    const int k = a.rows(), m = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul_tn: inner extents disagree " + a.shape_str() + "^T * " + b.shape_str());
    }
    const double* __restrict__ pa = a.data();
    const double* __restrict__ pb = b.data();
    double* __restrict__ pc = out.data();
    for (int kk = 0; kk < k; ++kk) {
        const double* arow = pa + static_cast<std::size_t>(kk) * m;
        const double* brow = pb + static_cast<std::size_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = pc + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace iccr::ad
