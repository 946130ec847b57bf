#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace iccr::ad {

// Dense row-major tensor of 64-bit floats. Rank is almost always 1 or 2 here;
// the shape is kept generic so gradients and parameters share one type.
// Storage is a raw array so hot paths can allocate without value-init.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);  // zero-filled
    Tensor(int rows, int cols);               // zero-filled matrix
    static Tensor uninitialized(int rows, int cols);
    static Tensor scalar(double v);
    static Tensor row(std::vector<double> values);  // 1 x n
    static Tensor matrix(int rows, int cols, std::vector<double> values);

    Tensor(const Tensor& other);
    Tensor& operator=(const Tensor& other);
    Tensor(Tensor&&) noexcept = default;
    Tensor& operator=(Tensor&&) noexcept = default;

    const std::vector<int>& shape() const { return shape_; }
    std::size_t size() const { return size_; }
    bool is_scalar() const { return size_ == 1; }

    int rows() const;
    int cols() const;

    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.get(); }
    const double* data() const { return data_.get(); }

    void fill(double v);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    std::string shape_str() const;

  private:
    std::vector<int> shape_;
    std::unique_ptr<double[]> data_;
    std::size_t size_ = 0;
    int cols_ = 0;  // cached innermost extent for at()
};

// Raw kernels shared by forward passes and backward rules. `acc` variants
// accumulate into `out`, the plain ones overwrite. Accumulation order over
// the contraction axis is fixed so deterministic runs are bit-reproducible.
void matmul_into(const Tensor& a, const Tensor& b, Tensor& out);         // out = a b
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out);       // out += a b^T
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out);       // out += a^T b
void matmul_nt_into(const Tensor& a, const Tensor& b, Tensor& out);      // out = a b^T

}  // namespace iccr::ad
