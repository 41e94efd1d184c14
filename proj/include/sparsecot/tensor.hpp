#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sparsecot {

/// Dense row-major array of doubles. The numeric substrate for everything
/// else; operations never mutate their inputs.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    static Tensor vector(std::vector<double> data);
    static Tensor identity(std::size_t n);

    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    const std::vector<std::size_t> &shape() const { return shape_; }

    // 2D convenience
    std::size_t rows() const { return shape_[0]; }
    std::size_t cols() const { return shape_[1]; }

    double &operator()(std::size_t i) { return data_[i]; }
    double operator()(std::size_t i) const { return data_[i]; }
    double &operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double &operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    /// Row i of a 2D tensor.
    std::span<double> row(std::size_t i) {
        return {data_.data() + i * shape_[1], shape_[1]};
    }
    std::span<const double> row(std::size_t i) const {
        return {data_.data() + i * shape_[1], shape_[1]};
    }

    std::vector<double> &data() { return data_; }
    const std::vector<double> &data() const { return data_; }

    bool same_shape(const Tensor &other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    bool all_finite() const;

  private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_str(const std::vector<std::size_t> &shape);

/// Standard matrix product with a fixed left-to-right summation order over the
/// inner dimension, so repeated runs are bit-identical.
Tensor matmul(const Tensor &a, const Tensor &b);

Tensor transpose(const Tensor &a);
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor hadamard(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double s);

/// Per-position normalization over the last dimension:
/// (x - mean) / sqrt(var + eps) * gamma + beta.
Tensor layer_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta,
                  double eps = 1e-5);

/// Gradients of layer_norm. Recomputes the row statistics from x; writes
/// parameter gradients additively into dgamma/dbeta and returns dx.
Tensor layer_norm_backward(const Tensor &x, const Tensor &gamma, const Tensor &dy,
                           Tensor &dgamma, Tensor &dbeta, double eps = 1e-5);

} // namespace sparsecot
