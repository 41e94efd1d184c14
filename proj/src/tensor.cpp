#include "sparsecot/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "sparsecot/errors.hpp"

namespace sparsecot {

namespace {

std::size_t shape_product(const std::vector<std::size_t> &shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) {
            throw DimensionError("tensor shape has zero-sized dimension: " + sparsecot::shape_str(shape));
        }
        n *= d;
    }
    return n;
}

} // namespace

std::string shape_str(const std::vector<std::size_t> &shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            os << "x";
        }
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_product(shape_)) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + sparsecot::shape_str(shape_));
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    for (double &v : t.data_) {
        v = value;
    }
    return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> data) {
    std::size_t n = data.size();
    return Tensor({n}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0;
    }
    return t;
}

std::string Tensor::shape_str() const { return sparsecot::shape_str(shape_); }

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

Tensor matmul(const Tensor &a, const Tensor &b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul expects 2D tensors, got " + a.shape_str() + " and " +
                             b.shape_str());
    }
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ: " + a.shape_str() + " vs " +
                             b.shape_str());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    // i-k-j order: each out(i,j) still accumulates over k in ascending order,
    // which keeps the summation order fixed.
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a(i, p);
            if (av == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < n; ++j) {
                out(i, j) += av * b(p, j);
            }
        }
    }
    return out;
}

Tensor transpose(const Tensor &a) {
    if (a.rank() != 2) {
        throw DimensionError("transpose expects a 2D tensor, got " + a.shape_str());
    }
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

namespace {

void require_same_shape(const Tensor &a, const Tensor &b, const char *op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch: " + a.shape_str() + " vs " +
                             b.shape_str());
    }
}

} // namespace

Tensor add(const Tensor &a, const Tensor &b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out(i) += b(i);
    }
    return out;
}

Tensor sub(const Tensor &a, const Tensor &b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out(i) -= b(i);
    }
    return out;
}

Tensor hadamard(const Tensor &a, const Tensor &b) {
    require_same_shape(a, b, "hadamard");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out(i) *= b(i);
    }
    return out;
}

Tensor scale(const Tensor &a, double s) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out(i) *= s;
    }
    return out;
}

namespace {

void check_norm_params(const Tensor &x, const Tensor &gamma, const Tensor &beta) {
    if (x.rank() == 0) {
        throw DimensionError("layer_norm: empty tensor");
    }
    const std::size_t d = x.shape().back();
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
        throw DimensionError("layer_norm: params " + gamma.shape_str() + "/" + beta.shape_str() +
                             " do not match last dimension of " + x.shape_str());
    }
}

} // namespace

Tensor layer_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta, double eps) {
    check_norm_params(x, gamma, beta);
    if (eps <= 0.0) {
        throw ArgumentError("layer_norm: eps must be positive");
    }
    const std::size_t d = x.shape().back();
    const std::size_t n_rows = x.size() / d;
    Tensor out = x;
    for (std::size_t r = 0; r < n_rows; ++r) {
        double *p = out.data().data() + r * d;
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            mean += p[i];
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double c = p[i] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) {
            p[i] = (p[i] - mean) * inv_std * gamma(i) + beta(i);
        }
    }
    return out;
}

Tensor layer_norm_backward(const Tensor &x, const Tensor &gamma, const Tensor &dy,
                           Tensor &dgamma, Tensor &dbeta, double eps) {
    if (!x.same_shape(dy)) {
        throw DimensionError("layer_norm_backward: x " + x.shape_str() + " vs dy " +
                             dy.shape_str());
    }
    const std::size_t d = x.shape().back();
    const std::size_t n_rows = x.size() / d;
    Tensor dx = Tensor::zeros(x.shape());
    std::vector<double> xhat(d), dxhat(d);
    for (std::size_t r = 0; r < n_rows; ++r) {
        const double *xp = x.data().data() + r * d;
        const double *gp = dy.data().data() + r * d;
        double *op = dx.data().data() + r * d;
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            mean += xp[i];
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double c = xp[i] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            xhat[i] = (xp[i] - mean) * inv_std;
            dxhat[i] = gp[i] * gamma(i);
            sum_dxhat += dxhat[i];
            sum_dxhat_xhat += dxhat[i] * xhat[i];
            dgamma(i) += gp[i] * xhat[i];
            dbeta(i) += gp[i];
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i) {
            op[i] = inv_std * (dxhat[i] - inv_d * sum_dxhat - xhat[i] * inv_d * sum_dxhat_xhat);
        }
    }
    return dx;
}

} // namespace sparsecot
