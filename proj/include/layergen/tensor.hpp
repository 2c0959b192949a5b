#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "layergen/rng.hpp"

namespace layergen::num {

/// Dense row-major tensor of doubles. Value semantics throughout; an
/// H x W x C grid flattens to an (H*W) x C matrix without copying, which is
/// how the attention and crop/paste machinery views spatial data.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape);
    Tensor(std::vector<std::int64_t> shape, std::vector<double> values);

    static Tensor zeros(std::vector<std::int64_t> shape);
    static Tensor full(std::vector<std::int64_t> shape, double v);
    static Tensor identity(std::int64_t n);
    /// 2-D convenience: rows given literally.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor gaussian(std::vector<std::int64_t> shape, Rng& rng,
                           double stddev = 1.0);

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(values_.size()); }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t dim(std::int64_t i) const { return shape_[static_cast<std::size_t>(i)]; }

    /// Rows of the 2-D view (product of all dims but the last).
    std::int64_t rows() const;
    /// Columns of the 2-D view (last dim; 1 for scalars).
    std::int64_t cols() const;

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    double& operator[](std::int64_t i) { return values_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return values_[static_cast<std::size_t>(i)]; }

    double& at2(std::int64_t r, std::int64_t c);
    double at2(std::int64_t r, std::int64_t c) const;
    /// Grid element access for H x W x C tensors.
    double& at3(std::int64_t r, std::int64_t c, std::int64_t ch);
    double at3(std::int64_t r, std::int64_t c, std::int64_t ch) const;

    /// Same data, new shape; element count must match.
    Tensor reshaped(std::vector<std::int64_t> shape) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    std::string shape_str() const;

private:
    std::vector<std::int64_t> shape_;
    std::vector<double> values_;
};

std::string shape_str(const std::vector<std::int64_t>& shape);

// Eager kernels. The autodiff layer reuses these exact routines so graph
// and direct execution are bit-identical.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor tanh_map(const Tensor& a);

/// a[m x k] * b[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] * b[n x k]^T.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// a[m x k]^T * b[m x n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);

/// Row-wise softmax with max subtraction; rows sum to 1.
Tensor softmax_rows(const Tensor& a);

/// softmax(q k^T / sqrt(d)) v for q[Tq x d], k[Tk x d], v[Tk x dv].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// Select rows of the 2-D view in the given order.
Tensor gather_rows(const Tensor& a, const std::vector<std::int64_t>& rows);
/// Scatter rows of `a` into a zero tensor with `out_rows` rows.
Tensor scatter_rows(const Tensor& a, const std::vector<std::int64_t>& rows,
                    std::int64_t out_rows);
/// Repeat a single row n times.
Tensor broadcast_row(const Tensor& row, std::int64_t n);

double mean_all(const Tensor& a);
double sum_all(const Tensor& a);

void check_finite(const Tensor& t, const char* what);

}  // namespace layergen::num
