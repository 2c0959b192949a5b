#include "layergen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "layergen/errors.hpp"

namespace layergen::num {

static std::int64_t product(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d <= 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)), values_(static_cast<std::size_t>(product(shape_)), 0.0) {}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (product(shape_) != static_cast<std::int64_t>(values_.size()))
        throw DimensionError("value count " + std::to_string(values_.size()) +
                             " does not match shape " + num::shape_str(shape_));
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::int64_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.values_.begin(), t.values_.end(), v);
    return t;
}

Tensor Tensor::identity(std::int64_t n) {
    Tensor t({n, n});
    for (std::int64_t i = 0; i < n; ++i) t.at2(i, i) = 1.0;
    return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::int64_t m = static_cast<std::int64_t>(rows.size());
    const std::int64_t n = m ? static_cast<std::int64_t>(rows.begin()->size()) : 0;
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(m * n));
    for (const auto& r : rows) {
        if (static_cast<std::int64_t>(r.size()) != n)
            throw DimensionError("ragged matrix literal");
        vals.insert(vals.end(), r.begin(), r.end());
    }
    return Tensor({m, n}, std::move(vals));
}

Tensor Tensor::gaussian(std::vector<std::int64_t> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.values_) v = rng.normal() * stddev;
    return t;
}

std::int64_t Tensor::rows() const {
    if (shape_.empty()) return 1;
    std::int64_t r = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
}

std::int64_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

double& Tensor::at2(std::int64_t r, std::int64_t c) {
    return values_[static_cast<std::size_t>(r * cols() + c)];
}
double Tensor::at2(std::int64_t r, std::int64_t c) const {
    return values_[static_cast<std::size_t>(r * cols() + c)];
}
double& Tensor::at3(std::int64_t r, std::int64_t c, std::int64_t ch) {
    const std::int64_t W = shape_[1], C = shape_[2];
    return values_[static_cast<std::size_t>((r * W + c) * C + ch)];
}
double Tensor::at3(std::int64_t r, std::int64_t c, std::int64_t ch) const {
    const std::int64_t W = shape_[1], C = shape_[2];
    return values_[static_cast<std::size_t>((r * W + c) * C + ch)];
}

Tensor Tensor::reshaped(std::vector<std::int64_t> shape) const {
    if (product(shape) != size())
        throw DimensionError("reshape " + num::shape_str(shape_) + " -> " + num::shape_str(shape) +
                             " changes element count");
    return Tensor(std::move(shape), values_);
}

bool Tensor::all_finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const { return num::shape_str(shape_); }

void check_finite(const Tensor& t, const char* what) {
    if (!t.all_finite())
        throw NumericError(std::string(what) + ": non-finite values present");
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                             " vs " + b.shape_str());
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= c;
    return out;
}

Tensor tanh_map(const Tensor& a) {
    Tensor out = a;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::int64_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw DimensionError("matmul: inner dims disagree, " + a.shape_str() + " x " +
                             b.shape_str());
    Tensor out({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = a.at2(i, p);
            if (av == 0.0) continue;
            for (std::int64_t j = 0; j < n; ++j) out.at2(i, j) += av * b.at2(p, j);
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const std::int64_t m = a.rows(), k = a.cols(), n = b.rows();
    if (k != b.cols())
        throw DimensionError("matmul_nt: inner dims disagree, " + a.shape_str() + " x " +
                             b.shape_str() + "^T");
    Tensor out({m, n});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::int64_t p = 0; p < k; ++p) s += a.at2(i, p) * b.at2(j, p);
            out.at2(i, j) = s;
        }
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
    if (m != b.rows())
        throw DimensionError("matmul_tn: inner dims disagree, " + a.shape_str() + "^T x " +
                             b.shape_str());
    Tensor out({k, n});
    for (std::int64_t p = 0; p < m; ++p)
        for (std::int64_t i = 0; i < k; ++i) {
            const double av = a.at2(p, i);
            if (av == 0.0) continue;
            for (std::int64_t j = 0; j < n; ++j) out.at2(i, j) += av * b.at2(p, j);
        }
    return out;
}

Tensor softmax_rows(const Tensor& a) {
    const std::int64_t m = a.rows(), n = a.cols();
    Tensor out = a;
    for (std::int64_t i = 0; i < m; ++i) {
        double mx = out.at2(i, 0);
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, out.at2(i, j));
        double z = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            const double e = std::exp(out.at2(i, j) - mx);
            out.at2(i, j) = e;
            z += e;
        }
        for (std::int64_t j = 0; j < n; ++j) out.at2(i, j) /= z;
    }
    return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    const std::int64_t d = q.cols();
    if (d < 1 || k.rows() < 1)
        throw DimensionError("attention: need d >= 1 and at least one key row");
    if (k.cols() != d)
        throw DimensionError("attention: q/k width mismatch " + q.shape_str() + " vs " +
                             k.shape_str());
    if (v.rows() != k.rows())
        throw DimensionError("attention: k/v row mismatch " + k.shape_str() + " vs " +
                             v.shape_str());
    const Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
    return matmul(softmax_rows(scores), v);
}

Tensor gather_rows(const Tensor& a, const std::vector<std::int64_t>& rows) {
    const std::int64_t n = a.rows(), c = a.cols();
    Tensor out({static_cast<std::int64_t>(rows.size()), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::int64_t r = rows[i];
        if (r < 0 || r >= n)
            throw GeometryError("gather_rows: row " + std::to_string(r) + " outside [0," +
                                std::to_string(n) + ")");
        for (std::int64_t j = 0; j < c; ++j)
            out.at2(static_cast<std::int64_t>(i), j) = a.at2(r, j);
    }
    return out;
}

Tensor scatter_rows(const Tensor& a, const std::vector<std::int64_t>& rows,
                    std::int64_t out_rows) {
    const std::int64_t c = a.cols();
    if (a.rows() != static_cast<std::int64_t>(rows.size()))
        throw DimensionError("scatter_rows: " + std::to_string(rows.size()) +
                             " indices for " + std::to_string(a.rows()) + " rows");
    Tensor out({out_rows, c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::int64_t r = rows[i];
        if (r < 0 || r >= out_rows)
            throw GeometryError("scatter_rows: row " + std::to_string(r) + " outside [0," +
                                std::to_string(out_rows) + ")");
        for (std::int64_t j = 0; j < c; ++j)
            out.at2(r, j) += a.at2(static_cast<std::int64_t>(i), j);
    }
    return out;
}

Tensor broadcast_row(const Tensor& row, std::int64_t n) {
    if (row.rows() != 1)
        throw DimensionError("broadcast_row: expected a single row, got " + row.shape_str());
    Tensor out({n, row.cols()});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < row.cols(); ++j) out.at2(i, j) = row.at2(0, j);
    return out;
}

double sum_all(const Tensor& a) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += a[i];
    return s;
}

double mean_all(const Tensor& a) {
    if (a.size() == 0) throw EmptyInputError("mean_all: empty tensor");
    return sum_all(a) / static_cast<double>(a.size());
}

}  // namespace layergen::num
