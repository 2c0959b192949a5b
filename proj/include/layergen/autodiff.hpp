#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "layergen/tensor.hpp"

namespace layergen::num {

/// Closed operation set for reverse-mode differentiation. Anything else in a
/// graph is rejected by backward() with an UnsupportedOperationError.
enum class Op {
    Leaf,
    Add,
    Sub,
    Mul,        // elementwise
    Scale,      // multiply by a fixed scalar
    Matmul,     // a * b
    MatmulNT,   // a * b^T
    Softmax,    // row-wise
    Tanh,
    Gather,     // row gather (crop / flatten-select)
    Scatter,    // row scatter into zeros (paste)
    Broadcast,  // single row repeated n times
    MeanAll,    // scalar mean over all elements
};

struct Expr;
using ExprPtr = std::shared_ptr<Expr>;

/// One node of the computation graph. Construction happens through the free
/// functions below which also run the forward kernel, so `value` is always
/// populated.
struct Expr {
    Op op = Op::Leaf;
    Tensor value;
    std::vector<ExprPtr> inputs;
    bool requires_grad = false;

    // Op payloads.
    double scalar = 0.0;
    std::vector<std::int64_t> rows;  // Gather/Scatter indices
    std::int64_t out_rows = 0;       // Scatter/Broadcast target row count
    std::string name;                // parameter identifier on leaves
};

/// parameter identifier -> gradient tensor (same shape as the parameter).
using Grad = std::map<std::string, Tensor>;

ExprPtr constant(Tensor value);
ExprPtr parameter(std::string name, Tensor value);

ExprPtr add(const ExprPtr& a, const ExprPtr& b);
ExprPtr sub(const ExprPtr& a, const ExprPtr& b);
ExprPtr mul(const ExprPtr& a, const ExprPtr& b);
ExprPtr scale(const ExprPtr& a, double c);
ExprPtr matmul(const ExprPtr& a, const ExprPtr& b);
ExprPtr matmul_nt(const ExprPtr& a, const ExprPtr& b);
ExprPtr softmax_rows(const ExprPtr& a);
ExprPtr tanh_map(const ExprPtr& a);
ExprPtr gather_rows(const ExprPtr& a, std::vector<std::int64_t> rows);
ExprPtr scatter_rows(const ExprPtr& a, std::vector<std::int64_t> rows,
                     std::int64_t out_rows);
ExprPtr broadcast_row(const ExprPtr& a, std::int64_t n);
ExprPtr mean_all(const ExprPtr& a);

/// softmax(q k^T / sqrt(d)) v as a composition of closed-set ops.
ExprPtr attention(const ExprPtr& q, const ExprPtr& k, const ExprPtr& v);

/// Reverse-mode gradients of a scalar loss with respect to the named
/// parameters. Parameters not reached by the loss get zero gradients.
Grad backward(const ExprPtr& loss, const std::vector<ExprPtr>& params);

}  // namespace layergen::num
