#include "layergen/autodiff.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "layergen/errors.hpp"

namespace layergen::num {

ExprPtr constant(Tensor value) {
    auto e = std::make_shared<Expr>();
    e->value = std::move(value);
    return e;
}

ExprPtr parameter(std::string name, Tensor value) {
    auto e = std::make_shared<Expr>();
    e->value = std::move(value);
    e->requires_grad = true;
    e->name = std::move(name);
    return e;
}

static ExprPtr node(Op op, Tensor value, std::vector<ExprPtr> inputs) {
    auto e = std::make_shared<Expr>();
    e->op = op;
    e->value = std::move(value);
    for (const auto& in : inputs)
        if (in->requires_grad) e->requires_grad = true;
    e->inputs = std::move(inputs);
    return e;
}

ExprPtr add(const ExprPtr& a, const ExprPtr& b) {
    return node(Op::Add, num::add(a->value, b->value), {a, b});
}
ExprPtr sub(const ExprPtr& a, const ExprPtr& b) {
    return node(Op::Sub, num::sub(a->value, b->value), {a, b});
}
ExprPtr mul(const ExprPtr& a, const ExprPtr& b) {
    return node(Op::Mul, num::mul(a->value, b->value), {a, b});
}
ExprPtr scale(const ExprPtr& a, double c) {
    auto e = node(Op::Scale, num::scale(a->value, c), {a});
    e->scalar = c;
    return e;
}
ExprPtr matmul(const ExprPtr& a, const ExprPtr& b) {
    return node(Op::Matmul, num::matmul(a->value, b->value), {a, b});
}
ExprPtr matmul_nt(const ExprPtr& a, const ExprPtr& b) {
    return node(Op::MatmulNT, num::matmul_nt(a->value, b->value), {a, b});
}
ExprPtr softmax_rows(const ExprPtr& a) {
    return node(Op::Softmax, num::softmax_rows(a->value), {a});
}
ExprPtr tanh_map(const ExprPtr& a) {
    return node(Op::Tanh, num::tanh_map(a->value), {a});
}
ExprPtr gather_rows(const ExprPtr& a, std::vector<std::int64_t> rows) {
    auto e = node(Op::Gather, num::gather_rows(a->value, rows), {a});
    e->rows = std::move(rows);
    return e;
}
ExprPtr scatter_rows(const ExprPtr& a, std::vector<std::int64_t> rows,
                     std::int64_t out_rows) {
    auto e = node(Op::Scatter, num::scatter_rows(a->value, rows, out_rows), {a});
    e->rows = std::move(rows);
    e->out_rows = out_rows;
    return e;
}
ExprPtr broadcast_row(const ExprPtr& a, std::int64_t n) {
    auto e = node(Op::Broadcast, num::broadcast_row(a->value, n), {a});
    e->out_rows = n;
    return e;
}
ExprPtr mean_all(const ExprPtr& a) {
    return node(Op::MeanAll, Tensor({1}, {num::mean_all(a->value)}), {a});
}

ExprPtr attention(const ExprPtr& q, const ExprPtr& k, const ExprPtr& v) {
    const std::int64_t d = q->value.cols();
    if (d < 1 || k->value.rows() < 1)
        throw DimensionError("attention: need d >= 1 and at least one key row");
    if (k->value.cols() != d || v->value.rows() != k->value.rows())
        throw DimensionError("attention: inconsistent shapes q" + q->value.shape_str() +
                             " k" + k->value.shape_str() + " v" + v->value.shape_str());
    auto scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
    return matmul(softmax_rows(scores), v);
}

namespace {

void topo_sort(const ExprPtr& root, std::vector<Expr*>& order) {
    std::unordered_set<Expr*> seen;
    // Iterative DFS: graphs for long prompts can be deep.
    std::vector<std::pair<Expr*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [e, next] = stack.back();
        if (next < e->inputs.size()) {
            Expr* child = e->inputs[next++].get();
            if (seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(e);
            stack.pop_back();
        }
    }
}

struct GradStore {
    std::unordered_map<Expr*, Tensor> grads;

    void accumulate(Expr* e, Tensor g) {
        auto it = grads.find(e);
        if (it == grads.end()) {
            grads.emplace(e, std::move(g));
        } else {
            it->second = num::add(it->second, g);
        }
    }
    const Tensor* find(Expr* e) const {
        auto it = grads.find(e);
        return it == grads.end() ? nullptr : &it->second;
    }
};

void backprop_node(Expr* e, const Tensor& g, GradStore& store) {
    auto wants = [](const ExprPtr& in) { return in->requires_grad; };
    switch (e->op) {
        case Op::Leaf:
            break;
        case Op::Add:
            if (wants(e->inputs[0])) store.accumulate(e->inputs[0].get(), g);
            if (wants(e->inputs[1])) store.accumulate(e->inputs[1].get(), g);
            break;
        case Op::Sub:
            if (wants(e->inputs[0])) store.accumulate(e->inputs[0].get(), g);
            if (wants(e->inputs[1])) store.accumulate(e->inputs[1].get(), num::scale(g, -1.0));
            break;
        case Op::Mul:
            if (wants(e->inputs[0]))
                store.accumulate(e->inputs[0].get(), num::mul(g, e->inputs[1]->value));
            if (wants(e->inputs[1]))
                store.accumulate(e->inputs[1].get(), num::mul(g, e->inputs[0]->value));
            break;
        case Op::Scale:
            if (wants(e->inputs[0])) store.accumulate(e->inputs[0].get(), num::scale(g, e->scalar));
            break;
        case Op::Matmul:
            // out = A B: dA = G B^T, dB = A^T G
            if (wants(e->inputs[0]))
                store.accumulate(e->inputs[0].get(), num::matmul_nt(g, e->inputs[1]->value));
            if (wants(e->inputs[1]))
                store.accumulate(e->inputs[1].get(), num::matmul_tn(e->inputs[0]->value, g));
            break;
        case Op::MatmulNT:
            // out = A B^T: dA = G B, dB = G^T A
            if (wants(e->inputs[0]))
                store.accumulate(e->inputs[0].get(), num::matmul(g, e->inputs[1]->value));
            if (wants(e->inputs[1]))
                store.accumulate(e->inputs[1].get(), num::matmul_tn(g, e->inputs[0]->value));
            break;
        case Op::Softmax: {
            if (!wants(e->inputs[0])) break;
            const Tensor& s = e->value;
            Tensor gx = s;  // gx_ij = s_ij * (g_ij - sum_j g_ij s_ij)
            const std::int64_t m = s.rows(), n = s.cols();
            for (std::int64_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::int64_t j = 0; j < n; ++j) dot += g.at2(i, j) * s.at2(i, j);
                for (std::int64_t j = 0; j < n; ++j)
                    gx.at2(i, j) = s.at2(i, j) * (g.at2(i, j) - dot);
            }
            store.accumulate(e->inputs[0].get(), std::move(gx));
            break;
        }
        case Op::Tanh: {
            if (!wants(e->inputs[0])) break;
            Tensor gx = g;
            for (std::int64_t i = 0; i < gx.size(); ++i)
                gx[i] *= 1.0 - e->value[i] * e->value[i];
            store.accumulate(e->inputs[0].get(), std::move(gx));
            break;
        }
        case Op::Gather:
            if (wants(e->inputs[0]))
                store.accumulate(e->inputs[0].get(),
                                 num::scatter_rows(g, e->rows, e->inputs[0]->value.rows()));
            break;
        case Op::Scatter:
            if (wants(e->inputs[0]))
                store.accumulate(e->inputs[0].get(), num::gather_rows(g, e->rows));
            break;
        case Op::Broadcast: {
            if (!wants(e->inputs[0])) break;
            const std::int64_t n = g.rows(), c = g.cols();
            Tensor gx({1, c});
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < c; ++j) gx.at2(0, j) += g.at2(i, j);
            store.accumulate(e->inputs[0].get(), std::move(gx));
            break;
        }
        case Op::MeanAll: {
            if (!wants(e->inputs[0])) break;
            const Tensor& in = e->inputs[0]->value;
            store.accumulate(
                e->inputs[0].get(),
                Tensor::full(in.shape(), g[0] / static_cast<double>(in.size())));
            break;
        }
        default:
            throw UnsupportedOperationError(
                "backward: operation outside the closed op set (code " +
                std::to_string(static_cast<int>(e->op)) + ")");
    }
}

}  // namespace

Grad backward(const ExprPtr& loss, const std::vector<ExprPtr>& params) {
    if (loss->value.size() != 1)
        throw DimensionError("backward: loss must be scalar, got " + loss->value.shape_str());
    std::vector<Expr*> order;
    topo_sort(loss, order);

    GradStore store;
    store.accumulate(loss.get(), Tensor::full(loss->value.shape(), 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Expr* e = *it;
        if (!e->requires_grad) continue;
        const Tensor* g = store.find(e);
        if (g == nullptr) continue;  // not on any path from the loss
        const Tensor grad_copy = *g;  // accumulate() may rehash the store
        backprop_node(e, grad_copy, store);
    }

    Grad out;
    for (const auto& p : params) {
        if (p->name.empty())
            throw ConfigurationError("backward: parameter without identifier");
        const Tensor* g = store.find(p.get());
        out[p->name] = g ? *g : Tensor::zeros(p->value.shape());
    }
    return out;
}

}  // namespace layergen::num
