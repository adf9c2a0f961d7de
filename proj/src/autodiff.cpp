#include "midol/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace midol {

std::string_view op_name(OpTag tag) {
    switch (tag) {
        case OpTag::leaf: return "leaf";
        case OpTag::matmul: return "matmul";
        case OpTag::add: return "add";
        case OpTag::scale: return "scale";
        case OpTag::exp: return "exp";
        case OpTag::log: return "log";
        case OpTag::sum: return "sum";
        case OpTag::mean: return "mean";
        case OpTag::l2_normalize_rows: return "l2_normalize_rows";
        case OpTag::cosine_similarity_matrix: return "cosine_similarity_matrix";
        case OpTag::relu: return "relu";
        case OpTag::softmax: return "softmax";
        case OpTag::hadamard: return "hadamard";
        case OpTag::select_rows: return "select_rows";
    }
    return "unknown";
}

namespace {

using detail::Node;

Var make_leaf(DenseArray value, bool requires_grad) {
    if (value.rank() != 2)
        throw std::invalid_argument("graph values must be rank-2, got " + value.shape_string());
    auto node = std::make_shared<Node>();
    node->grad = DenseArray(value.shape(), 0.0);
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var::wrap(std::move(node));
}

Var make_node(OpTag tag, DenseArray value, std::vector<Var> parents,
              std::function<void(Node&)> backward_fn) {
    if (!value.all_finite())
        throw std::domain_error(std::string(op_name(tag)) + ": non-finite output");
    auto node = std::make_shared<Node>();
    node->tag = tag;
    node->grad = DenseArray(value.shape(), 0.0);
    node->value = std::move(value);
    node->requires_grad = std::any_of(parents.begin(), parents.end(),
                                      [](const Var& p) { return p.requires_grad(); });
    node->parents = std::move(parents);
    if (node->requires_grad) node->backward = std::move(backward_fn);
    return Var::wrap(std::move(node));
}

Node& node_of(const Var& v) {
    if (!v) throw std::invalid_argument("empty Var");
    return *v.node();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    a.value().shape_string() + " vs " + b.value().shape_string());
}

// Accumulate src into the parent's gradient if it tracks one.
void accumulate(const Var& parent, const DenseArray& src) {
    Node& p = node_of(parent);
    if (!p.requires_grad) return;
    auto& g = p.grad.storage();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

// Row normalization shared by l2_normalize_rows and cosine_similarity_matrix.
struct Normalized {
    DenseArray unit;
    std::vector<double> norms;
};

Normalized normalize_rows(const DenseArray& x) {
    Normalized out{DenseArray(x.shape(), 0.0), std::vector<double>(x.rows())};
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double sq = 0.0;
        for (double v : x.row(r)) sq += v * v;
        const double n = std::sqrt(sq);
        out.norms[r] = n;
        const double d = std::max(n, kNormFloor);
        auto src = x.row(r);
        auto dst = out.unit.row(r);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] = src[c] / d;
    }
    return out;
}

// Gradient of y = x / max(|x|, floor) per row, given dL/dy.
DenseArray normalize_rows_backward(const Normalized& fwd, const DenseArray& gy) {
    DenseArray gx(gy.shape(), 0.0);
    for (std::size_t r = 0; r < gy.rows(); ++r) {
        auto y = fwd.unit.row(r);
        auto g = gy.row(r);
        auto out = gx.row(r);
        const double n = fwd.norms[r];
        if (n > kNormFloor) {
            double dot = 0.0;
            for (std::size_t c = 0; c < g.size(); ++c) dot += y[c] * g[c];
            for (std::size_t c = 0; c < g.size(); ++c) out[c] = (g[c] - y[c] * dot) / n;
        } else {
            for (std::size_t c = 0; c < g.size(); ++c) out[c] = g[c] / kNormFloor;
        }
    }
    return gx;
}

}  // namespace

Var Var::parameter(DenseArray value) { return make_leaf(std::move(value), true); }
Var Var::constant(DenseArray value) { return make_leaf(std::move(value), false); }

const DenseArray& Var::value() const { return node_of(*this).value; }
const DenseArray& Var::grad() const { return node_of(*this).grad; }
void Var::zero_grad() { node_of(*this).grad.fill(0.0); }
bool Var::requires_grad() const { return node_of(*this).requires_grad; }
OpTag Var::tag() const { return node_of(*this).tag; }

Var matmul(const Var& a, const Var& b) {
    return make_node(OpTag::matmul, matmul(a.value(), b.value()), {a, b}, [](Node& self) {
        const Var& a = self.parents[0];
        const Var& b = self.parents[1];
        if (a.requires_grad()) accumulate(a, matmul_transposed(self.grad, b.value()));
        if (b.requires_grad()) accumulate(b, matmul(transpose(a.value()), self.grad));
    });
}

Var add(const Var& a, const Var& b) {
    const DenseArray& av = a.value();
    const DenseArray& bv = b.value();
    const bool broadcast = !av.same_shape(bv);
    if (broadcast && !(bv.rows() == 1 && bv.cols() == av.cols()))
        throw std::invalid_argument("add: shape mismatch " + av.shape_string() + " vs " +
                                    bv.shape_string());
    DenseArray out = av;
    for (std::size_t r = 0; r < av.rows(); ++r) {
        auto dst = out.row(r);
        auto src = broadcast ? bv.row(0) : bv.row(r);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
    return make_node(OpTag::add, std::move(out), {a, b}, [broadcast](Node& self) {
        accumulate(self.parents[0], self.grad);
        const Var& b = self.parents[1];
        if (!b.requires_grad()) return;
        if (!broadcast) {
            accumulate(b, self.grad);
            return;
        }
        DenseArray col_sums = DenseArray::matrix(1, self.grad.cols());
        for (std::size_t r = 0; r < self.grad.rows(); ++r)
            for (std::size_t c = 0; c < self.grad.cols(); ++c) col_sums(0, c) += self.grad(r, c);
        accumulate(b, col_sums);
    });
}

Var subtract(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var scale(const Var& a, double factor) {
    DenseArray out = a.value();
    for (double& v : out.storage()) v *= factor;
    return make_node(OpTag::scale, std::move(out), {a}, [factor](Node& self) {
        DenseArray g = self.grad;
        for (double& v : g.storage()) v *= factor;
        accumulate(self.parents[0], g);
    });
}

Var exp(const Var& a) {
    DenseArray out = a.value();
    for (double& v : out.storage()) v = std::exp(v);
    return make_node(OpTag::exp, std::move(out), {a}, [](Node& self) {
        DenseArray g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= self.value[i];
        accumulate(self.parents[0], g);
    });
}

Var log(const Var& a) {
    DenseArray out = a.value();
    for (double& v : out.storage()) {
        if (!(v > 0.0)) throw std::domain_error("log: non-positive input " + std::to_string(v));
        v = std::log(v);
    }
    return make_node(OpTag::log, std::move(out), {a}, [](Node& self) {
        const DenseArray& x = self.parents[0].value();
        DenseArray g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] /= x[i];
        accumulate(self.parents[0], g);
    });
}

Var sum(const Var& a) {
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    return make_node(OpTag::sum, DenseArray::scalar(total), {a}, [](Node& self) {
        DenseArray g(self.parents[0].value().shape(), self.grad[0]);
        accumulate(self.parents[0], g);
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    return make_node(OpTag::mean, DenseArray::scalar(total / n), {a}, [n](Node& self) {
        DenseArray g(self.parents[0].value().shape(), self.grad[0] / n);
        accumulate(self.parents[0], g);
    });
}

Var l2_normalize_rows(const Var& a) {
    auto fwd = std::make_shared<Normalized>(normalize_rows(a.value()));
    DenseArray out = fwd->unit;
    return make_node(OpTag::l2_normalize_rows, std::move(out), {a}, [fwd](Node& self) {
        accumulate(self.parents[0], normalize_rows_backward(*fwd, self.grad));
    });
}

Var cosine_similarity_matrix(const Var& a, const Var& b) {
    if (a.cols() != b.cols())
        throw std::invalid_argument("cosine_similarity_matrix: width mismatch " +
                                    a.value().shape_string() + " vs " + b.value().shape_string());
    auto na = std::make_shared<Normalized>(normalize_rows(a.value()));
    auto nb = std::make_shared<Normalized>(normalize_rows(b.value()));
    DenseArray out = matmul_transposed(na->unit, nb->unit);
    return make_node(OpTag::cosine_similarity_matrix, std::move(out), {a, b},
                     [na, nb](Node& self) {
                         const Var& a = self.parents[0];
                         const Var& b = self.parents[1];
                         if (a.requires_grad())
                             accumulate(a, normalize_rows_backward(*na, matmul(self.grad, nb->unit)));
                         if (b.requires_grad())
                             accumulate(b, normalize_rows_backward(
                                               *nb, matmul(transpose(self.grad), na->unit)));
                     });
}

Var relu(const Var& a) {
    DenseArray out = a.value();
    for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
    return make_node(OpTag::relu, std::move(out), {a}, [](Node& self) {
        const DenseArray& x = self.parents[0].value();
        DenseArray g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(x[i] > 0.0)) g[i] = 0.0;
        accumulate(self.parents[0], g);
    });
}

Var softmax(const Var& a, double temperature) {
    if (!(temperature > 0.0))
        throw std::invalid_argument("softmax: temperature must be positive, got " +
                                    std::to_string(temperature));
    const DenseArray& x = a.value();
    DenseArray out(x.shape(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto src = x.row(r);
        auto dst = out.row(r);
        const double mx = *std::max_element(src.begin(), src.end());
        double z = 0.0;
        for (std::size_t c = 0; c < src.size(); ++c) {
            dst[c] = std::exp((src[c] - mx) / temperature);
            z += dst[c];
        }
        for (double& v : dst) v /= z;
    }
    return make_node(OpTag::softmax, std::move(out), {a}, [temperature](Node& self) {
        DenseArray g(self.grad.shape(), 0.0);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            auto y = self.value.row(r);
            auto gy = self.grad.row(r);
            double dot = 0.0;
            for (std::size_t c = 0; c < y.size(); ++c) dot += y[c] * gy[c];
            auto out = g.row(r);
            for (std::size_t c = 0; c < y.size(); ++c)
                out[c] = y[c] * (gy[c] - dot) / temperature;
        }
        accumulate(self.parents[0], g);
    });
}

Var hadamard(const Var& a, const Var& b) {
    require_same_shape(a, b, "hadamard");
    DenseArray out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_node(OpTag::hadamard, std::move(out), {a, b}, [](Node& self) {
        for (int side = 0; side < 2; ++side) {
            const Var& target = self.parents[side];
            if (!target.requires_grad()) continue;
            const DenseArray& other = self.parents[1 - side].value();
            DenseArray g = self.grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= other[i];
            accumulate(target, g);
        }
    });
}

Var select_rows(const Var& a, std::span<const std::size_t> rows) {
    if (rows.empty()) throw std::invalid_argument("select_rows: empty row set");
    const DenseArray& x = a.value();
    DenseArray out = DenseArray::matrix(rows.size(), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= x.rows())
            throw std::invalid_argument("select_rows: row " + std::to_string(rows[r]) +
                                        " out of range for " + x.shape_string());
        std::copy_n(x.row(rows[r]).begin(), x.cols(), out.row(r).begin());
    }
    std::vector<std::size_t> index(rows.begin(), rows.end());
    return make_node(OpTag::select_rows, std::move(out), {a},
                     [index = std::move(index)](Node& self) {
                         const Var& a = self.parents[0];
                         DenseArray g(a.value().shape(), 0.0);
                         for (std::size_t r = 0; r < index.size(); ++r) {
                             auto src = self.grad.row(r);
                             auto dst = g.row(index[r]);
                             for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                         }
                         accumulate(a, g);
                     });
}

void backward(const Var& root) {
    Node& r = node_of(root);
    if (r.value.size() != 1)
        throw std::invalid_argument("backward: root must be scalar, got " +
                                    r.value.shape_string());
    if (!r.requires_grad) return;

    // Iterative post-order DFS over the gradient-carrying subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{&r, 0}};
    visited.insert(&r);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].node().get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients are scratch space; only leaves accumulate across calls.
    for (Node* n : order)
        if (n->tag != OpTag::leaf) n->grad.fill(0.0);
    r.grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);
}

double grad_check(const std::function<Var(const Var&)>& f, const DenseArray& point, double eps) {
    Var x = Var::parameter(point);
    Var root = f(x);
    backward(root);
    const DenseArray analytic = x.grad();

    auto eval = [&](const DenseArray& p) {
        const double v = f(Var::constant(p)).value().item();
        if (!std::isfinite(v))
            throw std::domain_error("grad_check: non-finite function value at perturbed point");
        return v;
    };

    double worst = 0.0;
    DenseArray probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + eps;
        const double up = eval(probe);
        probe[i] = point[i] - eps;
        const double down = eval(probe);
        probe[i] = point[i];
        const double numeric = (up - down) / (2.0 * eps);
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace midol
