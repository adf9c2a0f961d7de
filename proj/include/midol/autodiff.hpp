#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "midol/dense_array.hpp"

namespace midol {

enum class OpTag {
    leaf,
    matmul,
    add,
    scale,
    exp,
    log,
    sum,
    mean,
    l2_normalize_rows,
    cosine_similarity_matrix,
    relu,
    softmax,
    hadamard,
    select_rows,
};

std::string_view op_name(OpTag tag);

namespace detail {
struct Node;
}

/// Handle to a node of a reverse-mode computation graph. Copies share the
/// node. A graph must be built and differentiated on a single thread.
class Var {
public:
    Var() = default;

    /// Leaf that accumulates a gradient during backward().
    static Var parameter(DenseArray value);
    /// Leaf with no gradient path. Wrapping a value this way is how a branch
    /// is detached (stop-gradient).
    static Var constant(DenseArray value);

    const DenseArray& value() const;
    /// Accumulated gradient, same shape as value(). Zero until backward() runs.
    const DenseArray& grad() const;
    void zero_grad();

    bool requires_grad() const;
    OpTag tag() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    explicit operator bool() const noexcept { return node_ != nullptr; }

    /// Constant leaf holding a copy of this node's value.
    Var detach() const { return constant(value()); }

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    static Var wrap(std::shared_ptr<detail::Node> node) { return Var(std::move(node)); }

private:
    explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

namespace detail {
struct Node {
    OpTag tag = OpTag::leaf;
    DenseArray value;
    DenseArray grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    // Pushes this node's grad into its parents' grads.
    std::function<void(Node&)> backward;
};
}  // namespace detail

// Primitives. All operate on rank-2 values; every result is checked for
// non-finite entries and throws std::domain_error if one appears.
Var matmul(const Var& a, const Var& b);
/// Elementwise a + b. `b` may also be a 1 x cols row, broadcast over rows.
Var add(const Var& a, const Var& b);
Var subtract(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var exp(const Var& a);
/// Requires strictly positive entries.
Var log(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
/// Rows divided by max(norm, kNormFloor).
Var l2_normalize_rows(const Var& a);
/// Row-wise cosine similarities of a (n x d) against b (m x d): an n x m matrix.
Var cosine_similarity_matrix(const Var& a, const Var& b);
Var relu(const Var& a);
/// Row-wise softmax of a / temperature, computed with max subtraction.
Var softmax(const Var& a, double temperature = 1.0);
Var hadamard(const Var& a, const Var& b);
Var select_rows(const Var& a, std::span<const std::size_t> rows);

inline constexpr double kNormFloor = 1e-12;

/// Reverse-mode accumulation from a one-element root. Gradients add onto
/// whatever is already stored, so calling twice without zero_grad() doubles
/// them.
void backward(const Var& root);

/// Max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
/// using central differences with step `eps`. `f` builds a scalar graph from
/// the leaf it is handed.
double grad_check(const std::function<Var(const Var&)>& f, const DenseArray& point,
                  double eps = 1e-6);

}  // namespace midol
