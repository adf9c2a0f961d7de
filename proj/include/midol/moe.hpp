#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "midol/autodiff.hpp"
#include "midol/dense_array.hpp"
#include "midol/encoder.hpp"
#include "midol/rng.hpp"

namespace midol {

struct MoeShape {
    std::size_t features = 16;       // encoder embedding width
    std::size_t expert_hidden = 32;
    std::size_t output = 16;
    std::size_t experts = 5;
};

/// Feed-forward expert: features -> relu(hidden) -> features.
struct ExpertParams {
    Linear up;
    Linear down;
};

/// Router (bias-free linear layer), N experts and the shared output projection.
struct MoeParams {
    DenseArray router;  // features x experts
    std::vector<ExpertParams> experts;
    Linear projection;  // features -> output

    std::size_t expert_count() const { return experts.size(); }
    std::size_t feature_dim() const { return router.rows(); }
    std::size_t output_dim() const { return projection.out(); }
};

MoeParams init_moe(const MoeShape& shape, Rng& rng);
NamedParams named_params(MoeParams& params, const std::string& prefix);
ConstNamedParams named_params(const MoeParams& params, const std::string& prefix);

struct MoeVars {
    Var router;
    std::vector<LinearVars> up;
    std::vector<LinearVars> down;
    LinearVars projection;
};

MoeVars bind(const MoeParams& params, bool trainable);
/// Same order as named_params().
std::vector<Var> param_vars(const MoeVars& vars);

enum class RoutingMode { student_softmax, teacher_sinkhorn };

struct RoutingMatrix {
    DenseArray scores;  // batch x experts
    RoutingMode mode = RoutingMode::student_softmax;
    Var node;           // graph node for the student branch, empty for the teacher

    std::size_t batch() const { return scores.rows(); }
    std::size_t experts() const { return scores.cols(); }
};

/// Softmax over router logits; gradient reaches the router and the features.
RoutingMatrix route_student(const MoeVars& moe, const Var& features);

struct SinkhornOptions {
    std::size_t iters = 3;
    double row_target = 1.0;
    double col_target = 0.0;  // 0 selects rows / cols
};

/// Alternating column then row normalization, `iters` rounds, ending on the
/// rows. Throws on non-positive entries, iters == 0 or fewer rows than columns.
DenseArray sinkhorn_knopp(const DenseArray& scores, const SinkhornOptions& options = {});

/// The same iteration applied to exp(log_scores), carried out on logarithms
/// so that very peaked scores neither overflow nor underflow mid-iteration.
DenseArray sinkhorn_knopp_log(const DenseArray& log_scores, const SinkhornOptions& options = {});

/// Balanced teacher routing: Sinkhorn over exp(features * router / epsilon).
/// Never part of a gradient graph.
RoutingMatrix route_teacher(const MoeParams& moe, const DenseArray& features, double epsilon,
                            std::size_t iters = 3);

/// Top-1 expert: argmax, lowest index on ties.
std::size_t select_expert(std::span<const double> routing_row);

/// l(expert_index(features)) with unit-norm rows. Rows whose norm is below
/// kNormFloor come out as zero vectors.
Var expert_forward(const MoeVars& moe, const Var& features, std::size_t index);
DenseArray expert_apply(const MoeParams& moe, const DenseArray& features, std::size_t index);

/// Rows of the router logits argmax'd, for deterministic evaluation without
/// batch balancing.
std::vector<std::size_t> hard_routes(const MoeParams& moe, const DenseArray& features);

}  // namespace midol
