#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "midol/autodiff.hpp"
#include "midol/dense_array.hpp"

namespace midol {

inline constexpr double kRouteLogFloor = 1e-9;
inline constexpr double kDefaultTemperature = 0.04;

/// Everything the losses need from one forward pass over a batch of B images
/// with M views each. All row-indexed arrays are image-major: row b * M + j
/// is view j of image b.
struct ViewBundle {
    std::size_t images = 0;
    std::size_t views = 0;
    Var student_routing;            // (B*M) x N softmax rows, differentiable
    DenseArray teacher_routing;     // (B*M) x N Sinkhorn rows, detached
    std::vector<std::size_t> student_expert;  // per image
    std::vector<std::size_t> teacher_expert;  // per image
    // Per expert: the images routed there (student selection) and the
    // matching student / teacher embedding rows, image-major.
    std::vector<std::vector<std::size_t>> members;
    std::vector<Var> student_embeddings;
    std::vector<DenseArray> teacher_embeddings;
};

/// Negative cross-view routing agreement,
///   -(1 / (B M (M-1))) sum_b sum_j sum_{g != j} sum_i aS[b,j,i] log aT[b,g,i],
/// with teacher probabilities floored at 1e-9 before the log.
Var routing_consistency_loss(const Var& student_routing, const DenseArray& teacher_routing,
                             std::size_t views);

/// Multi-positive InfoNCE inside one expert subspace. `student` and `teacher`
/// hold |B_i| * M unit rows each; the teacher side is treated as constant.
/// Positives for view j of image b are the other views k != j of the same
/// image; the denominator sums k != j over every image routed here.
Var intra_contrastive_loss_expert(const Var& student, const DenseArray& teacher,
                                  std::size_t views, double temperature = kDefaultTemperature);

/// Mean over `experts` subspaces. Empty entries (experts with no images)
/// contribute zero but still count in the divisor.
Var aggregate_contrastive_loss(std::span<const Var> per_expert, std::size_t experts);

struct LossBreakdown {
    double l_route = 0.0;
    double l_cst = 0.0;
    double total = 0.0;
};

LossBreakdown total_loss(double l_route, double l_cst);

}  // namespace midol
