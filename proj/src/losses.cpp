#include "midol/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace midol {

Var routing_consistency_loss(const Var& student_routing, const DenseArray& teacher_routing,
                             std::size_t views) {
    if (views < 2) throw std::invalid_argument("routing_consistency_loss: need at least 2 views");
    const DenseArray& s = student_routing.value();
    if (!s.same_shape(teacher_routing))
        throw std::invalid_argument("routing_consistency_loss: student " + s.shape_string() +
                                    " and teacher " + teacher_routing.shape_string() +
                                    " routing differ in shape");
    if (s.rows() % views != 0)
        throw std::invalid_argument("routing_consistency_loss: rows not a multiple of views");
    const std::size_t images = s.rows() / views, experts = s.cols();

    // weight[b,j,i] = sum_{g != j} log aT[b,g,i]
    DenseArray weight(s.shape(), 0.0);
    std::vector<double> image_total(experts);
    for (std::size_t b = 0; b < images; ++b) {
        std::fill(image_total.begin(), image_total.end(), 0.0);
        for (std::size_t g = 0; g < views; ++g)
            for (std::size_t i = 0; i < experts; ++i)
                image_total[i] += std::log(std::max(teacher_routing(b * views + g, i), kRouteLogFloor));
        for (std::size_t j = 0; j < views; ++j)
            for (std::size_t i = 0; i < experts; ++i) {
                const double own = std::log(std::max(teacher_routing(b * views + j, i), kRouteLogFloor));
                weight(b * views + j, i) = image_total[i] - own;
            }
    }
    const double norm = 1.0 / (static_cast<double>(images) * static_cast<double>(views) *
                               static_cast<double>(views - 1));
    return scale(sum(hadamard(student_routing, Var::constant(std::move(weight)))), -norm);
}

Var intra_contrastive_loss_expert(const Var& student, const DenseArray& teacher,
                                  std::size_t views, double temperature) {
    if (!(temperature > 0.0))
        throw std::invalid_argument("intra_contrastive_loss_expert: temperature must be positive");
    if (views < 2) throw std::invalid_argument("intra_contrastive_loss_expert: need at least 2 views");
    if (!student.value().same_shape(teacher))
        throw std::invalid_argument("intra_contrastive_loss_expert: student " +
                                    student.value().shape_string() + " and teacher " +
                                    teacher.shape_string() + " differ in shape");
    const std::size_t n = student.rows();
    if (n == 0 || n % views != 0)
        throw std::invalid_argument("intra_contrastive_loss_expert: rows not a multiple of views");
    const std::size_t images = n / views;

    DenseArray positive = DenseArray::matrix(n, n);
    DenseArray candidate = DenseArray::matrix(n, n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t b = r / views, j = r % views;
        for (std::size_t c = 0; c < n; ++c) {
            const std::size_t beta = c / views, k = c % views;
            if (k == j) continue;
            candidate(r, c) = 1.0;
            if (beta == b) positive(r, c) = 1.0;
        }
    }

    Var sims = exp(scale(cosine_similarity_matrix(student, Var::constant(teacher)), 1.0 / temperature));
    Var ones = Var::constant(DenseArray::matrix(n, 1, 1.0));
    Var numerator = matmul(hadamard(sims, Var::constant(std::move(positive))), ones);
    Var denominator = matmul(hadamard(sims, Var::constant(std::move(candidate))), ones);
    Var log_ratio = subtract(log(numerator), log(denominator));
    return scale(sum(log_ratio), -1.0 / (static_cast<double>(images) * static_cast<double>(views)));
}

Var aggregate_contrastive_loss(std::span<const Var> per_expert, std::size_t experts) {
    if (experts == 0) throw std::invalid_argument("aggregate_contrastive_loss: zero experts");
    if (per_expert.size() > experts)
        throw std::invalid_argument("aggregate_contrastive_loss: more losses than experts");
    Var total;
    for (const Var& l : per_expert) {
        if (!l) continue;
        total = total ? add(total, l) : l;
    }
    if (!total) return Var::constant(DenseArray::scalar(0.0));
    return scale(total, 1.0 / static_cast<double>(experts));
}

LossBreakdown total_loss(double l_route, double l_cst) {
    if (!std::isfinite(l_route) || !std::isfinite(l_cst))
        throw std::domain_error("total_loss: non-finite component (l_route=" +
                                std::to_string(l_route) + ", l_cst=" + std::to_string(l_cst) + ")");
    return {l_route, l_cst, l_route + l_cst};
}

}  // namespace midol
