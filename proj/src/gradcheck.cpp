#include "midol/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <utility>

#include "midol/autodiff.hpp"
#include "midol/losses.hpp"
#include "midol/moe.hpp"
#include "midol/rng.hpp"

namespace midol {

namespace {

DenseArray uniform(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    DenseArray a = DenseArray::matrix(r, c);
    for (double& v : a.storage()) v = u(rng);
    return a;
}

// Keeps every coordinate at least `gap` away from zero so relu's kink is
// never straddled by a finite difference.
DenseArray away_from_zero(std::size_t r, std::size_t c, Rng& rng, double gap) {
    DenseArray a = uniform(r, c, rng);
    for (double& v : a.storage())
        if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
    return a;
}

using Builder = std::function<std::pair<std::function<Var(const Var&)>, DenseArray>(Rng&)>;

struct Case {
    const char* op;
    Builder build;
};

constexpr std::size_t kImages = 2, kViews = 2, kExperts = 2, kFeatures = 4;

MoeParams micro_moe(Rng& rng) {
    return init_moe(MoeShape{kFeatures, 6, 4, kExperts}, rng);
}

std::vector<Case> cases() {
    std::vector<Case> out;
    out.push_back({"matmul", [](Rng& rng) {
        auto w = Var::constant(uniform(4, 3, rng));
        auto c = Var::constant(uniform(3, 3, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(matmul(x, w), c));
                         }),
                         uniform(3, 4, rng)};
    }});
    out.push_back({"matmul_right", [](Rng& rng) {
        auto a = Var::constant(uniform(3, 4, rng));
        auto c = Var::constant(uniform(3, 2, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(matmul(a, x), c));
                         }),
                         uniform(4, 2, rng)};
    }});
    out.push_back({"add", [](Rng& rng) {
        auto b = Var::constant(uniform(1, 4, rng));
        auto c = Var::constant(uniform(3, 4, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(exp(add(x, b)), c));
                         }),
                         uniform(3, 4, rng)};
    }});
    out.push_back({"add_broadcast", [](Rng& rng) {
        auto a = Var::constant(uniform(3, 4, rng));
        auto c = Var::constant(uniform(3, 4, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(exp(add(a, x)), c));
                         }),
                         uniform(1, 4, rng)};
    }});
    out.push_back({"subtract", [](Rng& rng) {
        auto b = Var::constant(uniform(3, 4, rng));
        auto c = Var::constant(uniform(3, 4, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(exp(subtract(b, x)), c));
                         }),
                         uniform(3, 4, rng)};
    }});
    out.push_back({"scale", [](Rng& rng) {
        auto c = Var::constant(uniform(3, 4, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(exp(scale(x, -1.7)), c));
                         }),
                         uniform(3, 4, rng)};
    }});
    out.push_back({"exp", [](Rng& rng) {
        auto c = Var::constant(uniform(3, 4, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(exp(x), c));
                         }),
                         uniform(3, 4, rng)};
    }});
    out.push_back({"log", [](Rng& rng) {
        auto c = Var::constant(uniform(3, 4, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(log(x), c));
                         }),
                         uniform(3, 4, rng, 0.2, 2.0)};
    }});
    out.push_back({"sum", [](Rng& rng) {
        return std::pair{std::function<Var(const Var&)>([](const Var& x) {
                             return exp(scale(sum(x), 0.3));
                         }),
                         uniform(3, 4, rng)};
    }});
    out.push_back({"mean", [](Rng& rng) {
        return std::pair{std::function<Var(const Var&)>([](const Var& x) {
                             return exp(mean(hadamard(x, x)));
                         }),
                         uniform(3, 4, rng)};
    }});
    out.push_back({"l2_normalize_rows", [](Rng& rng) {
        auto c = Var::constant(uniform(3, 4, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(l2_normalize_rows(x), c));
                         }),
                         uniform(3, 4, rng)};
    }});
    out.push_back({"cosine_similarity_matrix", [](Rng& rng) {
        auto b = Var::constant(uniform(5, 4, rng));
        auto c = Var::constant(uniform(3, 5, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(cosine_similarity_matrix(x, b), c));
                         }),
                         uniform(3, 4, rng)};
    }});
    out.push_back({"cosine_similarity_matrix_right", [](Rng& rng) {
        auto a = Var::constant(uniform(3, 4, rng));
        auto c = Var::constant(uniform(3, 5, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(cosine_similarity_matrix(a, x), c));
                         }),
                         uniform(5, 4, rng)};
    }});
    out.push_back({"cosine_similarity_matrix_self", [](Rng& rng) {
        auto c = Var::constant(uniform(4, 4, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(cosine_similarity_matrix(x, x), c));
                         }),
                         uniform(4, 4, rng)};
    }});
    out.push_back({"relu", [](Rng& rng) {
        auto c = Var::constant(uniform(3, 4, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(relu(x), c));
                         }),
                         away_from_zero(3, 4, rng, 1e-3)};
    }});
    out.push_back({"softmax", [](Rng& rng) {
        auto c = Var::constant(uniform(3, 4, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(hadamard(softmax(x, 0.5), c));
                         }),
                         uniform(3, 4, rng)};
    }});
    out.push_back({"hadamard", [](Rng& rng) {
        auto b = Var::constant(uniform(3, 4, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return sum(exp(hadamard(x, b)));
                         }),
                         uniform(3, 4, rng)};
    }});
    out.push_back({"select_rows", [](Rng& rng) {
        auto c = Var::constant(uniform(4, 3, rng));
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             const std::size_t rows[] = {2, 0, 2, 1};
                             return sum(hadamard(exp(select_rows(x, rows)), c));
                         }),
                         uniform(3, 3, rng)};
    }});
    out.push_back({"l_route", [](Rng& rng) {
        const MoeParams moe = micro_moe(rng);
        const MoeVars vars = bind(moe, false);
        DenseArray teacher_logits = uniform(kImages * kViews, kExperts, rng, -2.0, 2.0);
        const DenseArray teacher = sinkhorn_knopp_log(teacher_logits);
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             return routing_consistency_loss(route_student(vars, x).node, teacher,
                                                             kViews);
                         }),
                         uniform(kImages * kViews, kFeatures, rng)};
    }});
    out.push_back({"l_cst", [](Rng& rng) {
        const MoeParams moe = micro_moe(rng);
        const MoeVars vars = bind(moe, false);
        const DenseArray teacher_in = uniform(kImages * kViews, kFeatures, rng);
        // Both images on student expert 0; the teacher picked expert 0 for
        // image 0 and expert 1 for image 1.
        const DenseArray t0 = expert_apply(moe, teacher_in, 0);
        const DenseArray t1 = expert_apply(moe, teacher_in, 1);
        DenseArray y = t0;
        for (std::size_t r = kViews; r < y.rows(); ++r)
            std::copy_n(t1.row(r).begin(), y.cols(), y.row(r).begin());
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             std::vector<Var> per(kExperts);
                             per[0] = intra_contrastive_loss_expert(expert_forward(vars, x, 0), y,
                                                                    kViews);
                             return aggregate_contrastive_loss(per, kExperts);
                         }),
                         uniform(kImages * kViews, kFeatures, rng)};
    }});
    out.push_back({"l_cst_shared_expert", [](Rng& rng) {
        const MoeParams moe = micro_moe(rng);
        const MoeVars vars = bind(moe, false);
        const DenseArray y = expert_apply(moe, uniform(kImages * kViews, kFeatures, rng), 1);
        return std::pair{std::function<Var(const Var&)>([=](const Var& x) {
                             // both images on expert 1, expert 0 empty
                             std::vector<Var> per(kExperts);
                             per[1] = intra_contrastive_loss_expert(expert_forward(vars, x, 1), y,
                                                                    kViews);
                             return aggregate_contrastive_loss(per, kExperts);
                         }),
                         uniform(kImages * kViews, kFeatures, rng)};
    }});
    return out;
}

}  // namespace

std::vector<GradcheckRow> gradcheck_sweep(std::uint64_t seed, std::size_t points) {
    std::vector<GradcheckRow> rows;
    for (const Case& c : cases()) {
        Rng rng(derive_seed(seed, c.op));
        GradcheckRow row{c.op, 0.0, points, false};
        for (std::size_t p = 0; p < points; ++p) {
            auto [f, point] = c.build(rng);
            row.max_rel_error = std::max(row.max_rel_error, grad_check(f, point));
        }
        row.pass = row.max_rel_error < kGradcheckTolerance;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace midol
