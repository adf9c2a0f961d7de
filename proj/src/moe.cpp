#include "midol/moe.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace midol {

MoeParams init_moe(const MoeShape& shape, Rng& rng) {
    if (shape.experts < 2) throw std::invalid_argument("init_moe: need at least 2 experts");
    MoeParams p;
    // Router as a bias-free linear layer.
    p.router = init_linear(shape.features, shape.experts, rng).weight;
    p.experts.reserve(shape.experts);
    for (std::size_t i = 0; i < shape.experts; ++i) {
        ExpertParams e;
        e.up = init_linear(shape.features, shape.expert_hidden, rng);
        e.down = init_linear(shape.expert_hidden, shape.features, rng);
        p.experts.push_back(std::move(e));
    }
    p.projection = init_linear(shape.features, shape.output, rng);
    return p;
}

namespace {

template <typename Params, typename Out>
Out collect(Params& p, const std::string& prefix) {
    Out out;
    out.emplace_back(prefix + "router", &p.router);
    for (std::size_t i = 0; i < p.experts.size(); ++i) {
        const std::string e = prefix + "expert" + std::to_string(i) + ".";
        out.emplace_back(e + "up.weight", &p.experts[i].up.weight);
        out.emplace_back(e + "up.bias", &p.experts[i].up.bias);
        out.emplace_back(e + "down.weight", &p.experts[i].down.weight);
        out.emplace_back(e + "down.bias", &p.experts[i].down.bias);
    }
    out.emplace_back(prefix + "projection.weight", &p.projection.weight);
    out.emplace_back(prefix + "projection.bias", &p.projection.bias);
    return out;
}

void check_positive(const DenseArray& scores, std::size_t iters) {
    if (iters == 0) throw std::invalid_argument("sinkhorn_knopp: iters must be >= 1");
    if (scores.rows() < scores.cols())
        throw std::invalid_argument("sinkhorn_knopp: batch " + std::to_string(scores.rows()) +
                                    " smaller than expert count " +
                                    std::to_string(scores.cols()) +
                                    "; column targets are unattainable");
}

double resolve_col_target(const DenseArray& scores, const SinkhornOptions& o) {
    return o.col_target > 0.0 ? o.col_target
                              : o.row_target * static_cast<double>(scores.rows()) /
                                    static_cast<double>(scores.cols());
}

double log_sum_exp(const double* begin, std::size_t n, std::size_t stride) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, begin[i * stride]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(begin[i * stride] - mx);
    return mx + std::log(s);
}

}  // namespace

NamedParams named_params(MoeParams& params, const std::string& prefix) {
    return collect<MoeParams, NamedParams>(params, prefix);
}

ConstNamedParams named_params(const MoeParams& params, const std::string& prefix) {
    return collect<const MoeParams, ConstNamedParams>(params, prefix);
}

MoeVars bind(const MoeParams& params, bool trainable) {
    MoeVars v;
    v.router = trainable ? Var::parameter(params.router) : Var::constant(params.router);
    for (const auto& e : params.experts) {
        v.up.push_back(bind(e.up, trainable));
        v.down.push_back(bind(e.down, trainable));
    }
    v.projection = bind(params.projection, trainable);
    return v;
}

std::vector<Var> param_vars(const MoeVars& vars) {
    std::vector<Var> out{vars.router};
    for (std::size_t i = 0; i < vars.up.size(); ++i) {
        out.push_back(vars.up[i].weight);
        out.push_back(vars.up[i].bias);
        out.push_back(vars.down[i].weight);
        out.push_back(vars.down[i].bias);
    }
    out.push_back(vars.projection.weight);
    out.push_back(vars.projection.bias);
    return out;
}

RoutingMatrix route_student(const MoeVars& moe, const Var& features) {
    if (features.cols() != moe.router.rows())
        throw std::invalid_argument("route_student: feature width " +
                                    std::to_string(features.cols()) + " does not match router " +
                                    moe.router.value().shape_string());
    Var probs = softmax(matmul(features, moe.router), 1.0);
    return {probs.value(), RoutingMode::student_softmax, probs};
}

DenseArray sinkhorn_knopp(const DenseArray& scores, const SinkhornOptions& options) {
    check_positive(scores, options.iters);
    for (double v : scores.data())
        if (!(v > 0.0) || !std::isfinite(v))
            throw std::invalid_argument("sinkhorn_knopp: entries must be finite and positive");
    const double col_target = resolve_col_target(scores, options);
    const std::size_t rows = scores.rows(), cols = scores.cols();

    DenseArray a = scores;
    std::vector<double> col_sum(cols);
    for (std::size_t it = 0; it < options.iters; ++it) {
        std::fill(col_sum.begin(), col_sum.end(), 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) col_sum[c] += a(r, c);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) a(r, c) *= col_target / col_sum[c];
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (double v : a.row(r)) s += v;
            for (double& v : a.row(r)) v *= options.row_target / s;
        }
    }
    return a;
}

DenseArray sinkhorn_knopp_log(const DenseArray& log_scores, const SinkhornOptions& options) {
    check_positive(log_scores, options.iters);
    if (!log_scores.all_finite())
        throw std::invalid_argument("sinkhorn_knopp_log: non-finite log score");
    const double log_col = std::log(resolve_col_target(log_scores, options));
    const double log_row = std::log(options.row_target);
    const std::size_t rows = log_scores.rows(), cols = log_scores.cols();

    DenseArray l = log_scores;
    for (std::size_t it = 0; it < options.iters; ++it) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double shift = log_sum_exp(&l(0, c), rows, cols) - log_col;
            for (std::size_t r = 0; r < rows; ++r) l(r, c) -= shift;
        }
        for (std::size_t r = 0; r < rows; ++r) {
            const double shift = log_sum_exp(&l(r, 0), cols, 1) - log_row;
            for (double& v : l.row(r)) v -= shift;
        }
    }
    for (double& v : l.storage()) v = std::exp(v);
    return l;
}

RoutingMatrix route_teacher(const MoeParams& moe, const DenseArray& features, double epsilon,
                            std::size_t iters) {
    if (!(epsilon > 0.0))
        throw std::invalid_argument("route_teacher: epsilon must be positive");
    if (features.cols() != moe.feature_dim())
        throw std::invalid_argument("route_teacher: feature width " +
                                    std::to_string(features.cols()) + " does not match router " +
                                    moe.router.shape_string());
    DenseArray logits = matmul(features, moe.router);
    for (double& v : logits.storage()) v /= epsilon;
    return {sinkhorn_knopp_log(logits, {.iters = iters}), RoutingMode::teacher_sinkhorn, Var{}};
}

std::size_t select_expert(std::span<const double> routing_row) {
    if (routing_row.empty()) throw std::invalid_argument("select_expert: empty routing row");
    std::size_t best = 0;
    for (std::size_t i = 1; i < routing_row.size(); ++i)
        if (routing_row[i] > routing_row[best]) best = i;
    return best;
}

Var expert_forward(const MoeVars& moe, const Var& features, std::size_t index) {
    if (index >= moe.up.size())
        throw std::out_of_range("expert_forward: expert " + std::to_string(index) +
                                " out of range for " + std::to_string(moe.up.size()) + " experts");
    Var hidden = relu(linear_forward(moe.up[index], features));
    Var expert_out = linear_forward(moe.down[index], hidden);
    return l2_normalize_rows(linear_forward(moe.projection, expert_out));
}

DenseArray expert_apply(const MoeParams& moe, const DenseArray& features, std::size_t index) {
    if (index >= moe.expert_count())
        throw std::out_of_range("expert_apply: expert " + std::to_string(index) + " out of range");
    DenseArray h = linear_apply(moe.experts[index].up, features);
    for (double& v : h.storage()) v = v > 0.0 ? v : 0.0;
    DenseArray out = linear_apply(moe.projection, linear_apply(moe.experts[index].down, h));
    for (std::size_t r = 0; r < out.rows(); ++r) {
        double sq = 0.0;
        for (double v : out.row(r)) sq += v * v;
        const double d = std::max(std::sqrt(sq), kNormFloor);
        for (double& v : out.row(r)) v /= d;
    }
    return out;
}

std::vector<std::size_t> hard_routes(const MoeParams& moe, const DenseArray& features) {
    const DenseArray logits = matmul(features, moe.router);
    std::vector<std::size_t> out(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) out[r] = select_expert(logits.row(r));
    return out;
}

}  // namespace midol
