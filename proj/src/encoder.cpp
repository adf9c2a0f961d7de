#include "midol/encoder.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace midol {

Linear init_linear(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Linear layer{DenseArray::matrix(in, out), DenseArray::matrix(1, out)};
    for (double& w : layer.weight.storage()) w = u(rng);
    for (double& b : layer.bias.storage()) b = u(rng);
    return layer;
}

LinearVars bind(const Linear& layer, bool trainable) {
    auto make = trainable ? &Var::parameter : &Var::constant;
    return {make(layer.weight), make(layer.bias)};
}

Var linear_forward(const LinearVars& layer, const Var& x) {
    return add(matmul(x, layer.weight), layer.bias);
}

DenseArray linear_apply(const Linear& layer, const DenseArray& x) {
    DenseArray out = matmul(x, layer.weight);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += layer.bias(0, c);
    return out;
}

MlpParams init_mlp(const MlpShape& shape, Rng& rng) {
    MlpParams p;
    p.hidden = init_linear(shape.input, shape.hidden, rng);
    p.output = init_linear(shape.hidden, shape.embedding, rng);
    return p;
}

NamedParams named_params(MlpParams& params, const std::string& prefix) {
    return {{prefix + "hidden.weight", &params.hidden.weight},
            {prefix + "hidden.bias", &params.hidden.bias},
            {prefix + "output.weight", &params.output.weight},
            {prefix + "output.bias", &params.output.bias}};
}

ConstNamedParams named_params(const MlpParams& params, const std::string& prefix) {
    return {{prefix + "hidden.weight", &params.hidden.weight},
            {prefix + "hidden.bias", &params.hidden.bias},
            {prefix + "output.weight", &params.output.weight},
            {prefix + "output.bias", &params.output.bias}};
}

MlpVars bind(const MlpParams& params, bool trainable) {
    return {bind(params.hidden, trainable), bind(params.output, trainable)};
}

std::vector<Var> param_vars(const MlpVars& vars) {
    return {vars.hidden.weight, vars.hidden.bias, vars.output.weight, vars.output.bias};
}

Var mlp_forward(const MlpVars& vars, const Var& input) {
    if (input.cols() != vars.hidden.weight.rows())
        throw std::invalid_argument("mlp_forward: input width " + std::to_string(input.cols()) +
                                    " does not match encoder input " +
                                    std::to_string(vars.hidden.weight.rows()));
    return linear_forward(vars.output, relu(linear_forward(vars.hidden, input)));
}

Var mlp_forward(const MlpParams& params, const DenseArray& input, bool differentiable) {
    if (input.rank() != 2 || input.cols() != params.input_dim())
        throw std::invalid_argument("mlp_forward: input " + input.shape_string() +
                                    " does not match encoder input " +
                                    std::to_string(params.input_dim()));
    if (differentiable) return mlp_forward(bind(params, true), Var::constant(input));

    DenseArray h = linear_apply(params.hidden, input);
    for (double& v : h.storage()) v = v > 0.0 ? v : 0.0;
    return Var::constant(linear_apply(params.output, h));
}

double momentum_at(const MomentumSchedule& schedule, std::size_t step) {
    if (step > schedule.total_steps)
        throw std::out_of_range("momentum_at: step " + std::to_string(step) + " beyond " +
                                std::to_string(schedule.total_steps));
    const double t = static_cast<double>(step) / static_cast<double>(schedule.total_steps);
    return schedule.final -
           (schedule.final - schedule.base) * (std::cos(std::numbers::pi * t) + 1.0) / 2.0;
}

void ema_update(NamedParams teacher, const ConstNamedParams& student, double momentum) {
    if (!(momentum >= 0.0 && momentum <= 1.0))
        throw std::invalid_argument("ema_update: momentum must lie in [0, 1]");
    if (teacher.size() != student.size())
        throw std::invalid_argument("ema_update: parameter count mismatch");
    for (std::size_t i = 0; i < teacher.size(); ++i)
        if (!teacher[i].second->same_shape(*student[i].second))
            throw std::invalid_argument("ema_update: shape mismatch at " + teacher[i].first);
    for (std::size_t i = 0; i < teacher.size(); ++i) {
        auto& t = teacher[i].second->storage();
        const auto& s = student[i].second->storage();
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = momentum * t[k] + (1.0 - momentum) * s[k];
    }
}

void ema_update(MlpParams& teacher, const MlpParams& student, double momentum) {
    ema_update(named_params(teacher, ""), named_params(student, ""), momentum);
}

}  // namespace midol
