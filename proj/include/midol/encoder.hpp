#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "midol/autodiff.hpp"
#include "midol/dense_array.hpp"
#include "midol/rng.hpp"

namespace midol {

/// Affine map x W + b with W in x out and b 1 x out.
struct Linear {
    DenseArray weight;
    DenseArray bias;

    std::size_t in() const { return weight.rows(); }
    std::size_t out() const { return weight.cols(); }
};

/// Weights and biases drawn from U(-1/sqrt(in), 1/sqrt(in)).
Linear init_linear(std::size_t in, std::size_t out, Rng& rng);

struct LinearVars {
    Var weight;
    Var bias;
};

LinearVars bind(const Linear& layer, bool trainable);
Var linear_forward(const LinearVars& layer, const Var& x);
/// Out-of-graph x W + b.
DenseArray linear_apply(const Linear& layer, const DenseArray& x);

/// Named, ordered view of every parameter array of a model. Used for the
/// optimizer, EMA and checkpointing so all three agree on the order.
using NamedParams = std::vector<std::pair<std::string, DenseArray*>>;
using ConstNamedParams = std::vector<std::pair<std::string, const DenseArray*>>;

struct MlpShape {
    std::size_t input = 32;
    std::size_t hidden = 64;
    std::size_t embedding = 16;
};

/// Two-layer perceptron, input -> relu(hidden) -> embedding.
struct MlpParams {
    Linear hidden;
    Linear output;

    std::size_t input_dim() const { return hidden.in(); }
    std::size_t embedding_dim() const { return output.out(); }
};

MlpParams init_mlp(const MlpShape& shape, Rng& rng);
NamedParams named_params(MlpParams& params, const std::string& prefix);
ConstNamedParams named_params(const MlpParams& params, const std::string& prefix);

struct MlpVars {
    LinearVars hidden;
    LinearVars output;
};

MlpVars bind(const MlpParams& params, bool trainable);
std::vector<Var> param_vars(const MlpVars& vars);

Var mlp_forward(const MlpVars& vars, const Var& input);
/// With `differentiable` off the result is a constant leaf: nothing upstream
/// of it can receive gradient.
Var mlp_forward(const MlpParams& params, const DenseArray& input, bool differentiable);

/// Cosine-annealed EMA momentum rising from `base` at step 0 to `final` at
/// `total_steps`.
struct MomentumSchedule {
    double base = 0.996;
    double final = 1.0;
    std::size_t total_steps = 1;
};

double momentum_at(const MomentumSchedule& schedule, std::size_t step);

/// teacher <- momentum * teacher + (1 - momentum) * student, array by array.
void ema_update(NamedParams teacher, const ConstNamedParams& student, double momentum);
void ema_update(MlpParams& teacher, const MlpParams& student, double momentum);

}  // namespace midol
