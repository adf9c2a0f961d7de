#include "midol/infodecomp.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "midol/rng.hpp"

namespace midol::info {

JointTable::JointTable(std::size_t nx, std::size_t ny, std::size_t nz, std::vector<double> probs)
    : dims_{nx, ny, nz}, probs_(std::move(probs)) {
    for (std::size_t d : dims_)
        if (d < 1 || d > kMaxCardinality)
            throw std::invalid_argument("JointTable: cardinality " + std::to_string(d) +
                                        " outside [1, 64]");
    if (probs_.size() != nx * ny * nz)
        throw std::invalid_argument("JointTable: expected " + std::to_string(nx * ny * nz) +
                                    " entries, got " + std::to_string(probs_.size()));
    double total = 0.0;
    for (double p : probs_) {
        if (!(p >= 0.0) || !std::isfinite(p))
            throw std::invalid_argument("JointTable: entries must be finite and non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument("JointTable: entries sum to " + std::to_string(total) +
                                    ", not 1");
}

Marginal marginalize(const JointTable& table, VarSet keep) {
    if (keep.empty()) throw std::invalid_argument("marginalize: empty keep-set");
    const auto& d = table.dims();
    const std::array<bool, 3> kept{keep.contains(Variable::X), keep.contains(Variable::Y),
                                   keep.contains(Variable::Z)};
    Marginal m;
    for (int a = 0; a < 3; ++a)
        if (kept[a]) m.dims.push_back(d[a]);
    std::size_t size = 1;
    for (std::size_t e : m.dims) size *= e;
    m.probs.assign(size, 0.0);

    for (std::size_t x = 0; x < d[0]; ++x)
        for (std::size_t y = 0; y < d[1]; ++y)
            for (std::size_t z = 0; z < d[2]; ++z) {
                const std::array<std::size_t, 3> idx{x, y, z};
                std::size_t flat = 0;
                for (int a = 0; a < 3; ++a)
                    if (kept[a]) flat = flat * d[a] + idx[a];
                m.probs[flat] += table(x, y, z);
            }
    return m;
}

double entropy(std::span<const double> dist) {
    double h = 0.0;
    for (double p : dist) {
        if (p < 0.0) throw std::invalid_argument("entropy: negative probability");
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

namespace {

double joint_entropy(const JointTable& table, VarSet vars) {
    return entropy(marginalize(table, vars).probs);
}

double raw_conditional_entropy(const JointTable& table, Variable target, VarSet given) {
    if (given.contains(target))
        throw std::invalid_argument("conditional_entropy: target is in the conditioning set");
    const double h_joint = joint_entropy(table, VarSet(target) | given);
    return given.empty() ? h_joint : h_joint - joint_entropy(table, given);
}

double raw_mutual_information(const JointTable& table, Variable a, VarSet b) {
    if (b.empty() || b.contains(a))
        throw std::invalid_argument("mutual_information: variable sets must be disjoint and non-empty");
    return joint_entropy(table, a) - raw_conditional_entropy(table, a, b);
}

}  // namespace

double conditional_entropy(const JointTable& table, Variable target, VarSet given) {
    return raw_conditional_entropy(table, target, given);
}

double mutual_information(const JointTable& table, Variable a, VarSet b) {
    const double mi = raw_mutual_information(table, a, b);
    return (mi < 0.0 && mi >= -1e-12) ? 0.0 : mi;
}

double trivariate_mi(const JointTable& table) {
    const auto& d = table.dims();
    const Marginal px = marginalize(table, Variable::X);
    const Marginal py = marginalize(table, Variable::Y);
    const Marginal pz = marginalize(table, Variable::Z);
    const Marginal pxy = marginalize(table, {Variable::X, Variable::Y});
    const Marginal pxz = marginalize(table, {Variable::X, Variable::Z});
    const Marginal pyz = marginalize(table, {Variable::Y, Variable::Z});

    double total = 0.0;
    for (std::size_t x = 0; x < d[0]; ++x)
        for (std::size_t y = 0; y < d[1]; ++y)
            for (std::size_t z = 0; z < d[2]; ++z) {
                const double p = table(x, y, z);
                if (p <= 0.0) continue;
                const double num = pxy.probs[x * d[1] + y] * pxz.probs[x * d[2] + z] *
                                   pyz.probs[y * d[2] + z];
                const double den = p * px.probs[x] * py.probs[y] * pz.probs[z];
                total += p * std::log(num / den);
            }
    return total;
}

DecompositionReport verify_decomposition(const JointTable& table) {
    using enum Variable;
    DecompositionReport r;
    r.h_x = joint_entropy(table, X);
    r.h_x_given_y = raw_conditional_entropy(table, X, Y);
    r.h_x_given_z = raw_conditional_entropy(table, X, Z);
    r.h_x_given_yz = raw_conditional_entropy(table, X, {Y, Z});
    r.i_xy = raw_mutual_information(table, X, Y);
    r.i_xz = raw_mutual_information(table, X, Z);
    r.i_x_yz = raw_mutual_information(table, X, {Y, Z});
    r.i_xyz = trivariate_mi(table);

    r.residual_mi_split = r.i_xyz - (r.i_xy + r.i_xz - r.i_x_yz);
    r.residual_entropy_form = r.i_xyz - (r.h_x - r.h_x_given_y - r.h_x_given_z + r.h_x_given_yz);
    r.residual_objective = (r.i_xy - r.i_xyz) - (r.h_x_given_z - r.h_x_given_yz);
    r.conditional_independence_gap = r.h_x_given_y - r.h_x_given_yz;
    return r;
}

JointTable random_table(std::uint64_t seed, std::size_t max_cardinality) {
    if (max_cardinality < 1 || max_cardinality > kMaxCardinality)
        throw std::invalid_argument("random_table: max cardinality must be in [1, 64]");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> card(1, max_cardinality);
    const std::size_t nx = card(rng), ny = card(rng), nz = card(rng);
    std::uniform_real_distribution<double> weight(0.0, 1.0);
    std::bernoulli_distribution zero(0.125);

    std::vector<double> w(nx * ny * nz);
    double total = 0.0;
    for (double& v : w) {
        v = zero(rng) ? 0.0 : weight(rng);
        total += v;
    }
    if (total == 0.0) {
        w[0] = 1.0;
        total = 1.0;
    }
    for (double& v : w) v /= total;
    return JointTable(nx, ny, nz, std::move(w));
}

SweepResult sweep_identities(std::size_t tables, std::size_t max_cardinality, std::uint64_t seed) {
    SweepResult out;
    for (std::size_t i = 0; i < tables; ++i) {
        const auto report = verify_decomposition(random_table(derive_seed(seed, i), max_cardinality));
        out.max_abs_residual_mi_split =
            std::max(out.max_abs_residual_mi_split, std::abs(report.residual_mi_split));
        out.max_abs_residual_entropy_form =
            std::max(out.max_abs_residual_entropy_form, std::abs(report.residual_entropy_form));
        out.max_abs_residual_objective =
            std::max(out.max_abs_residual_objective, std::abs(report.residual_objective));
        ++out.tables_checked;
    }
    return out;
}

JointTable xor_table() {
    std::vector<double> p(8, 0.0);
    for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t y = 0; y < 2; ++y) p[(x * 2 + y) * 2 + (x ^ y)] = 0.25;
    return JointTable(2, 2, 2, std::move(p));
}

}  // namespace midol::info
