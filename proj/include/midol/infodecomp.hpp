#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace midol::info {

enum class Variable : std::uint8_t { X = 1, Y = 2, Z = 4 };

/// Bitmask over {X, Y, Z}.
class VarSet {
public:
    constexpr VarSet() = default;
    constexpr VarSet(Variable v) : bits_(static_cast<std::uint8_t>(v)) {}  // NOLINT
    constexpr VarSet(std::initializer_list<Variable> vs) {
        for (Variable v : vs) bits_ |= static_cast<std::uint8_t>(v);
    }
    constexpr bool contains(Variable v) const { return bits_ & static_cast<std::uint8_t>(v); }
    constexpr bool empty() const { return bits_ == 0; }
    constexpr bool overlaps(VarSet o) const { return (bits_ & o.bits_) != 0; }
    constexpr VarSet operator|(VarSet o) const { return from_bits(bits_ | o.bits_); }
    constexpr std::uint8_t bits() const { return bits_; }

private:
    static constexpr VarSet from_bits(int b) {
        VarSet s;
        s.bits_ = static_cast<std::uint8_t>(b);
        return s;
    }
    std::uint8_t bits_ = 0;
};

inline constexpr std::size_t kMaxCardinality = 64;

/// Exact joint distribution p(x, y, z) over three finite alphabets.
class JointTable {
public:
    /// Throws std::invalid_argument unless every cardinality is in [1, 64],
    /// entries are non-negative and they sum to 1 within 1e-12.
    JointTable(std::size_t nx, std::size_t ny, std::size_t nz, std::vector<double> probs);

    double operator()(std::size_t x, std::size_t y, std::size_t z) const {
        return probs_[(x * dims_[1] + y) * dims_[2] + z];
    }
    const std::array<std::size_t, 3>& dims() const noexcept { return dims_; }
    std::span<const double> probs() const noexcept { return probs_; }

private:
    std::array<std::size_t, 3> dims_;
    std::vector<double> probs_;
};

/// Distribution over a subset of variables, axes kept in X, Y, Z order.
struct Marginal {
    std::vector<std::size_t> dims;
    std::vector<double> probs;
};

Marginal marginalize(const JointTable& table, VarSet keep);

/// -sum p ln p in nats, with 0 ln 0 = 0. Throws on negative entries.
double entropy(std::span<const double> dist);

/// H(target | given) = H(target, given) - H(given). `given` may be empty.
double conditional_entropy(const JointTable& table, Variable target, VarSet given);

/// I(a; b) = H(a) - H(a | b), with rounding negatives in [-1e-12, 0) clamped to 0.
double mutual_information(const JointTable& table, Variable a, VarSet b);

/// Interaction information evaluated directly as
/// E[ln p(x,y) p(x,z) p(y,z) / (p(x,y,z) p(x) p(y) p(z))]. Can be negative.
double trivariate_mi(const JointTable& table);

struct DecompositionReport {
    double i_xy = 0, i_xz = 0, i_x_yz = 0, i_xyz = 0;
    double h_x = 0, h_x_given_y = 0, h_x_given_z = 0, h_x_given_yz = 0;
    // I(X;Y;Z) against the bivariate split.
    double residual_mi_split = 0;
    // I(X;Y;Z) against its entropy form.
    double residual_entropy_form = 0;
    // I(X;Y) - I(X;Y;Z) against H(X|Z) - H(X|Y,Z).
    double residual_objective = 0;
    // H(X|Y) - H(X|Y,Z) = I(X;Z|Y). Zero exactly when p(x|y,z) = p(x|y);
    // diagnostic only.
    double conditional_independence_gap = 0;
};

DecompositionReport verify_decomposition(const JointTable& table);

/// Seeded random table with each cardinality drawn from [1, max_cardinality].
/// Roughly one entry in eight is forced to zero to exercise 0 ln 0.
JointTable random_table(std::uint64_t seed, std::size_t max_cardinality);

struct SweepResult {
    std::size_t tables_checked = 0;
    double max_abs_residual_mi_split = 0;
    double max_abs_residual_entropy_form = 0;
    double max_abs_residual_objective = 0;
};

/// X, Y uniform bits and Z = X xor Y; interaction information is -ln 2.
JointTable xor_table();

SweepResult sweep_identities(std::size_t tables, std::size_t max_cardinality, std::uint64_t seed);

}  // namespace midol::info
