#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace midol {

inline constexpr double kGradcheckTolerance = 1e-5;

struct GradcheckRow {
    std::string op;
    double max_rel_error = 0.0;  // worst over all points and coordinates
    std::size_t points = 0;
    bool pass = false;
};

/// Every differentiable primitive plus both losses end to end (2 images,
/// 2 views, 2 experts), each checked at `points` seeded inputs.
std::vector<GradcheckRow> gradcheck_sweep(std::uint64_t seed, std::size_t points = 100);

}  // namespace midol
