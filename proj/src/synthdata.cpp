#include "midol/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace midol {

namespace {

bool is_power_of_two(std::size_t n) { return n && !(n & (n - 1)); }

// K orthonormal directions. For power-of-two D, Sylvester-Hadamard rows with
// a random sign flip per coordinate: every coordinate then carries the same
// energy, so a masked view keeps exactly its kept fraction of the center.
std::vector<std::vector<double>> orthonormal_directions(std::size_t k, std::size_t d, Rng& rng) {
    std::vector<std::vector<double>> dirs;
    if (is_power_of_two(d) && k < d) {
        std::bernoulli_distribution coin(0.5);
        std::vector<double> flip(d);
        for (double& f : flip) f = coin(rng) ? 1.0 : -1.0;
        std::vector<std::size_t> rows(d - 1);
        std::iota(rows.begin(), rows.end(), 1);  // skip the constant row
        std::shuffle(rows.begin(), rows.end(), rng);
        const double norm = 1.0 / std::sqrt(static_cast<double>(d));
        for (std::size_t i = 0; i < k; ++i) {
            std::vector<double> v(d);
            for (std::size_t c = 0; c < d; ++c) {
                const bool negative = std::popcount(rows[i] & c) % 2 == 1;
                v[c] = (negative ? -norm : norm) * flip[c];
            }
            dirs.push_back(std::move(v));
        }
        return dirs;
    }
    if (k > d) throw std::invalid_argument("make_modalities: more modalities than dimensions");
    std::normal_distribution<double> gauss(0.0, 1.0);
    while (dirs.size() < k) {
        std::vector<double> v(d);
        for (double& x : v) x = gauss(rng);
        for (const auto& u : dirs) {
            const double dot = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
            for (std::size_t c = 0; c < d; ++c) v[c] -= dot * u[c];
        }
        const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        if (n < 1e-6) continue;
        for (double& x : v) x /= n;
        dirs.push_back(std::move(v));
    }
    return dirs;
}

}  // namespace

std::vector<ModalitySpec> make_modalities(const GeometryConfig& config, std::uint64_t seed) {
    if (config.modalities < 1 || config.subclusters < 1 || config.dim < 1)
        throw std::invalid_argument("make_modalities: counts must be positive");
    if (!(config.spacing > 4.0 * (config.sub_radius + config.sigma_in)))
        throw std::invalid_argument("make_modalities: spacing must exceed 4 * (sub_radius + sigma_in)");
    Rng rng(seed);
    const auto dirs = orthonormal_directions(config.modalities, config.dim, rng);
    // Orthonormal u, v: |a u - a v| = a sqrt(2).
    const double radius = config.spacing / std::sqrt(2.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<ModalitySpec> specs;
    for (std::size_t k = 0; k < config.modalities; ++k) {
        ModalitySpec s;
        s.id = k;
        s.sub_radius = config.sub_radius;
        s.sigma_in = config.sigma_in;
        s.spacing = config.spacing;
        s.center.resize(config.dim);
        for (std::size_t c = 0; c < config.dim; ++c) s.center[c] = radius * dirs[k][c];
        for (std::size_t j = 0; j < config.subclusters; ++j) {
            std::vector<double> offset(config.dim);
            for (double& x : offset) x = gauss(rng);
            const double n = std::sqrt(std::inner_product(offset.begin(), offset.end(), offset.begin(), 0.0));
            std::vector<double> sub(config.dim);
            for (std::size_t c = 0; c < config.dim; ++c)
                sub[c] = s.center[c] + config.sub_radius * offset[c] / n;
            s.sub_centers.push_back(std::move(sub));
        }
        specs.push_back(std::move(s));
    }
    return specs;
}

std::vector<double> augment_view(std::span<const double> sample, ViewKind kind, Rng& rng,
                                 const AugmentConfig& config) {
    const std::size_t d = sample.size();
    std::vector<double> out(sample.begin(), sample.end());
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> n(d);
    for (double& x : n) x = config.sigma_aug * noise(rng);

    if (kind == ViewKind::local) {
        std::uniform_real_distribution<double> frac(config.keep_min, config.keep_max);
        const double f = config.keep_min == config.keep_max ? config.keep_min : frac(rng);
        const auto keep = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::lround(f * static_cast<double>(d))), 1, d);
        std::vector<std::size_t> idx(d);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i = keep; i < d; ++i) out[idx[i]] = 0.0;
    }
    for (std::size_t c = 0; c < d; ++c) out[c] += n[c];
    return out;
}

SyntheticBatch sample_batch(std::span<const ModalitySpec> specs, std::size_t batch,
                            std::size_t views, std::uint64_t seed, const AugmentConfig& augment) {
    const std::size_t k = specs.size();
    if (k == 0) throw std::invalid_argument("sample_batch: no modalities");
    if (batch == 0 || batch % k != 0)
        throw std::invalid_argument("sample_batch: batch " + std::to_string(batch) +
                                    " is not a positive multiple of " + std::to_string(k) +
                                    " modalities");
    const std::size_t d = specs[0].center.size();
    Rng rng(seed);

    struct Draw {
        std::size_t modality, sub;
        std::vector<double> x;
    };
    std::vector<Draw> draws;
    draws.reserve(batch);
    for (std::size_t m = 0; m < k; ++m) {
        std::uniform_int_distribution<std::size_t> pick(0, specs[m].sub_centers.size() - 1);
        std::normal_distribution<double> gauss(0.0, specs[m].sigma_in);
        for (std::size_t i = 0; i < batch / k; ++i) {
            Draw dr{m, pick(rng), std::vector<double>(d)};
            for (std::size_t c = 0; c < d; ++c) dr.x[c] = specs[m].sub_centers[dr.sub][c] + gauss(rng);
            draws.push_back(std::move(dr));
        }
    }
    std::shuffle(draws.begin(), draws.end(), rng);

    SyntheticBatch out;
    out.views = views;
    out.features = DenseArray::matrix(batch, d);
    if (views) out.view_features = DenseArray::matrix(batch * views, d);
    for (std::size_t b = 0; b < batch; ++b) {
        out.modality.push_back(draws[b].modality);
        out.subcluster.push_back(draws[b].sub);
        std::copy(draws[b].x.begin(), draws[b].x.end(), out.features.row(b).begin());
        for (std::size_t j = 0; j < views; ++j) {
            const ViewKind kind = j < augment.global_views ? ViewKind::global : ViewKind::local;
            const auto v = augment_view(draws[b].x, kind, rng, augment);
            std::copy(v.begin(), v.end(), out.view_features.row(b * views + j).begin());
        }
    }
    return out;
}

void write_data_csv(const std::filesystem::path& path, const SyntheticBatch& batch) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << "sample_id,modality,subcluster";
    for (std::size_t c = 0; c < batch.dim(); ++c) f << ",feature_" << c;
    f << '\n';
    char buf[32];
    for (std::size_t b = 0; b < batch.size(); ++b) {
        f << b << ',' << batch.modality[b] << ',' << batch.subcluster[b];
        for (double v : batch.features.row(b)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            f << ',' << buf;
        }
        f << '\n';
    }
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace midol
