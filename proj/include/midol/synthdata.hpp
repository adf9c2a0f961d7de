#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "midol/dense_array.hpp"
#include "midol/rng.hpp"

namespace midol {

/// Knobs of the synthetic multimodal world. Defaults are the desk-scale ones.
struct GeometryConfig {
    std::size_t modalities = 3;     // K
    std::size_t subclusters = 4;    // C per modality
    std::size_t dim = 32;           // D
    double spacing = 10.0;          // pairwise distance between modality centers
    double sub_radius = 1.5;
    double sigma_in = 0.3;
};

/// One modality: its center plus C sub-cluster centers around it.
struct ModalitySpec {
    std::size_t id = 0;
    std::vector<double> center;
    std::vector<std::vector<double>> sub_centers;
    double sub_radius = 0.0;
    double sigma_in = 0.0;
    double spacing = 0.0;
};

/// Modality centers are placed exactly `spacing` apart along mutually
/// orthogonal directions. Sub-cluster offsets point in random directions.
/// Throws unless spacing > 4 * (sub_radius + sigma_in).
std::vector<ModalitySpec> make_modalities(const GeometryConfig& config, std::uint64_t seed);

enum class ViewKind { global, local };

struct AugmentConfig {
    double sigma_aug = 0.2;
    double keep_min = 0.3;   // fraction of coordinates a local view keeps
    double keep_max = 0.6;
    std::size_t global_views = 2;
};

/// Global view: sample + N(0, sigma_aug^2). Local view: the same noise added
/// on top of the sample with all but round(f * D) random coordinates zeroed,
/// f ~ U[keep_min, keep_max]. Noise is drawn before the mask, so a local view
/// with f = 1 reproduces the global view for the same generator state.
std::vector<double> augment_view(std::span<const double> sample, ViewKind kind, Rng& rng,
                                 const AugmentConfig& config = {});

struct SyntheticBatch {
    std::size_t views = 0;
    DenseArray features;                 // batch x D
    std::vector<std::size_t> modality;   // hidden labels
    std::vector<std::size_t> subcluster;
    DenseArray view_features;            // (batch * views) x D, image-major; empty if views == 0

    std::size_t size() const { return modality.size(); }
    std::size_t dim() const { return features.cols(); }
};

/// Modality-balanced batch: batch / K samples per modality, each drawn from a
/// uniformly chosen sub-cluster plus N(0, sigma_in^2), then shuffled. The
/// first `global_views` views of each sample are global, the rest local.
SyntheticBatch sample_batch(std::span<const ModalitySpec> specs, std::size_t batch,
                            std::size_t views, std::uint64_t seed,
                            const AugmentConfig& augment = {});

/// CSV: sample_id, modality, subcluster, feature_0..feature_{D-1}.
void write_data_csv(const std::filesystem::path& path, const SyntheticBatch& batch);

}  // namespace midol
