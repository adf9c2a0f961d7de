#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "midol/dense_array.hpp"

namespace midol {

inline constexpr double kCollapseThreshold = 0.6;

struct Assignment {
    std::size_t modality = 0;
    std::size_t expert = 0;
};

/// Mean over modalities of the largest fraction of that modality's samples
/// sent to a single expert.
double routing_purity(std::span<const Assignment> assignments);

/// Entropy (nats) of the expert usage histogram over `experts` bins.
double expert_load_entropy(std::span<const Assignment> assignments, std::size_t experts);

struct RoutingReport {
    double purity = 0.0;
    double load_entropy = 0.0;
    bool collapse_flag = false;   // one expert holds more than 60% of samples
    double max_expert_share = 0.0;
};

RoutingReport routing_report(std::span<const Assignment> assignments, std::size_t experts);

struct ProbeOptions {
    std::size_t iterations = 500;
    double learning_rate = 0.1;
};

/// Multinomial logistic regression fit by full-batch gradient descent on the
/// train split, scored on the test split. Features are whitened with the train
/// split's mean and covariance before fitting, so the score does not depend
/// on an invertible affine change of the embedding.
/// Throws if the train split holds fewer than two classes.
double linear_probe(const DenseArray& train_x, std::span<const std::size_t> train_y,
                    const DenseArray& test_x, std::span<const std::size_t> test_y,
                    const ProbeOptions& options = {});

struct ProbeReport {
    double modality_accuracy = 0.0;
    double subcluster_accuracy = 0.0;
};

/// One embedding export row.
struct EmbeddingRow {
    std::size_t modality = 0;
    std::size_t subcluster = 0;
    std::size_t expert = 0;
};

/// CSV: sample_id, modality, subcluster, selected_expert, e_0..e_{E-1}, with
/// values printed to 17 significant digits.
void write_embeddings_csv(const std::filesystem::path& path, std::span<const EmbeddingRow> rows,
                          const DenseArray* embeddings, std::size_t width);

}  // namespace midol
