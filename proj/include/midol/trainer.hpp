#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "midol/encoder.hpp"
#include "midol/losses.hpp"
#include "midol/metrics.hpp"
#include "midol/moe.hpp"
#include "midol/synthdata.hpp"

namespace midol {

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch = 60;
    double learning_rate = 1e-4;
    double weight_decay = 0.04;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double ema_momentum = 0.996;     // base of the cosine schedule, rises to 1
    std::size_t sinkhorn_iters = 3;
    double sinkhorn_epsilon = 0.05;
    double temperature = 0.04;
    std::uint64_t seed = 0;
    bool enable_moe = true;
    bool enable_route = true;
    bool enable_cst = true;
    std::size_t experts = 3;
    std::size_t modalities = 3;
    std::size_t views = 8;
    double grad_clip = 5.0;
    std::size_t eval_every = 200;
    std::size_t eval_samples = 600;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct AdamState {
    std::vector<DenseArray> first;
    std::vector<DenseArray> second;
};

/// Student and teacher (encoder + MoE projector), optimizer moments and the
/// number of completed steps. Teacher arrays never take part in a gradient
/// graph; they change only through ema_update.
struct ModelState {
    MlpParams student_encoder;
    MoeParams student_moe;
    MlpParams teacher_encoder;
    MoeParams teacher_moe;
    AdamState adam;
    std::size_t step = 0;

    NamedParams student_params();
    ConstNamedParams student_params() const;
    NamedParams teacher_params();
    ConstNamedParams teacher_params() const;
};

MlpShape encoder_shape(const TrainConfig& config);
MoeShape moe_shape(const TrainConfig& config);

/// Seeded student; teacher starts as an exact copy; zero moments.
ModelState init_model(const TrainConfig& config);

/// p <- p - lr * (m_hat / (sqrt(v_hat) + 1e-8) + weight_decay * p) with
/// bias-corrected moments; `step` counts from 1.
void adamw_update(std::span<DenseArray* const> params, std::span<const DenseArray> grads,
                  AdamState& moments, double lr, double beta1, double beta2,
                  double weight_decay, std::size_t step);

/// Rescales grads in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(std::span<DenseArray> grads, double max_norm);

struct StepResult {
    LossBreakdown losses;
    std::size_t mismatched_images = 0;  // student and teacher picked different experts
    std::vector<std::size_t> expert_load;  // images per expert, student selection
    bool updated = false;                  // false when no loss term is active
};

/// The views of `batch` go through both branches: teacher routing and
/// embeddings detached, student routing and embeddings in the graph, losses
/// per the ablation flags, backward, clipping, AdamW on the student, then EMA
/// of the teacher at the scheduled momentum. Throws std::domain_error on a
/// non-finite loss.
StepResult train_step(ModelState& state, const SyntheticBatch& batch, const TrainConfig& config);

/// Fixed per-run context derived from the seed.
struct World {
    GeometryConfig geometry;
    AugmentConfig augment;
    std::vector<ModalitySpec> modalities;
};

World make_world(const TrainConfig& config);
SyntheticBatch training_batch(const World& world, const TrainConfig& config, std::size_t step);
SyntheticBatch evaluation_batch(const World& world, const TrainConfig& config);

struct EvalReport {
    std::optional<RoutingReport> routing;  // absent for the single-head baseline
    std::optional<ProbeReport> probe;
    std::vector<Assignment> assignments;
};

/// Teacher routing (argmax of router logits) on the evaluation set and,
/// when `probe` is set, linear probes on teacher encoder outputs: first half
/// of the set to fit, second half to score.
EvalReport evaluate_model(const ModelState& state, const TrainConfig& config,
                          const SyntheticBatch& data, bool probe);

/// Teacher-branch embeddings for `data`. With `after_projector` the rows
/// are the selected expert's unit projector outputs, otherwise the raw
/// encoder outputs used for probing.
void export_embeddings(const ModelState& state, const TrainConfig& config,
                       const SyntheticBatch& data, const std::filesystem::path& path,
                       bool after_projector);

/// CSV: sample_id, true_modality, selected_expert, max_probability.
void write_routing_csv(const ModelState& state, const SyntheticBatch& data,
                       const std::filesystem::path& path);

struct RunResult {
    ModelState state;
    std::vector<LossBreakdown> history;
    EvalReport final_eval;
};

/// Receives every newline-terminated NDJSON record of a run.
using MetricsSink = std::function<void(const std::string&)>;

/// Runs `config.steps` steps, emitting one loss record per step and a
/// routing record every `eval_every` steps, then a final evaluation record.
RunResult run_training(const TrainConfig& config, const MetricsSink& sink = {});

}  // namespace midol
