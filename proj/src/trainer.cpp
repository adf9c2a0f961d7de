#include "midol/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "json.hpp"

#include "midol/rng.hpp"

namespace midol {

void TrainConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
        throw std::invalid_argument("config key '" + key + "': " + why);
    };
    if (steps < 1) fail("steps", "must be >= 1");
    if (batch < 1) fail("batch", "must be >= 1");
    if (!(learning_rate > 0.0)) fail("learning_rate", "must be > 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
    if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) fail("ema_momentum", "must lie in [0, 1]");
    if (sinkhorn_iters < 1) fail("sinkhorn_iters", "must be >= 1");
    if (!(sinkhorn_epsilon > 0.0)) fail("sinkhorn_epsilon", "must be > 0");
    if (!(temperature > 0.0)) fail("temperature", "must be > 0");
    if (experts < 2) fail("experts", "must be >= 2");
    if (modalities < 1) fail("modalities", "must be >= 1");
    if (views < 2) fail("views", "must be >= 2");
    if (batch % modalities != 0) fail("batch", "must be divisible by modalities");
    if (batch * views < experts) fail("batch", "batch * views must be >= experts");
    if (!(grad_clip > 0.0)) fail("grad_clip", "must be > 0");
    if (eval_samples < 2 * modalities || eval_samples % modalities != 0)
        fail("eval_samples", "must be a multiple of modalities holding at least two per modality");
}

NamedParams ModelState::student_params() {
    NamedParams out = named_params(student_encoder, "student.encoder.");
    for (auto& p : named_params(student_moe, "student.moe.")) out.push_back(p);
    return out;
}

ConstNamedParams ModelState::student_params() const {
    ConstNamedParams out = named_params(student_encoder, "student.encoder.");
    for (auto& p : named_params(student_moe, "student.moe.")) out.push_back(p);
    return out;
}

NamedParams ModelState::teacher_params() {
    NamedParams out = named_params(teacher_encoder, "teacher.encoder.");
    for (auto& p : named_params(teacher_moe, "teacher.moe.")) out.push_back(p);
    return out;
}

ConstNamedParams ModelState::teacher_params() const {
    ConstNamedParams out = named_params(teacher_encoder, "teacher.encoder.");
    for (auto& p : named_params(teacher_moe, "teacher.moe.")) out.push_back(p);
    return out;
}

MlpShape encoder_shape(const TrainConfig&) { return MlpShape{}; }

MoeShape moe_shape(const TrainConfig& config) {
    MoeShape s;
    s.features = encoder_shape(config).embedding;
    s.experts = config.experts;
    return s;
}

ModelState init_model(const TrainConfig& config) {
    Rng rng(derive_seed(config.seed, "init"));
    ModelState s;
    s.student_encoder = init_mlp(encoder_shape(config), rng);
    s.student_moe = init_moe(moe_shape(config), rng);
    s.teacher_encoder = s.student_encoder;
    s.teacher_moe = s.student_moe;
    for (const auto& [name, p] : s.student_params()) {
        s.adam.first.emplace_back(p->shape(), 0.0);
        s.adam.second.emplace_back(p->shape(), 0.0);
    }
    return s;
}

void adamw_update(std::span<DenseArray* const> params, std::span<const DenseArray> grads,
                  AdamState& moments, double lr, double beta1, double beta2,
                  double weight_decay, std::size_t step) {
    if (step < 1) throw std::invalid_argument("adamw_update: step counts from 1");
    if (grads.size() != params.size() || moments.first.size() != params.size() ||
        moments.second.size() != params.size())
        throw std::invalid_argument("adamw_update: parameter / gradient / moment counts differ");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(moments.first[i]) ||
            !params[i]->same_shape(moments.second[i]))
            throw std::invalid_argument("adamw_update: shape mismatch at parameter " +
                                        std::to_string(i));

    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->storage();
        const auto& g = grads[i].storage();
        auto& m = moments.first[i].storage();
        auto& v = moments.second[i].storage();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            p[k] -= lr * (m_hat / (std::sqrt(v_hat) + 1e-8) + weight_decay * p[k]);
        }
    }
}

double clip_global_norm(std::span<DenseArray> grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads)
        for (double v : g.data()) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& g : grads)
            for (double& v : g.storage()) v *= f;
    }
    return norm;
}

namespace {

// Per image: top-1 expert of the routing rows averaged over its views.
std::vector<std::size_t> image_selection(const DenseArray& routing, std::size_t views) {
    const std::size_t images = routing.rows() / views, experts = routing.cols();
    std::vector<std::size_t> out(images);
    std::vector<double> mean(experts);
    for (std::size_t b = 0; b < images; ++b) {
        std::fill(mean.begin(), mean.end(), 0.0);
        for (std::size_t j = 0; j < views; ++j)
            for (std::size_t i = 0; i < experts; ++i) mean[i] += routing(b * views + j, i);
        out[b] = select_expert(mean);
    }
    return out;
}

bool finite_params(const ConstNamedParams& params) {
    return std::all_of(params.begin(), params.end(),
                       [](const auto& p) { return p.second->all_finite(); });
}

}  // namespace

StepResult train_step(ModelState& state, const SyntheticBatch& batch, const TrainConfig& config) {
    const std::size_t images = batch.size(), views = batch.views;
    if (views < 2) throw std::invalid_argument("train_step: need at least 2 views per image");
    if (batch.view_features.empty() || batch.view_features.rows() != images * views ||
        batch.view_features.cols() != state.student_encoder.input_dim())
        throw std::invalid_argument("train_step: batch does not match the encoder input");

    const bool moe = config.enable_moe;
    const bool use_route = moe && config.enable_route;
    // Without the MoE projector the baseline trains one shared head with the
    // contrastive objective over the whole batch.
    const bool use_cst = !moe || config.enable_cst;
    const std::size_t groups = moe ? state.student_moe.expert_count() : 1;

    StepResult result;
    try {
        // Teacher branch, entirely outside the graph.
        const DenseArray t_enc =
            mlp_forward(state.teacher_encoder, batch.view_features, false).value();
        DenseArray t_route;
        std::vector<std::size_t> t_sel(images, 0);
        if (moe) {
            t_route = route_teacher(state.teacher_moe, t_enc, config.sinkhorn_epsilon,
                                    config.sinkhorn_iters)
                          .scores;
            t_sel = image_selection(t_route, views);
        }

        // Student branch.
        const MlpVars enc_vars = bind(state.student_encoder, true);
        const MoeVars moe_vars = bind(state.student_moe, true);
        const Var s_enc = mlp_forward(enc_vars, Var::constant(batch.view_features));
        RoutingMatrix s_route;
        std::vector<std::size_t> s_sel(images, 0);
        if (moe) {
            s_route = route_student(moe_vars, s_enc);
            s_sel = image_selection(s_route.scores, views);
        }

        result.expert_load.assign(groups, 0);
        for (std::size_t b = 0; b < images; ++b) {
            ++result.expert_load[s_sel[b]];
            if (s_sel[b] != t_sel[b]) ++result.mismatched_images;
        }

        Var objective;
        double l_route = 0.0, l_cst = 0.0;
        if (use_route) {
            Var route = routing_consistency_loss(s_route.node, t_route, views);
            l_route = route.value().item();
            objective = route;
        }
        if (use_cst) {
            std::map<std::size_t, DenseArray> teacher_out;
            auto teacher_rows = [&](std::size_t expert) -> const DenseArray& {
                auto it = teacher_out.find(expert);
                if (it == teacher_out.end())
                    it = teacher_out.emplace(expert, expert_apply(state.teacher_moe, t_enc, expert)).first;
                return it->second;
            };
            std::vector<Var> per_expert(groups);
            for (std::size_t i = 0; i < groups; ++i) {
                std::vector<std::size_t> rows;
                for (std::size_t b = 0; b < images; ++b)
                    if (s_sel[b] == i)
                        for (std::size_t j = 0; j < views; ++j) rows.push_back(b * views + j);
                if (rows.empty()) continue;
                Var x = expert_forward(moe_vars, select_rows(s_enc, rows), i);
                DenseArray y = DenseArray::matrix(rows.size(), x.cols());
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    const DenseArray& src = teacher_rows(t_sel[rows[r] / views]);
                    std::copy_n(src.row(rows[r]).begin(), y.cols(), y.row(r).begin());
                }
                per_expert[i] = intra_contrastive_loss_expert(x, y, views, config.temperature);
            }
            Var cst = aggregate_contrastive_loss(per_expert, groups);
            l_cst = cst.value().item();
            objective = objective ? add(objective, cst) : cst;
        }
        result.losses = total_loss(l_route, l_cst);

        if (objective && objective.requires_grad()) {
            backward(objective);
            std::vector<Var> vars = param_vars(enc_vars);
            for (const Var& v : param_vars(moe_vars)) vars.push_back(v);
            std::vector<DenseArray> grads;
            grads.reserve(vars.size());
            for (const Var& v : vars) grads.push_back(v.grad());
            clip_global_norm(grads, config.grad_clip);

            std::vector<DenseArray*> params;
            for (auto& [name, p] : state.student_params()) params.push_back(p);
            adamw_update(params, grads, state.adam, config.learning_rate, config.beta1,
                         config.beta2, config.weight_decay, state.step + 1);
            result.updated = true;
        }
    } catch (const std::domain_error& e) {
        throw std::domain_error("train_step " + std::to_string(state.step + 1) + ": " + e.what());
    }
    if (!finite_params(std::as_const(state).student_params()))
        throw std::domain_error("train_step " + std::to_string(state.step + 1) +
                                ": student parameters became non-finite");

    const MomentumSchedule schedule{config.ema_momentum, 1.0, config.steps};
    const double lambda = momentum_at(schedule, std::min(state.step, config.steps));
    ema_update(state.teacher_params(), std::as_const(state).student_params(), lambda);
    ++state.step;
    return result;
}

World make_world(const TrainConfig& config) {
    World w;
    w.geometry.modalities = config.modalities;
    w.modalities = make_modalities(w.geometry, derive_seed(config.seed, "geometry"));
    return w;
}

SyntheticBatch training_batch(const World& world, const TrainConfig& config, std::size_t step) {
    return sample_batch(world.modalities, config.batch, config.views,
                        derive_seed(derive_seed(config.seed, "train-data"), step), world.augment);
}

SyntheticBatch evaluation_batch(const World& world, const TrainConfig& config) {
    return sample_batch(world.modalities, config.eval_samples, 0,
                        derive_seed(config.seed, "eval-data"), world.augment);
}

namespace {

std::vector<std::size_t> teacher_routes(const ModelState& state, const TrainConfig& config,
                                        const DenseArray& encoded) {
    if (!config.enable_moe) return std::vector<std::size_t>(encoded.rows(), 0);
    return hard_routes(state.teacher_moe, encoded);
}

}  // namespace

EvalReport evaluate_model(const ModelState& state, const TrainConfig& config,
                          const SyntheticBatch& data, bool probe) {
    const DenseArray encoded = mlp_forward(state.teacher_encoder, data.features, false).value();
    EvalReport report;
    const auto routes = teacher_routes(state, config, encoded);
    for (std::size_t i = 0; i < data.size(); ++i)
        report.assignments.push_back({data.modality[i], routes[i]});
    if (config.enable_moe)
        report.routing = routing_report(report.assignments, state.teacher_moe.expert_count());

    if (probe) {
        const std::size_t n = data.size(), half = n / 2;
        const std::size_t sub_count =
            1 + *std::max_element(data.subcluster.begin(), data.subcluster.end());
        std::vector<std::size_t> modality = data.modality, fine(n);
        for (std::size_t i = 0; i < n; ++i) fine[i] = data.modality[i] * sub_count + data.subcluster[i];

        DenseArray train = DenseArray::matrix(half, encoded.cols());
        DenseArray test = DenseArray::matrix(n - half, encoded.cols());
        std::copy_n(encoded.data().begin(), train.size(), train.storage().begin());
        std::copy_n(encoded.data().begin() + static_cast<std::ptrdiff_t>(train.size()), test.size(),
                    test.storage().begin());
        auto split = [half](const std::vector<std::size_t>& y) {
            return std::pair{std::span(y).first(half), std::span(y).subspan(half)};
        };
        const auto [m_train, m_test] = split(modality);
        const auto [f_train, f_test] = split(fine);
        report.probe = ProbeReport{linear_probe(train, m_train, test, m_test),
                                   linear_probe(train, f_train, test, f_test)};
    }
    return report;
}

void export_embeddings(const ModelState& state, const TrainConfig& config,
                       const SyntheticBatch& data, const std::filesystem::path& path,
                       bool after_projector) {
    std::vector<EmbeddingRow> rows;
    if (data.size() == 0) {
        write_embeddings_csv(path, rows, nullptr, state.teacher_moe.output_dim());
        return;
    }
    const DenseArray encoded = mlp_forward(state.teacher_encoder, data.features, false).value();
    const auto routes = teacher_routes(state, config, encoded);
    for (std::size_t i = 0; i < data.size(); ++i)
        rows.push_back({data.modality[i], data.subcluster[i], routes[i]});
    if (!after_projector) {
        write_embeddings_csv(path, rows, &encoded, encoded.cols());
        return;
    }
    DenseArray projected = DenseArray::matrix(data.size(), state.teacher_moe.output_dim());
    std::map<std::size_t, DenseArray> per_expert;
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto it = per_expert.find(routes[i]);
        if (it == per_expert.end())
            it = per_expert.emplace(routes[i], expert_apply(state.teacher_moe, encoded, routes[i])).first;
        std::copy_n(it->second.row(i).begin(), projected.cols(), projected.row(i).begin());
    }
    write_embeddings_csv(path, rows, &projected, projected.cols());
}

void write_routing_csv(const ModelState& state, const SyntheticBatch& data,
                       const std::filesystem::path& path) {
    const DenseArray encoded = mlp_forward(state.teacher_encoder, data.features, false).value();
    const DenseArray probs =
        softmax(Var::constant(matmul(encoded, state.teacher_moe.router))).value();
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << "sample_id,true_modality,selected_expert,max_probability\n";
    char buf[32];
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t e = select_expert(probs.row(i));
        std::snprintf(buf, sizeof buf, "%.17g", probs(i, e));
        f << i << ',' << data.modality[i] << ',' << e << ',' << buf << '\n';
    }
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

namespace {

nlohmann::json routing_json(const std::optional<RoutingReport>& r) {
    if (!r) return {{"purity", nullptr}, {"load_entropy", nullptr}, {"collapse_flag", nullptr},
                    {"max_expert_share", nullptr}};
    return {{"purity", r->purity},
            {"load_entropy", r->load_entropy},
            {"collapse_flag", r->collapse_flag},
            {"max_expert_share", r->max_expert_share}};
}

}  // namespace

RunResult run_training(const TrainConfig& config, const MetricsSink& sink) {
    config.validate();
    const World world = make_world(config);
    const SyntheticBatch eval = evaluation_batch(world, config);
    RunResult run{init_model(config), {}, {}};
    run.history.reserve(config.steps);

    auto emit = [&](const nlohmann::json& j) {
        if (sink) sink(j.dump() + "\n");
    };
    std::size_t mismatched = 0, seen = 0;
    for (std::size_t step = 0; step < config.steps; ++step) {
        const StepResult r = train_step(run.state, training_batch(world, config, step), config);
        run.history.push_back(r.losses);
        mismatched += r.mismatched_images;
        seen += config.batch;
        emit({{"step", step + 1},
              {"l_route", r.losses.l_route},
              {"l_cst", r.losses.l_cst},
              {"total", r.losses.total}});

        const bool last = step + 1 == config.steps;
        if (config.eval_every && (step + 1) % config.eval_every == 0 && !last) {
            const EvalReport e = evaluate_model(run.state, config, eval, false);
            nlohmann::json j = routing_json(e.routing);
            j["type"] = "epoch";
            j["epoch"] = (step + 1) / config.eval_every;
            j["step"] = step + 1;
            j["mismatch_fraction"] = static_cast<double>(mismatched) / static_cast<double>(seen);
            emit(j);
            mismatched = seen = 0;
        }
    }

    run.final_eval = evaluate_model(run.state, config, eval, true);
    nlohmann::json j = routing_json(run.final_eval.routing);
    j["type"] = "final";
    j["step"] = config.steps;
    j["modality_accuracy"] = run.final_eval.probe->modality_accuracy;
    j["subcluster_accuracy"] = run.final_eval.probe->subcluster_accuracy;
    emit(j);
    return run;
}

}  // namespace midol
