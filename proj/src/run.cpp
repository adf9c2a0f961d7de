#include "midol/run.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <future>
#include <iostream>
#include <stdexcept>

#include "CLI11.hpp"
#include "midol/checkpoint.hpp"
#include "midol/config.hpp"
#include "midol/gradcheck.hpp"
#include "midol/infodecomp.hpp"

namespace midol {

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

std::string utc_now(const char* format) {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, format, &tm);
    return buf;
}

std::string iso_now() { return utc_now("%Y-%m-%dT%H:%M:%SZ"); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << text;
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

Json optional_json(const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); }

}  // namespace

Json manifest_to_json(const RunManifest& m) {
    return {{"version", m.version},
            {"subcommand", m.subcommand},
            {"seed", m.seed},
            {"config", config_to_json(m.config)},
            {"started_at", m.started_at},
            {"finished_at", optional_json(m.finished_at)},
            {"exit_status", m.exit_status ? Json(*m.exit_status) : Json(nullptr)},
            {"artifacts", m.artifacts}};
}

RunManifest manifest_from_json(const Json& j) {
    RunManifest m;
    m.version = j.at("version").get<std::string>();
    m.subcommand = j.at("subcommand").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = config_from_json(j.at("config"));
    m.started_at = j.at("started_at").get<std::string>();
    if (!j.at("finished_at").is_null()) m.finished_at = j.at("finished_at").get<std::string>();
    if (!j.at("exit_status").is_null()) m.exit_status = j.at("exit_status").get<int>();
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    return m;
}

void write_json_atomic(const fs::path& path, const Json& j) {
    fs::path tmp = path;
    tmp += ".tmp";
    write_text(tmp, j.dump(2) + "\n");
    fs::rename(tmp, path);
}

fs::path create_run_dir(const fs::path& base, const std::string& subcommand) {
    fs::create_directories(base);
    const std::string stem = utc_now("%Y%m%dT%H%M%SZ") + "-" + subcommand;
    for (int n = 1;; ++n) {
        fs::path dir = base / (n == 1 ? stem : stem + "-" + std::to_string(n));
        if (fs::create_directory(dir)) return dir;
    }
}

fs::path output_base(const CliOptions& options) {
    if (options.out) return *options.out;
    if (const char* env = std::getenv("MIDOL_OUT"); env && *env) return env;
    return "runs";
}

namespace {

TrainConfig config_for(const CliOptions& o) {
    auto overrides = o.overrides;
    if (o.seed) overrides.emplace_back("seed", std::to_string(*o.seed));
    return parse_config(o.config_path, overrides);
}

Json routing_fields(const EvalReport& e) {
    Json j;
    if (e.routing) {
        j["purity"] = e.routing->purity;
        j["load_entropy"] = e.routing->load_entropy;
        j["collapse_flag"] = e.routing->collapse_flag;
    } else {
        j["purity"] = nullptr;
        j["load_entropy"] = nullptr;
        j["collapse_flag"] = nullptr;
    }
    j["modality_accuracy"] = e.probe ? Json(e.probe->modality_accuracy) : Json(nullptr);
    j["subcluster_accuracy"] = e.probe ? Json(e.probe->subcluster_accuracy) : Json(nullptr);
    return j;
}

int verify_identities(const CliOptions& o, std::ostream& out) {
    const std::uint64_t seed = o.seed.value_or(0);
    const info::SweepResult r = info::sweep_identities(o.tables, o.max_cardinality, seed);
    const double xor_value = info::trivariate_mi(info::xor_table());
    const bool pass = r.max_abs_residual_mi_split < 1e-10 &&
                      r.max_abs_residual_entropy_form < 1e-10 &&
                      r.max_abs_residual_objective < 1e-10 &&
                      std::abs(xor_value + std::log(2.0)) < 1e-12;
    out << Json{{"tables_checked", r.tables_checked},
                {"max_abs_residual_mi_split", r.max_abs_residual_mi_split},
                {"max_abs_residual_entropy_form", r.max_abs_residual_entropy_form},
                {"max_abs_residual_objective", r.max_abs_residual_objective},
                {"xor_interaction_information", xor_value},
                {"pass", pass}}
                   .dump()
        << '\n';
    return pass ? 0 : 1;
}

int gradcheck(const CliOptions& o, std::ostream& out) {
    bool pass = true;
    for (const GradcheckRow& row : gradcheck_sweep(o.seed.value_or(0), o.points)) {
        out << Json{{"op", row.op}, {"max_rel_error", row.max_rel_error}, {"pass", row.pass}}.dump()
            << '\n';
        pass = pass && row.pass;
    }
    return pass ? 0 : 1;
}

struct TrainOutcome {
    fs::path dir;
    RunResult result;
};

// One complete training run inside `dir`: manifest, metrics stream,
// checkpoint and both embedding exports.
TrainOutcome train_into(const fs::path& dir, const std::string& subcommand,
                        const TrainConfig& config, const CliOptions& o) {
    RunManifest manifest;
    manifest.subcommand = subcommand;
    manifest.seed = config.seed;
    manifest.config = config;
    manifest.started_at = iso_now();
    manifest.artifacts = {{"metrics", "metrics.ndjson"},
                          {"checkpoint", "checkpoint.midol"},
                          {"embeddings", "embeddings.csv"},
                          {"encoder_embeddings", "encoder_embeddings.csv"},
                          {"config", "config.txt"}};
    write_json_atomic(dir / "manifest.json", manifest_to_json(manifest));
    write_text(dir / "config.txt", format_config(config));

    std::ofstream metrics(dir / "metrics.ndjson");
    if (!metrics) throw std::runtime_error("cannot open " + (dir / "metrics.ndjson").string());
    TrainOutcome t{dir, run_training(config, [&](const std::string& line) { metrics << line; })};
    metrics.close();
    if (!metrics) throw std::runtime_error("failed writing " + (dir / "metrics.ndjson").string());

    save_checkpoint(dir / "checkpoint.midol", config, t.result.state);
    const World world = make_world(config);
    const SyntheticBatch eval = evaluation_batch(world, config);
    export_embeddings(t.result.state, config, eval, dir / "embeddings.csv", true);
    export_embeddings(t.result.state, config, eval, dir / "encoder_embeddings.csv", false);
    if (o.dump_routing) {
        write_routing_csv(t.result.state, eval, *o.dump_routing);
        manifest.artifacts["routing"] = fs::absolute(*o.dump_routing).string();
    }
    if (o.dump_data) {
        write_data_csv(*o.dump_data, eval);
        manifest.artifacts["data"] = fs::absolute(*o.dump_data).string();
    }
    manifest.finished_at = iso_now();
    manifest.exit_status = 0;
    write_json_atomic(dir / "manifest.json", manifest_to_json(manifest));
    return t;
}

int train(const CliOptions& o, std::ostream& out) {
    const TrainConfig config = config_for(o);
    const fs::path dir = create_run_dir(output_base(o), "train");
    const TrainOutcome t = train_into(dir, "train", config, o);
    Json j = routing_fields(t.result.final_eval);
    j["run_dir"] = dir.string();
    out << j.dump() << '\n';
    return 0;
}

int evaluate(const CliOptions& o, std::ostream& out) {
    if (!o.checkpoint) throw std::invalid_argument("evaluate needs --checkpoint PATH");
    Checkpoint ck = load_checkpoint(*o.checkpoint);
    if (o.seed) ck.config.seed = *o.seed;
    const fs::path dir = create_run_dir(output_base(o), "evaluate");

    RunManifest manifest;
    manifest.subcommand = "evaluate";
    manifest.seed = ck.config.seed;
    manifest.config = ck.config;
    manifest.started_at = iso_now();
    manifest.artifacts = {{"checkpoint", fs::absolute(*o.checkpoint).string()},
                          {"report", "evaluation.json"},
                          {"embeddings", "embeddings.csv"}};
    write_json_atomic(dir / "manifest.json", manifest_to_json(manifest));

    const SyntheticBatch eval = evaluation_batch(make_world(ck.config), ck.config);
    const EvalReport report = evaluate_model(ck.state, ck.config, eval, true);
    const Json j = routing_fields(report);
    write_text(dir / "evaluation.json", j.dump() + "\n");
    export_embeddings(ck.state, ck.config, eval, dir / "embeddings.csv", true);
    if (o.dump_routing) {
        write_routing_csv(ck.state, eval, *o.dump_routing);
        manifest.artifacts["routing"] = fs::absolute(*o.dump_routing).string();
    }
    if (o.dump_data) {
        write_data_csv(*o.dump_data, eval);
        manifest.artifacts["data"] = fs::absolute(*o.dump_data).string();
    }
    manifest.finished_at = iso_now();
    manifest.exit_status = 0;
    write_json_atomic(dir / "manifest.json", manifest_to_json(manifest));
    out << j.dump() << '\n';
    return 0;
}

struct AblationRow {
    const char* name;
    bool moe, route, cst;
};

// Baseline, +MoE, +routing consistency, +intra-modality contrast.
constexpr AblationRow kAblationRows[] = {
    {"baseline", false, false, true},
    {"moe", true, false, false},
    {"moe_route", true, true, false},
    {"full", true, true, true},
};

int ablate(const CliOptions& o, std::ostream& out) {
    const TrainConfig base = config_for(o);
    const fs::path dir = create_run_dir(output_base(o), "ablate");
    RunManifest manifest;
    manifest.subcommand = "ablate";
    manifest.seed = base.seed;
    manifest.config = base;
    manifest.started_at = iso_now();
    manifest.artifacts["comparison"] = "comparison.json";
    write_json_atomic(dir / "manifest.json", manifest_to_json(manifest));

    CliOptions row_options = o;
    row_options.dump_routing.reset();
    row_options.dump_data.reset();
    std::vector<std::future<TrainOutcome>> runs;
    for (std::size_t i = 0; i < std::size(kAblationRows); ++i) {
        const AblationRow& row = kAblationRows[i];
        TrainConfig c = base;
        c.enable_moe = row.moe;
        c.enable_route = row.route;
        c.enable_cst = row.cst;
        c.validate();
        const fs::path sub = dir / ("row" + std::to_string(i + 1) + "-" + row.name);
        fs::create_directory(sub);
        manifest.artifacts[std::string("row") + std::to_string(i + 1)] = sub.filename().string();
        runs.push_back(std::async(std::launch::async, [=] {
            return train_into(sub, "ablate", c, row_options);
        }));
    }

    Json rows = Json::array();
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const TrainOutcome t = runs[i].get();
        const AblationRow& row = kAblationRows[i];
        Json j = routing_fields(t.result.final_eval);
        j["row"] = i + 1;
        j["name"] = row.name;
        j["enable_moe"] = row.moe;
        j["enable_route"] = row.route;
        j["enable_cst"] = row.cst;
        j["run_dir"] = t.dir.filename().string();
        rows.push_back(j);
    }
    const Json comparison = {{"seed", base.seed}, {"steps", base.steps}, {"rows", rows}};
    write_text(dir / "comparison.json", comparison.dump(2) + "\n");
    manifest.finished_at = iso_now();
    manifest.exit_status = 0;
    write_json_atomic(dir / "manifest.json", manifest_to_json(manifest));
    out << comparison.dump() << '\n';
    return 0;
}

constexpr const char* kUsage =
    "usage: midol <verify-identities | gradcheck | train | evaluate | ablate> [options]\n"
    "run 'midol <subcommand> --help' for the options of one subcommand\n";

}  // namespace

int dispatch(const CliOptions& o, std::ostream& out, std::ostream& err) {
    try {
        if (o.subcommand == "verify-identities") return verify_identities(o, out);
        if (o.subcommand == "gradcheck") return gradcheck(o, out);
        if (o.subcommand == "train") return train(o, out);
        if (o.subcommand == "evaluate") return evaluate(o, out);
        if (o.subcommand == "ablate") return ablate(o, out);
    } catch (const std::exception& e) {
        err << "midol " << o.subcommand << ": " << e.what() << '\n';
        return 1;
    }
    err << "unknown subcommand '" << o.subcommand << "'\n" << kUsage;
    return 2;
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Desk-scale modality-specific mixture-of-experts pretraining"};
    app.require_subcommand(1);
    CliOptions o;
    std::vector<std::string> sets;
    bool no_moe = false, no_route = false, no_cst = false;
    std::string config_path, out_dir, dump_routing, dump_data, checkpoint;
    std::uint64_t seed = 0;
    std::size_t steps = 0;

    auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", seed, "Global seed"); };
    auto add_training = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
        add_seed(sub);
        sub->add_option("--steps", steps, "Training steps");
        sub->add_option("--out", out_dir, "Run directory base (default $MIDOL_OUT or ./runs)");
        sub->add_option("--dump-routing", dump_routing, "Write the routing CSV here");
        sub->add_option("--dump-data", dump_data, "Write the evaluation data CSV here");
        sub->add_option("--set", sets, "Override any config key: key=value");
        sub->add_flag("--no-moe", no_moe, "Single shared projection head");
        sub->add_flag("--no-route", no_route, "Disable the routing consistency loss");
        sub->add_flag("--no-cst", no_cst, "Disable the intra-modality contrastive loss");
    };

    auto* vi = app.add_subcommand("verify-identities", "Information identity sweep");
    vi->add_option("--tables", o.tables, "Number of random tables")->check(CLI::PositiveNumber);
    vi->add_option("--max-card", o.max_cardinality, "Largest alphabet size")
        ->check(CLI::Range(1, 64));
    add_seed(vi);
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient sweep");
    gc->add_option("--points", o.points, "Points per op")->check(CLI::PositiveNumber);
    add_seed(gc);
    add_training(app.add_subcommand("train", "One training run"));
    auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint");
    ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    add_seed(ev);
    ev->add_option("--out", out_dir, "Run directory base (default $MIDOL_OUT or ./runs)");
    ev->add_option("--dump-routing", dump_routing, "Write the routing CSV here");
    ev->add_option("--dump-data", dump_data, "Write the evaluation data CSV here");
    add_training(app.add_subcommand("ablate", "The four ablation rows with a shared seed"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << '\n' << kUsage;
        return 2;
    }

    const CLI::App* sub = app.get_subcommands().front();
    o.subcommand = sub->get_name();
    auto given = [&](const char* flag) {
        const CLI::Option* opt = sub->get_option_no_throw(flag);
        return opt && opt->count() > 0;
    };
    if (given("--config")) o.config_path = config_path;
    if (given("--seed")) o.seed = seed;
    if (given("--out")) o.out = out_dir;
    if (given("--dump-routing")) o.dump_routing = dump_routing;
    if (given("--dump-data")) o.dump_data = dump_data;
    if (given("--checkpoint")) o.checkpoint = checkpoint;
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            err << "--set expects key=value, got '" << s << "'\n" << kUsage;
            return 2;
        }
        o.overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (given("--steps")) o.overrides.emplace_back("steps", std::to_string(steps));
    if (no_moe) o.overrides.emplace_back("enable_moe", "false");
    if (no_route) o.overrides.emplace_back("enable_route", "false");
    if (no_cst) o.overrides.emplace_back("enable_cst", "false");
    return dispatch(o, out, err);
}

}  // namespace midol
