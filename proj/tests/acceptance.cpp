// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "midol/gradcheck.hpp"
#include "midol/infodecomp.hpp"
#include "midol/moe.hpp"
#include "midol/trainer.hpp"

using namespace midol;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("%s criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void information_identities() {
    const auto t0 = Clock::now();
    const info::SweepResult s = info::sweep_identities(1000, 4, 20240601);
    const double xor_ii = info::trivariate_mi(info::xor_table());
    const double xor_err = std::abs(xor_ii + std::log(2.0));
    const double secs = seconds_since(t0);
    const bool pass = s.tables_checked == 1000 && s.max_abs_residual_mi_split < 1e-10 &&
                      s.max_abs_residual_entropy_form < 1e-10 && s.max_abs_residual_objective < 1e-10 &&
                      xor_err < 1e-12 && secs < 5.0;
    report(1, "information identities", pass,
           fmt("tables=%zu residuals=%.2e/%.2e/%.2e xor_err=%.2e time=%.2fs", s.tables_checked,
               s.max_abs_residual_mi_split, s.max_abs_residual_entropy_form,
               s.max_abs_residual_objective, xor_err, secs));
}

void gradient_suite() {
    const auto t0 = Clock::now();
    const auto rows = gradcheck_sweep(7, 100);
    const double secs = seconds_since(t0);
    bool pass = secs < 30.0 && !rows.empty();
    double worst = 0.0;
    std::string worst_op;
    for (const auto& r : rows) {
        pass = pass && r.points == 100 && r.max_rel_error < 1e-5;
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_op = r.op;
        }
    }
    report(2, "gradient suite", pass,
           fmt("ops=%zu worst=%.2e (%s) time=%.2fs", rows.size(), worst, worst_op.c_str(), secs));
}

void sinkhorn_balance() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    double row_err = 0.0, col_err = 0.0, scale_err = 0.0;
    for (int t = 0; t < 200; ++t) {
        DenseArray a = DenseArray::matrix(16, 4);
        for (double& v : a.storage()) v = u(rng);
        const DenseArray s = sinkhorn_knopp(a, {3});
        const DenseArray ref = sinkhorn_knopp(a, {1000});
        for (std::size_t r = 0; r < 16; ++r) {
            double sum = 0.0;
            for (double v : s.row(r)) sum += v;
            row_err = std::max(row_err, std::abs(sum - 1.0));
        }
        for (std::size_t c = 0; c < 4; ++c) {
            double cs = 0.0, cr = 0.0;
            for (std::size_t r = 0; r < 16; ++r) {
                cs += s(r, c);
                cr += ref(r, c);
            }
            col_err = std::max(col_err, std::abs(cs - cr));
        }
        DenseArray b = a;
        const double k = std::exp(4.0 * u(rng) - 2.0);
        for (double& v : b.storage()) v *= k;
        const DenseArray sb = sinkhorn_knopp(b, {3});
        for (std::size_t i = 0; i < s.size(); ++i) scale_err = std::max(scale_err, std::abs(s[i] - sb[i]));
    }
    const double secs = seconds_since(t0);
    report(3, "sinkhorn balance", row_err < 1e-6 && col_err < 1e-6 && scale_err < 1e-12 && secs < 5.0,
           fmt("row_err=%.2e col_err_vs_1000=%.2e scale_err=%.2e time=%.2fs", row_err, col_err,
               scale_err, secs));
}

struct Trained {
    RunResult run;
    std::string stream;
    double seconds = 0.0;
};

Trained train(TrainConfig config) {
    Trained t;
    const auto t0 = Clock::now();
    t.run = run_training(config, [&](const std::string& line) { t.stream += line; });
    t.seconds = seconds_since(t0);
    return t;
}

TrainConfig config_for(std::uint64_t seed, bool route, bool cst) {
    TrainConfig c;
    c.seed = seed;
    c.enable_moe = true;
    c.enable_route = route;
    c.enable_cst = cst;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string exports(const Trained& t, const TrainConfig& config, const fs::path& dir) {
    fs::create_directories(dir);
    const SyntheticBatch data = evaluation_batch(make_world(config), config);
    export_embeddings(t.run.state, config, data, dir / "embeddings.csv", true);
    export_embeddings(t.run.state, config, data, dir / "encoder_embeddings.csv", false);
    return slurp(dir / "embeddings.csv") + slurp(dir / "encoder_embeddings.csv");
}

}  // namespace

int main() {
    information_identities();
    gradient_suite();
    sinkhorn_balance();

    const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<Trained> full, no_route, no_cst;
    for (auto s : seeds) {
        full.push_back(train(config_for(s, true, true)));
        no_route.push_back(train(config_for(s, false, false)));
        no_cst.push_back(train(config_for(s, true, false)));
        std::printf("# seed %llu trained: full %.1fs, no-route %.1fs, no-cst %.1fs\n",
                    static_cast<unsigned long long>(s), full.back().seconds,
                    no_route.back().seconds, no_cst.back().seconds);
        std::fflush(stdout);
    }
    double slowest = 0.0;
    for (const auto* group : {&full, &no_route, &no_cst})
        for (const auto& t : *group) slowest = std::max(slowest, t.seconds);

    {
        bool specific = true;
        std::string detail;
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            const RoutingReport& r = *full[i].run.final_eval.routing;
            specific = specific && r.purity >= 0.95 && r.load_entropy >= 0.9 * std::log(3.0);
            detail += fmt("s%zu purity=%.3f H=%.3f; ", i + 1, r.purity, r.load_entropy);
        }
        std::size_t collapsed = 0;
        for (const auto& t : no_route) collapsed += t.run.final_eval.routing->collapse_flag ? 1 : 0;
        detail += fmt("no-route collapse %zu/5; slowest run %.1fs", collapsed, slowest);
        report(4, "routing specificity", specific && collapsed >= 4 && slowest < 600.0, detail);
    }

    {
        double full_sub = 0.0, cst_sub = 0.0, min_mod = 1.0;
        std::string detail;
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            const ProbeReport& a = *full[i].run.final_eval.probe;
            const ProbeReport& b = *no_cst[i].run.final_eval.probe;
            full_sub += a.subcluster_accuracy / 5.0;
            cst_sub += b.subcluster_accuracy / 5.0;
            min_mod = std::min({min_mod, a.modality_accuracy, b.modality_accuracy});
            detail += fmt("s%zu %.3f/%.3f; ", i + 1, a.subcluster_accuracy, b.subcluster_accuracy);
        }
        const double gap = full_sub - cst_sub;
        detail += fmt("mean full=%.3f no-cst=%.3f gap=%.3f min modality=%.3f", full_sub, cst_sub, gap, min_mod);
        report(5, "intra-modality diversity", gap >= 0.05 && full_sub >= 0.90 && min_mod >= 0.99, detail);
    }

    {
        std::size_t decreasing = 0;
        double worst_sum = 0.0;
        std::size_t records = 0;
        std::string detail;
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            const auto& h = full[i].run.history;
            const std::size_t w = std::max<std::size_t>(1, h.size() / 10);
            double first = 0.0, last = 0.0;
            for (std::size_t k = 0; k < w; ++k) {
                first += h[k].l_route / static_cast<double>(w);
                last += h[h.size() - w + k].l_route / static_cast<double>(w);
            }
            if (last < first) ++decreasing;
            detail += fmt("s%zu %.3f->%.3f; ", i + 1, first, last);

            std::istringstream lines(full[i].stream);
            std::string line;
            while (std::getline(lines, line)) {
                const auto j = nlohmann::json::parse(line);
                if (!j.contains("total")) continue;
                ++records;
                worst_sum = std::max(worst_sum, std::abs(j["total"].get<double>() -
                                                         (j["l_route"].get<double>() + j["l_cst"].get<double>())));
            }
        }
        detail += fmt("decreasing %zu/5; loss records=%zu max|total-sum|=%.2e", decreasing, records, worst_sum);
        report(6, "loss dynamics", decreasing == 5 && records == 5 * TrainConfig{}.steps && worst_sum <= 1e-12,
               detail);
    }

    {
        const TrainConfig config = config_for(1, true, true);
        const Trained again = train(config);
        const fs::path base = fs::temp_directory_path() / "midol-acceptance";
        fs::remove_all(base);
        const std::string first = exports(full[0], config, base / "a");
        const std::string second = exports(again, config, base / "b");
        const bool same_stream = full[0].stream == again.stream;
        const bool same_export = !first.empty() && first == second;
        fs::remove_all(base);
        report(7, "determinism", same_stream && same_export,
               fmt("metrics %zu bytes %s, exports %zu bytes %s", again.stream.size(),
                   same_stream ? "identical" : "differ", second.size(), same_export ? "identical" : "differ"));
    }

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
