#include "doctest.h"

#include <cmath>
#include <random>
#include <stdexcept>

#include "midol/moe.hpp"
#include "oracles.hpp"

using namespace midol;

namespace {

DenseArray positive_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.01, 1.0);
    DenseArray a = DenseArray::matrix(r, c);
    for (double& v : a.storage()) v = u(rng);
    return a;
}

oracle::Mat to_oracle(const DenseArray& a) { return {a.rows(), a.cols(), a.storage()}; }

}  // namespace

TEST_CASE("sinkhorn matches the loop oracle") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 50; ++t) {
        const DenseArray a = positive_matrix(16, 4, rng);
        const DenseArray s = sinkhorn_knopp(a);
        const oracle::Mat o = oracle::sinkhorn(to_oracle(a), 3);
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - o.v[i]) < 1e-14);
    }
}

TEST_CASE("sinkhorn rows sum to one and is scale invariant") {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 50; ++t) {
        const DenseArray a = positive_matrix(16, 4, rng);
        const DenseArray s = sinkhorn_knopp(a);
        for (std::size_t r = 0; r < 16; ++r) {
            double sum = 0;
            for (double v : s.row(r)) sum += v;
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
        DenseArray b = a;
        for (double& v : b.storage()) v *= 37.5;
        const DenseArray sb = sinkhorn_knopp(b);
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - sb[i]) < 1e-12);
    }
}

TEST_CASE("sinkhorn converges toward balanced columns") {
    std::mt19937_64 rng(13);
    const DenseArray a = positive_matrix(16, 4, rng);
    const DenseArray s = sinkhorn_knopp(a, {1000});
    for (std::size_t c = 0; c < 4; ++c) {
        double sum = 0;
        for (std::size_t r = 0; r < 16; ++r) sum += s(r, c);
        CHECK(std::abs(sum - 4.0) < 1e-9);
    }
}

TEST_CASE("log-domain sinkhorn agrees with the plain one") {
    std::mt19937_64 rng(14);
    for (int t = 0; t < 20; ++t) {
        const DenseArray a = positive_matrix(12, 3, rng);
        DenseArray l = a;
        for (double& v : l.storage()) v = std::log(v);
        const DenseArray p = sinkhorn_knopp(a), q = sinkhorn_knopp_log(l);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);
    }
    // logits far outside exp's range stay finite
    DenseArray extreme = DenseArray::matrix(4, 2, {900, -900, -900, 900, 800, 0, 0, 800});
    CHECK(sinkhorn_knopp_log(extreme).all_finite());
}

TEST_CASE("sinkhorn errors") {
    CHECK_THROWS_AS(sinkhorn_knopp(DenseArray::matrix(4, 2, 1.0), {0}), std::invalid_argument);
    CHECK_THROWS_AS(sinkhorn_knopp(DenseArray::matrix(2, 4, 1.0)), std::invalid_argument);
    auto z = DenseArray::matrix(4, 2, 1.0);
    z(1, 1) = 0.0;
    CHECK_THROWS_AS(sinkhorn_knopp(z), std::invalid_argument);
}

TEST_CASE("select_expert picks the lowest index on ties") {
    const double tie[] = {0.4, 0.4, 0.2};
    CHECK(select_expert(tie) == 0);
    const double late[] = {0.1, 0.2, 0.7};
    CHECK(select_expert(late) == 2);
}

TEST_CASE("student routing is the softmax of router logits") {
    Rng rng(5);
    const MoeParams moe = init_moe({4, 6, 3, 3}, rng);
    std::mt19937_64 g(6);
    const DenseArray x = positive_matrix(5, 4, g);
    const RoutingMatrix r = route_student(bind(moe, false), Var::constant(x));
    const DenseArray logits = matmul(x, moe.router);
    for (std::size_t i = 0; i < 5; ++i) {
        double z = 0;
        for (std::size_t k = 0; k < 3; ++k) z += std::exp(logits(i, k));
        for (std::size_t k = 0; k < 3; ++k)
            CHECK(r.scores(i, k) == doctest::Approx(std::exp(logits(i, k)) / z).epsilon(1e-14));
    }
    CHECK(r.mode == RoutingMode::student_softmax);
}

TEST_CASE("teacher routing is sinkhorn of sharpened logits") {
    Rng rng(7);
    const MoeParams moe = init_moe({4, 6, 3, 3}, rng);
    std::mt19937_64 g(8);
    const DenseArray x = positive_matrix(9, 4, g);
    const RoutingMatrix r = route_teacher(moe, x, 0.5);
    DenseArray e = matmul(x, moe.router);
    for (double& v : e.storage()) v = std::exp(v / 0.5);
    const oracle::Mat o = oracle::sinkhorn(to_oracle(e), 3);
    for (std::size_t i = 0; i < o.v.size(); ++i) CHECK(std::abs(r.scores[i] - o.v[i]) < 1e-12);
    CHECK(r.mode == RoutingMode::teacher_sinkhorn);
    CHECK_FALSE(r.node);
    CHECK_THROWS_AS(route_teacher(moe, x, 0.0), std::invalid_argument);
}

TEST_CASE("expert outputs are unit rows, graph and plain paths agree") {
    Rng rng(9);
    const MoeParams moe = init_moe({}, rng);
    std::mt19937_64 g(10);
    const DenseArray x = positive_matrix(6, 16, g);
    for (std::size_t i = 0; i < moe.expert_count(); ++i) {
        const DenseArray a = expert_forward(bind(moe, false), Var::constant(x), i).value();
        const DenseArray b = expert_apply(moe, x, i);
        CHECK(a.shape() == std::vector<std::size_t>{6, 16});
        for (std::size_t r = 0; r < 6; ++r) {
            double n = 0;
            for (double v : a.row(r)) n += v * v;
            CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
        }
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) < 1e-14);
    }
    CHECK_THROWS_AS(expert_apply(moe, x, 5), std::out_of_range);
}

TEST_CASE("moe init and parameter order") {
    Rng rng(1);
    CHECK_THROWS_AS(init_moe({4, 4, 4, 1}, rng), std::invalid_argument);
    MoeParams moe = init_moe({4, 6, 3, 2}, rng);
    const auto named = named_params(moe, "");
    CHECK(named.front().first == "router");
    CHECK(named[1].first == "expert0.up.weight");
    CHECK(named.back().first == "projection.bias");
    CHECK(named.size() == 1 + 2 * 4 + 2);
    const auto vars = param_vars(bind(moe, true));
    REQUIRE(vars.size() == named.size());
    for (std::size_t i = 0; i < vars.size(); ++i)
        CHECK(vars[i].value().storage() == named[i].second->storage());
}

TEST_CASE("hard routes are argmax of router logits") {
    MoeParams moe;
    Rng rng(2);
    moe = init_moe({2, 3, 2, 2}, rng);
    moe.router = DenseArray::matrix(2, 2, {1, 0, 0, 1});
    const auto routes = hard_routes(moe, DenseArray::matrix(3, 2, {2, 1, 0, 3, 1, 1}));
    CHECK(routes == std::vector<std::size_t>{0, 1, 0});
}
