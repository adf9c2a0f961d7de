#include "doctest.h"

#include <cmath>
#include <random>
#include <stdexcept>

#include "midol/autodiff.hpp"
#include "midol/gradcheck.hpp"

using namespace midol;

namespace {

DenseArray random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    DenseArray a = DenseArray::matrix(r, c);
    for (double& v : a.storage()) v = u(rng);
    return a;
}

}  // namespace

TEST_CASE("softmax examples") {
    auto s = softmax(Var::constant(DenseArray::matrix(1, 2, {1.0, 0.0}))).value();
    CHECK(s(0, 0) == doctest::Approx(0.731059).epsilon(1e-6));
    CHECK(s(0, 1) == doctest::Approx(0.268941).epsilon(1e-6));
    auto big = softmax(Var::constant(DenseArray::matrix(1, 2, {1000.0, 0.0}))).value();
    CHECK(big.all_finite());
    CHECK(big(0, 0) == doctest::Approx(1.0));
    CHECK_THROWS_AS(softmax(Var::constant(DenseArray::matrix(1, 2)), 0.0), std::invalid_argument);
}

TEST_CASE("log rejects non-positive input") {
    CHECK_THROWS_AS(log(Var::constant(DenseArray::matrix(1, 2, {1.0, 0.0}))), std::domain_error);
}

TEST_CASE("backward needs a scalar root") {
    auto x = Var::parameter(DenseArray::matrix(2, 2, 1.0));
    CHECK_THROWS_AS(backward(exp(x)), std::invalid_argument);
}

TEST_CASE("gradients accumulate across backward calls") {
    auto x = Var::parameter(DenseArray::matrix(1, 3, {1, 2, 3}));
    backward(sum(scale(x, 2.0)));
    backward(sum(scale(x, 2.0)));
    for (double g : x.grad().data()) CHECK(g == 4.0);
    x.zero_grad();
    for (double g : x.grad().data()) CHECK(g == 0.0);
}

TEST_CASE("a reused node receives the sum of both paths") {
    auto x = Var::parameter(DenseArray::matrix(1, 1, {3.0}));
    auto y = hadamard(x, x);  // x^2
    backward(sum(add(y, scale(x, 5.0))));
    CHECK(x.grad()(0, 0) == doctest::Approx(11.0));
}

TEST_CASE("constants and detached values stop gradient") {
    auto x = Var::parameter(DenseArray::matrix(1, 2, {0.5, -0.5}));
    auto d = exp(x).detach();
    CHECK_FALSE(d.requires_grad());
    auto loss = sum(hadamard(x, d));
    backward(loss);
    auto e = exp(x).value();
    CHECK(x.grad()(0, 0) == doctest::Approx(e(0, 0)));
    CHECK(x.grad()(0, 1) == doctest::Approx(e(0, 1)));
    CHECK_FALSE(sum(exp(Var::constant(DenseArray::matrix(1, 1)))).requires_grad());
}

TEST_CASE("l2 normalize leaves unit rows and zero rows") {
    auto a = l2_normalize_rows(Var::constant(DenseArray::matrix(2, 2, {3, 4, 0, 0}))).value();
    CHECK(a(0, 0) == doctest::Approx(0.6));
    CHECK(a(0, 1) == doctest::Approx(0.8));
    CHECK(a(1, 0) == 0.0);
}

TEST_CASE("cosine similarity is bounded and symmetric") {
    std::mt19937_64 rng(3);
    auto a = random_matrix(5, 4, rng);
    auto s = cosine_similarity_matrix(Var::constant(a), Var::constant(a)).value();
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(s(i, i) == doctest::Approx(1.0));
        for (std::size_t j = 0; j < 5; ++j) {
            CHECK(std::abs(s(i, j)) <= 1.0 + 1e-12);
            CHECK(s(i, j) == doctest::Approx(s(j, i)));
        }
    }
}

TEST_CASE("select_rows scatters gradient onto repeated rows") {
    auto x = Var::parameter(DenseArray::matrix(3, 1, {1, 2, 3}));
    const std::size_t rows[] = {2, 2, 0};
    backward(sum(select_rows(x, rows)));
    CHECK(x.grad()(0, 0) == 1.0);
    CHECK(x.grad()(1, 0) == 0.0);
    CHECK(x.grad()(2, 0) == 2.0);
    const std::size_t bad[] = {3};
    CHECK_THROWS_AS(select_rows(x, bad), std::invalid_argument);
}

TEST_CASE("row broadcast add sums bias gradient over rows") {
    auto a = Var::parameter(DenseArray::matrix(3, 2, 0.0));
    auto b = Var::parameter(DenseArray::matrix(1, 2, 0.0));
    backward(sum(add(a, b)));
    CHECK(b.grad()(0, 0) == 3.0);
    CHECK(b.grad()(0, 1) == 3.0);
    CHECK_THROWS_AS(add(a, Var::constant(DenseArray::matrix(2, 2))), std::invalid_argument);
}

TEST_CASE("grad_check flags a wrong gradient") {
    // relu at exactly zero: analytic derivative 0, central difference 0.5.
    auto f = [](const Var& x) { return sum(relu(x)); };
    CHECK(grad_check(f, DenseArray::matrix(1, 1, {0.0})) > 0.1);
}

TEST_CASE("primitive and loss gradients match finite differences") {
    for (const GradcheckRow& row : gradcheck_sweep(7, 20)) {
        INFO(row.op);
        CHECK(row.max_rel_error < kGradcheckTolerance);
        CHECK(row.pass);
    }
}
