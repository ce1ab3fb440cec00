#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nledn/autodiff.hpp"

using namespace nledn;

namespace {

Var tracked_leaf(Engine& eng, Tensor t) { return eng.leaf(std::move(t), true); }

}  // namespace

TEST_CASE("loss = sum(x) gives all-ones gradient") {
    Engine eng;
    Var x = tracked_leaf(eng, Tensor({2, 3, 3}, 0.5f));
    Var loss = reduce_sum(eng, x);
    eng.backward(loss);
    const Tensor* g = eng.grad(x);
    REQUIRE(g != nullptr);
    for (std::int64_t i = 0; i < g->numel(); ++i) CHECK((*g)[i] == 1.0f);
}

TEST_CASE("fan-out accumulates: loss = sum(x + x) gives all-twos") {
    Engine eng;
    Var x = tracked_leaf(eng, Tensor({1, 2, 2}, 1.0f));
    Var loss = reduce_sum(eng, add(eng, x, x));
    eng.backward(loss);
    const Tensor* g = eng.grad(x);
    REQUIRE(g != nullptr);
    for (std::int64_t i = 0; i < g->numel(); ++i) CHECK((*g)[i] == 2.0f);
}

TEST_CASE("backward twice on one tape is an error") {
    Engine eng;
    Var x = tracked_leaf(eng, Tensor({1, 1, 1}, 2.0f));
    Var loss = reduce_sum(eng, x);
    eng.backward(loss);
    CHECK_THROWS_AS(eng.backward(loss), Error);
}

TEST_CASE("backward requires a scalar loss") {
    Engine eng;
    Var x = tracked_leaf(eng, Tensor({1, 2, 2}, 1.0f));
    Var y = relu(eng, x);
    CHECK_THROWS_WITH_AS(eng.backward(y), doctest::Contains("scalar"), Error);
}

TEST_CASE("untracked graphs stay off the tape") {
    Engine eng;
    Var x = eng.leaf(Tensor({1, 2, 2}, 1.0f), false);
    Var y = relu(eng, add(eng, x, x));
    CHECK_FALSE(y.tracked());
    CHECK(eng.size() == 0);
}

TEST_CASE("recording-disabled engine computes values only") {
    Engine eng(false);
    Var x = eng.leaf(Tensor({1, 2, 2}, -1.0f), true);
    CHECK_FALSE(x.tracked());
    Var y = relu(eng, x);
    for (std::int64_t i = 0; i < y.v().numel(); ++i) CHECK(y.v()[i] == 0.0f);
    Var s = reduce_sum(eng, y);
    CHECK_THROWS_AS(eng.backward(s), Error);
}

TEST_CASE("gradients reach only requires_grad leaves") {
    Engine eng;
    Var x = eng.leaf(Tensor({1, 2, 2}, 1.0f), true);
    Var c = eng.leaf(Tensor({1, 2, 2}, 3.0f), false);
    Var loss = reduce_sum(eng, add(eng, x, c));
    eng.backward(loss);
    CHECK(eng.grad(x) != nullptr);
    CHECK(eng.grad(c) == nullptr);
}

TEST_CASE("mae loss values and subgradient at ties") {
    Engine eng;
    Var pred = tracked_leaf(eng, Tensor({1, 2, 2}, std::vector<float>{1.0f, 2.0f, 3.0f, 4.0f}));
    Var target = eng.leaf(Tensor({1, 2, 2}, std::vector<float>{1.0f, 2.4f, 2.6f, 4.0f}), false);
    Var loss = mae_loss(eng, pred, target);
    CHECK(loss.v()[0] == doctest::Approx(0.2).epsilon(1e-6));
    eng.backward(loss);
    const Tensor* g = eng.grad(pred);
    REQUIRE(g != nullptr);
    CHECK((*g)[0] == 0.0f);  // exact tie -> 0 subgradient
    CHECK((*g)[1] == doctest::Approx(-0.25).epsilon(1e-6));
    CHECK((*g)[2] == doctest::Approx(0.25).epsilon(1e-6));
    CHECK((*g)[3] == 0.0f);
}

TEST_CASE("mae: identical inputs give zero, constant offset gives the offset") {
    Engine eng(false);
    Tensor a({3, 4, 4}, 0.3f);
    Tensor b({3, 4, 4}, 0.5f);
    CHECK(kernels::mae(a, a) == 0.0f);
    CHECK(kernels::mae(b, a) == doctest::Approx(0.2).epsilon(1e-6));
}

TEST_CASE("weighted_sum projects and backpropagates its weights") {
    Engine eng;
    Var x = tracked_leaf(eng, Tensor({1, 1, 2}, std::vector<float>{3.0f, 4.0f}));
    Tensor w({1, 1, 2}, std::vector<float>{2.0f, -1.0f});
    Var loss = weighted_sum(eng, x, w);
    CHECK(loss.v()[0] == 2.0f);
    eng.backward(loss);
    const Tensor* g = eng.grad(x);
    REQUIRE(g != nullptr);
    CHECK((*g)[0] == 2.0f);
    CHECK((*g)[1] == -1.0f);
}

TEST_CASE("per-op finite check flags non-finite outputs when enabled") {
    Engine eng;
    eng.set_check_finite(true);
    Tensor x({1, 1, 1}, std::numeric_limits<float>::infinity());
    Var xv = eng.leaf(std::move(x), true);
    Tensor w({1, 1, 1, 1}, 1.0f);
    Tensor b({1}, 0.0f);
    CHECK_THROWS_WITH_AS(conv2d(eng, xv, eng.leaf(std::move(w), false),
                                eng.leaf(std::move(b), false), 0),
                         doctest::Contains("non-finite"), Error);
}
