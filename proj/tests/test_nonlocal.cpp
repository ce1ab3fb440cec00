#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "nledn/autodiff.hpp"

using namespace nledn;

namespace {

// Independent O((HW)^2) oracle, written directly from the definition:
//   theta_i = Wt F_i + bt   (per position i)
//   f_ij    = <theta_i, phi_j>
//   y_i     = sum_j w_ij g_j, softmax or raw-sum row normalization.
// Everything in double; no shared code with the implementation.
std::vector<double> nonlocal_oracle(const Tensor& f, const Tensor& wt, const Tensor& wp,
                                    const Tensor& wg, const Tensor& bt, const Tensor& bp,
                                    const Tensor& bg, bool softmax) {
    const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
    const int ce = wt.dim(0);
    const int p = h * w;

    auto embed = [&](const Tensor& wm, const Tensor& bm) {
        std::vector<double> out(static_cast<std::size_t>(ce) * p);
        for (int co = 0; co < ce; ++co) {
            for (int i = 0; i < p; ++i) {
                double acc = bm[co];
                for (int ci = 0; ci < c; ++ci) {
                    acc += static_cast<double>(wm.data[static_cast<std::size_t>(co) * c + ci]) *
                           f.data[static_cast<std::size_t>(ci) * p + i];
                }
                out[static_cast<std::size_t>(co) * p + i] = acc;
            }
        }
        return out;
    };
    const auto theta = embed(wt, bt);
    const auto phi = embed(wp, bp);
    const auto g = embed(wg, bg);

    std::vector<double> y(static_cast<std::size_t>(ce) * p, 0.0);
    for (int i = 0; i < p; ++i) {
        std::vector<double> row(static_cast<std::size_t>(p));
        for (int j = 0; j < p; ++j) {
            double dot = 0.0;
            for (int co = 0; co < ce; ++co) {
                dot += theta[static_cast<std::size_t>(co) * p + i] *
                       phi[static_cast<std::size_t>(co) * p + j];
            }
            row[static_cast<std::size_t>(j)] = dot;
        }
        if (softmax) {
            double m = row[0];
            for (double v : row) m = std::max(m, v);
            double s = 0.0;
            for (auto& v : row) {
                v = std::exp(v - m);
                s += v;
            }
            for (auto& v : row) v /= s;
        } else {
            double s = 0.0;
            for (double v : row) s += v;
            const double d = std::abs(s) < 1e-6 ? std::copysign(1e-6, s) : s;
            for (auto& v : row) v /= d;
        }
        for (int co = 0; co < ce; ++co) {
            double acc = 0.0;
            for (int j = 0; j < p; ++j) {
                acc += row[static_cast<std::size_t>(j)] * g[static_cast<std::size_t>(co) * p + j];
            }
            y[static_cast<std::size_t>(co) * p + i] = acc;
        }
    }
    return y;
}

Tensor random_map(std::vector<int> shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    t.fill_uniform(rng, -1.0f, 1.0f);
    return t;
}

// max-norm relative error between implementation and oracle
double max_norm_rel_err(const Tensor& impl, const std::vector<double>& oracle) {
    double max_abs = 0.0, max_diff = 0.0;
    for (std::int64_t i = 0; i < impl.numel(); ++i) {
        max_abs = std::max(max_abs, std::abs(oracle[static_cast<std::size_t>(i)]));
        max_diff = std::max(max_diff,
                            std::abs(impl[i] - oracle[static_cast<std::size_t>(i)]));
    }
    return max_diff / (max_abs + 1e-12);
}

Tensor run_impl(const Tensor& f, const Tensor& wt, const Tensor& wp, const Tensor& wg,
                const Tensor& bt, const Tensor& bp, const Tensor& bg, AffinityMode mode) {
    Engine eng(false);
    auto L = [&](const Tensor& t) { return eng.leaf(t, false); };
    return nonlocal_affinity_apply(eng, L(f), L(wt), L(wp), L(wg), L(bt), L(bp), L(bg), mode)
        .v();
}

struct Fixture {
    Tensor f, wt, wp, wg, bt, bp, bg;
};

Fixture make_fixture(int c, int h, int w, std::uint64_t seed) {
    const int ce = std::max(1, c / 2);
    Fixture fx;
    fx.f = random_map({c, h, w}, hash_seed(seed, 1));
    fx.wt = random_map({ce, c, 1, 1}, hash_seed(seed, 2));
    fx.wp = random_map({ce, c, 1, 1}, hash_seed(seed, 3));
    fx.wg = random_map({ce, c, 1, 1}, hash_seed(seed, 4));
    fx.bt = random_map({ce}, hash_seed(seed, 5));
    fx.bp = random_map({ce}, hash_seed(seed, 6));
    fx.bg = random_map({ce}, hash_seed(seed, 7));
    return fx;
}

}  // namespace

TEST_CASE("softmax mode matches the double-loop oracle on 50 random maps") {
    Rng shapes(2024);
    for (int trial = 0; trial < 50; ++trial) {
        const int c = shapes.uniform_int(1, 8);
        const int h = shapes.uniform_int(1, 8);
        const int w = shapes.uniform_int(1, 8);
        Fixture fx = make_fixture(c, h, w, hash_seed(77, static_cast<std::uint64_t>(trial)));
        Tensor y = run_impl(fx.f, fx.wt, fx.wp, fx.wg, fx.bt, fx.bp, fx.bg,
                            AffinityMode::kSoftmax);
        const auto oracle =
            nonlocal_oracle(fx.f, fx.wt, fx.wp, fx.wg, fx.bt, fx.bp, fx.bg, true);
        CHECK(max_norm_rel_err(y, oracle) < 1e-5);
    }
}

TEST_CASE("raw-sum mode matches the oracle away from the denominator guard") {
    Rng shapes(4096);
    int done = 0;
    std::uint64_t seed = 0;
    while (done < 20) {
        ++seed;
        const int c = shapes.uniform_int(2, 8);
        const int h = shapes.uniform_int(2, 6);
        const int w = shapes.uniform_int(2, 6);
        Fixture fx = make_fixture(c, h, w, hash_seed(99, seed));

        // raw-sum amplifies error near zero row sums (the reason softmax is
        // the default); only well-conditioned draws are meaningful here
        kernels::AffinitySaved saved;
        {
            Engine eng(false);
            auto L = [&](const Tensor& t) { return eng.leaf(t, false); };
            Var theta = conv2d(eng, L(fx.f), L(fx.wt), L(fx.bt), 0);
            Var phi = conv2d(eng, L(fx.f), L(fx.wp), L(fx.bp), 0);
            Var g = conv2d(eng, L(fx.f), L(fx.wg), L(fx.bg), 0);
            kernels::affinity_forward(theta.v(), phi.v(), g.v(), AffinityMode::kRawSum, &saved);
        }
        double min_abs = 1e30;
        for (double s : saved.row_sums) min_abs = std::min(min_abs, std::abs(s));
        if (min_abs < 0.05) continue;

        Tensor y = run_impl(fx.f, fx.wt, fx.wp, fx.wg, fx.bt, fx.bp, fx.bg,
                            AffinityMode::kRawSum);
        const auto oracle =
            nonlocal_oracle(fx.f, fx.wt, fx.wp, fx.wg, fx.bt, fx.bp, fx.bg, false);
        CHECK(max_norm_rel_err(y, oracle) < 1e-4);
        ++done;
    }
}

TEST_CASE("softmax affinity rows sum to 1") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        Fixture fx = make_fixture(6, 8, 8, seed);
        Engine eng(false);
        auto L = [&](const Tensor& t) { return eng.leaf(t, false); };
        Var theta = conv2d(eng, L(fx.f), L(fx.wt), L(fx.bt), 0);
        Var phi = conv2d(eng, L(fx.f), L(fx.wp), L(fx.bp), 0);
        Var g = conv2d(eng, L(fx.f), L(fx.wg), L(fx.bg), 0);
        kernels::AffinitySaved saved;
        kernels::affinity_forward(theta.v(), phi.v(), g.v(), AffinityMode::kSoftmax, &saved);
        const int p = saved.positions;
        for (int i = 0; i < p; ++i) {
            double s = 0.0;
            for (int j = 0; j < p; ++j) s += saved.weights[static_cast<std::size_t>(i) * p + j];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("single position reduces to g(F) in both modes") {
    Fixture fx = make_fixture(4, 1, 1, 123);
    Engine eng(false);
    auto L = [&](const Tensor& t) { return eng.leaf(t, false); };
    const Tensor g = conv2d(eng, L(fx.f), L(fx.wg), L(fx.bg), 0).v();

    for (AffinityMode mode : {AffinityMode::kSoftmax, AffinityMode::kRawSum}) {
        Tensor y = run_impl(fx.f, fx.wt, fx.wp, fx.wg, fx.bt, fx.bp, fx.bg, mode);
        REQUIRE(y.numel() == g.numel());
        for (std::int64_t i = 0; i < y.numel(); ++i) {
            CHECK(y[i] == doctest::Approx(g[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("two identical positions give 0.5/0.5 weights and the mean of g") {
    // 1x2 map where both positions carry the same feature vector
    Tensor f({3, 1, 2});
    for (int c = 0; c < 3; ++c) {
        f.at3(c, 0, 0) = 0.3f * static_cast<float>(c + 1);
        f.at3(c, 0, 1) = f.at3(c, 0, 0);
    }
    Fixture fx = make_fixture(3, 1, 2, 55);
    fx.f = f;

    Engine eng(false);
    auto L = [&](const Tensor& t) { return eng.leaf(t, false); };
    Var theta = conv2d(eng, L(fx.f), L(fx.wt), L(fx.bt), 0);
    Var phi = conv2d(eng, L(fx.f), L(fx.wp), L(fx.bp), 0);
    Var g = conv2d(eng, L(fx.f), L(fx.wg), L(fx.bg), 0);
    kernels::AffinitySaved saved;
    Tensor y = kernels::affinity_forward(theta.v(), phi.v(), g.v(), AffinityMode::kSoftmax,
                                         &saved);

    for (int i = 0; i < 2; ++i) {
        CHECK(saved.weights[static_cast<std::size_t>(i) * 2 + 0] == doctest::Approx(0.5));
        CHECK(saved.weights[static_cast<std::size_t>(i) * 2 + 1] == doctest::Approx(0.5));
    }
    const int ce = y.dim(0);
    for (int c = 0; c < ce; ++c) {
        const float mean = 0.5f * (g.v().at3(c, 0, 0) + g.v().at3(c, 0, 1));
        CHECK(y.at3(c, 0, 0) == doctest::Approx(mean).epsilon(1e-6));
        CHECK(y.at3(c, 0, 1) == doctest::Approx(mean).epsilon(1e-6));
    }
}
