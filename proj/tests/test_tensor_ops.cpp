#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nledn/kernels.hpp"

using namespace nledn;
namespace k = nledn::kernels;

namespace {

Tensor make(std::vector<int> shape, std::vector<float> data) {
    return Tensor(std::move(shape), std::move(data));
}

Tensor random_map(std::vector<int> shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    t.fill_uniform(rng, lo, hi);
    return t;
}

}  // namespace

TEST_CASE("conv2d zero input produces bias everywhere") {
    Tensor x({2, 4, 4}, 0.0f);
    Tensor w = random_map({3, 2, 3, 3}, 7);
    Tensor b = make({3}, {0.5f, -1.25f, 2.0f});
    Tensor y = k::conv2d_forward(x, w, b, 1);
    REQUIRE(y.shape == std::vector<int>({3, 4, 4}));
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 16; ++i) CHECK(y.plane(c)[i] == b[c]);
    }
}

TEST_CASE("conv2d identity kernel is the identity map") {
    Tensor x = make({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor w({1, 1, 3, 3}, 0.0f);
    w.data[4] = 1.0f;  // center tap
    Tensor b({1}, 0.0f);
    Tensor y = k::conv2d_forward(x, w, b, 1);
    for (int i = 0; i < 9; ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-7));

    // resolution-preserving on a larger random map too
    Tensor x2 = random_map({3, 8, 8}, 11);
    Tensor w2({3, 3, 3, 3}, 0.0f);
    for (int c = 0; c < 3; ++c) w2.data[(static_cast<std::size_t>(c) * 3 + c) * 9 + 4] = 1.0f;
    Tensor y2 = k::conv2d_forward(x2, w2, Tensor({3}, 0.0f), 1);
    for (std::int64_t i = 0; i < x2.numel(); ++i) {
        CHECK(std::abs(y2[i] - x2[i]) <= 1e-7f);
    }
}

TEST_CASE("conv2d 1x1 hand-computed case") {
    Tensor x = make({1, 2, 2}, {1, 2, 3, 4});
    Tensor w = make({1, 1, 1, 1}, {2});
    Tensor b = make({1}, {1});
    Tensor y = k::conv2d_forward(x, w, b, 0);
    CHECK(y[0] == 3.0f);
    CHECK(y[1] == 5.0f);
    CHECK(y[2] == 7.0f);
    CHECK(y[3] == 9.0f);
}

TEST_CASE("conv2d matches a naive six-loop oracle on random shapes") {
    // independent direct evaluation of the cross-correlation definition
    auto oracle = [](const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
        const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
        const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
        const int oh = h + 2 * pad - kh + 1, ow = wd + 2 * pad - kw + 1;
        Tensor y({cout, oh, ow});
        for (int co = 0; co < cout; ++co) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = b[co];
                    for (int ci = 0; ci < cin; ++ci) {
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy + ky - pad, ix = ox + kx - pad;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                                acc += static_cast<double>(
                                           w.data[((static_cast<std::size_t>(co) * cin + ci) *
                                                       kh +
                                                   ky) *
                                                      kw +
                                                  kx]) *
                                       x.at3(ci, iy, ix);
                            }
                        }
                    }
                    y.at3(co, oy, ox) = static_cast<float>(acc);
                }
            }
        }
        return y;
    };

    Rng shapes(314);
    for (int trial = 0; trial < 20; ++trial) {
        const int cin = shapes.uniform_int(1, 4);
        const int cout = shapes.uniform_int(1, 4);
        const int k = 2 * shapes.uniform_int(0, 2) + 1;  // 1, 3, 5
        const int h = shapes.uniform_int(k, 9);
        const int w = shapes.uniform_int(k, 9);
        const int pad = (k - 1) / 2;
        Tensor x = random_map({cin, h, w}, hash_seed(42, static_cast<std::uint64_t>(trial)));
        Tensor wt = random_map({cout, cin, k, k}, hash_seed(43, static_cast<std::uint64_t>(trial)));
        Tensor b = random_map({cout}, hash_seed(44, static_cast<std::uint64_t>(trial)));

        const Tensor got = k::conv2d_forward(x, wt, b, pad);
        const Tensor want = oracle(x, wt, b, pad);
        REQUIRE(got.same_shape(want));
        for (std::int64_t i = 0; i < got.numel(); ++i) {
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-4));
        }
    }
}

TEST_CASE("conv2d channel mismatch names both shapes") {
    Tensor x({2, 4, 4}, 0.0f);
    Tensor w({1, 3, 3, 3}, 0.0f);
    Tensor b({1}, 0.0f);
    CHECK_THROWS_WITH_AS(k::conv2d_forward(x, w, b, 1),
                         doctest::Contains("input channels"), Error);
}

TEST_CASE("max_pool2d picks window maxima and argmax indices") {
    Tensor x = make({1, 2, 2}, {1, 2, 3, 4});
    auto [y, ind] = k::max_pool2d(x);
    REQUIRE(y.numel() == 1);
    CHECK(y[0] == 4.0f);
    CHECK(ind.idx[0] == 3);
}

TEST_CASE("max_pool2d breaks ties toward the smallest flat index") {
    Tensor x({2, 4, 4}, 0.75f);
    auto [y, ind] = k::max_pool2d(x);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.75f);
    // each window's winner is its top-left corner
    CHECK(ind.idx[0] == 0);
    CHECK(ind.idx[1] == 2);
    CHECK(ind.idx[2] == 8);
    CHECK(ind.idx[3] == 10);
}

TEST_CASE("max_pool2d rejects odd spatial dims") {
    Tensor x({1, 3, 4}, 0.0f);
    CHECK_THROWS_WITH_AS(k::max_pool2d(x), doctest::Contains("pad"), Error);
}

TEST_CASE("max_pool2d gradient routes to the argmax only") {
    Tensor x = make({1, 2, 2}, {1, 2, 3, 4});
    auto [y, ind] = k::max_pool2d(x);
    Tensor gy({1, 1, 1}, 1.0f);
    Tensor gx = k::max_pool2d_backward(gy, ind);
    CHECK(gx[0] == 0.0f);
    CHECK(gx[1] == 0.0f);
    CHECK(gx[2] == 0.0f);
    CHECK(gx[3] == 1.0f);
}

TEST_CASE("unpool(pool(x)) scatters maxima back to their positions") {
    Tensor x = random_map({3, 8, 8}, 21, 0.0f, 1.0f);
    auto [y, ind] = k::max_pool2d(x);
    Tensor up = k::max_unpool2d(y, ind);
    REQUIRE(up.same_shape(x));

    int nonzero = 0;
    for (std::int64_t i = 0; i < up.numel(); ++i) {
        if (up[i] != 0.0f) {
            CHECK(up[i] == x[i]);  // value sits at its original position
            ++nonzero;
        }
    }
    CHECK(nonzero <= 3 * 4 * 4);
}

TEST_CASE("pool-unpool roundtrip is exact for nonnegative maps") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Tensor x = random_map({2, 4, 4}, hash_seed(seed, 1), -1.0f, 1.0f);
        auto [pooled, ind] = k::max_pool2d(x);
        Tensor y = random_map({2, 2, 2}, hash_seed(seed, 2), 0.0f, 1.0f);
        auto [roundtrip, ind2] = k::max_pool2d(k::max_unpool2d(y, ind));
        for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(roundtrip[i] == y[i]);
    }
}

TEST_CASE("max_unpool2d output has at most one nonzero per window per channel") {
    Tensor x = random_map({2, 6, 6}, 33);
    auto [y, ind] = k::max_pool2d(x);
    Tensor up = k::max_unpool2d(y, ind);
    for (int c = 0; c < 2; ++c) {
        const float* p = up.plane(c);
        for (int wy = 0; wy < 3; ++wy) {
            for (int wx = 0; wx < 3; ++wx) {
                int nonzero = 0;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        if (p[(2 * wy + dy) * 6 + 2 * wx + dx] != 0.0f) ++nonzero;
                    }
                }
                CHECK(nonzero <= 1);
            }
        }
    }
}

TEST_CASE("max_unpool2d rejects out-of-bounds indices") {
    PoolIndices ind;
    ind.channels = 1;
    ind.out_h = ind.out_w = 1;
    ind.src_h = ind.src_w = 2;
    ind.idx = {9};
    Tensor x({1, 1, 1}, 1.0f);
    CHECK_THROWS_WITH_AS(k::max_unpool2d(x, ind), doctest::Contains("corrupt"), Error);
}

TEST_CASE("concat_channels stacks in argument order") {
    Tensor a = make({1, 2, 2}, {1, 2, 3, 4});
    Tensor b = make({1, 2, 2}, {5, 6, 7, 8});
    Tensor y = k::concat_channels<float>({&a, &b});
    REQUIRE(y.shape == std::vector<int>({2, 2, 2}));
    for (int i = 0; i < 4; ++i) {
        CHECK(y[i] == a[i]);
        CHECK(y[4 + i] == b[i]);
    }

    // single-input concat is the identity
    Tensor solo = k::concat_channels<float>({&a});
    CHECK(solo.data == a.data);
}

TEST_CASE("concat_channels rejects spatial mismatch") {
    Tensor a({1, 2, 2}, 0.0f);
    Tensor b({1, 3, 3}, 0.0f);
    CHECK_THROWS_WITH_AS((k::concat_channels<float>({&a, &b})),
                         doctest::Contains("(1,3,3)"), Error);
}

TEST_CASE("region partition/merge round-trips bitwise") {
    for (int grid : {1, 2, 4, 8}) {
        Tensor x = random_map({3, 16, 16}, static_cast<std::uint64_t>(grid) * 101);
        Tensor merged({3, 16, 16}, 0.0f);
        for (int ry = 0; ry < grid; ++ry) {
            for (int rx = 0; rx < grid; ++rx) {
                Tensor part = k::region_slice(x, grid, ry, rx);
                k::region_scatter_add(merged, part, grid, ry, rx);
            }
        }
        CHECK(merged.data == x.data);
    }
}

TEST_CASE("region k=2 on 4x4 takes the expected top-left tile") {
    Tensor x = random_map({1, 4, 4}, 5);
    Tensor tile = k::region_slice(x, 2, 0, 0);
    REQUIRE(tile.shape == std::vector<int>({1, 2, 2}));
    CHECK(tile.at3(0, 0, 0) == x.at3(0, 0, 0));
    CHECK(tile.at3(0, 0, 1) == x.at3(0, 0, 1));
    CHECK(tile.at3(0, 1, 0) == x.at3(0, 1, 0));
    CHECK(tile.at3(0, 1, 1) == x.at3(0, 1, 1));
}

TEST_CASE("region grid must divide the map") {
    Tensor x({1, 6, 6}, 0.0f);
    CHECK_THROWS_AS(k::region_slice(x, 4, 0, 0), Error);
}

TEST_CASE("elementwise basics") {
    Tensor x = make({1, 1, 3}, {-1.0f, 0.0f, 2.0f});
    Tensor r = k::relu(x);
    CHECK(r[0] == 0.0f);
    CHECK(r[1] == 0.0f);
    CHECK(r[2] == 2.0f);

    Tensor t = k::tanh_map(x);
    CHECK(t[1] == 0.0f);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        CHECK(t[i] > -1.0f);
        CHECK(t[i] < 1.0f);
    }

    Tensor zero({1, 1, 3}, 0.0f);
    CHECK(k::add(x, zero).data == x.data);

    Tensor s = k::scale(x, -2.0f);
    CHECK(s[2] == -4.0f);
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor({0, 3}), Error);
    CHECK_THROWS_AS(Tensor({2}, std::vector<float>{1.0f}), Error);
    Tensor t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(static_cast<std::int64_t>(t.data.size()) == numel_of(t.shape));
}
