#pragma once

// Central finite-difference verification of the reverse-mode gradients.
// Runs entirely in double; the CLI's `gradcheck` command and the test
// suites both drive these routines. Input generators nudge values away
// from subgradient kinks (relu at 0, |.| at ties, near-tied pool windows)
// so the checks measure gradient correctness, not kink luck.

#include <functional>
#include <string>
#include <vector>

#include "nledn/autodiff.hpp"
#include "nledn/model.hpp"

namespace nledn::gradcheck {

using DTensor = TensorT<double>;
using DVar = VarT<double>;
using DEngine = EngineT<double>;

// Builds a scalar loss from leaf handles; must be deterministic and free
// of hidden state so it can be re-evaluated under perturbation.
using BuildFn = std::function<DVar(DEngine&, const std::vector<DVar>&)>;

struct CheckResult {
    double max_rel_err = 0.0;
    std::int64_t entries_checked = 0;
};

inline double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / denom;
}

// Compares tape gradients against (f(x+h)-f(x-h))/2h for every entry of
// every input (or `sample_per_input` random entries when >= 0).
inline CheckResult check(const std::vector<DTensor>& inputs, const BuildFn& build,
                         double h = 1e-4, int sample_per_input = -1,
                         std::uint64_t sample_seed = 1) {
    std::vector<DTensor> work = inputs;

    auto eval = [&]() {
        DEngine eng(/*recording=*/false);
        std::vector<DVar> leaves;
        leaves.reserve(work.size());
        for (auto& t : work) leaves.push_back(eng.leaf(std::make_shared<DTensor>(t), false));
        return build(eng, leaves).v()[0];
    };

    // analytic gradients
    std::vector<DTensor> grads;
    {
        DEngine eng;
        std::vector<DVar> leaves;
        leaves.reserve(work.size());
        for (auto& t : work) leaves.push_back(eng.leaf(std::make_shared<DTensor>(t), true));
        DVar loss = build(eng, leaves);
        eng.backward(loss);
        for (const auto& leaf : leaves) {
            const DTensor* g = eng.grad(leaf);
            grads.push_back(g ? *g : DTensor(leaf.v().shape));
        }
    }

    Rng rng(sample_seed);
    CheckResult result;
    for (std::size_t i = 0; i < work.size(); ++i) {
        std::vector<std::int64_t> entries;
        const std::int64_t n = work[i].numel();
        if (sample_per_input < 0 || sample_per_input >= n) {
            entries.resize(static_cast<std::size_t>(n));
            for (std::int64_t k = 0; k < n; ++k) entries[static_cast<std::size_t>(k)] = k;
        } else {
            for (int k = 0; k < sample_per_input; ++k) {
                entries.push_back(rng.uniform_int(0, static_cast<int>(n) - 1));
            }
        }
        for (std::int64_t k : entries) {
            const double saved = work[i][k];
            work[i][k] = saved + h;
            const double up = eval();
            work[i][k] = saved - h;
            const double down = eval();
            work[i][k] = saved;
            const double fd = (up - down) / (2.0 * h);
            result.max_rel_err = std::max(result.max_rel_err, rel_err(fd, grads[i][k]));
            ++result.entries_checked;
        }
    }
    return result;
}

struct KernelReport {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    std::int64_t entries = 0;
    bool pass() const { return max_rel_err < tolerance; }
};

// ---------------------------------------------------------------------------
// input generators
// ---------------------------------------------------------------------------

inline DTensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
    DTensor t(std::move(shape));
    t.fill_uniform(rng, lo, hi);
    return t;
}

// keeps |x| >= margin so relu / |.| kinks stay outside the FD window
inline DTensor away_from_zero(DTensor t, double margin = 0.05) {
    for (auto& v : t.data) {
        if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
    }
    return t;
}

// widens the top-two gap of every 2x2 window so the argmax is stable
// under +-h perturbations
inline DTensor separate_pool_windows(DTensor t, double margin = 0.02) {
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    for (int ci = 0; ci < c; ++ci) {
        double* p = t.plane(ci);
        for (int y = 0; y < h; y += 2) {
            for (int x = 0; x < w; x += 2) {
                const int at[4] = {y * w + x, y * w + x + 1, (y + 1) * w + x,
                                   (y + 1) * w + x + 1};
                int best = 0;
                for (int k = 1; k < 4; ++k) {
                    if (p[at[k]] > p[at[best]]) best = k;
                }
                double second = -1e30;
                for (int k = 0; k < 4; ++k) {
                    if (k != best) second = std::max(second, p[at[k]]);
                }
                if (p[at[best]] - second < margin) p[at[best]] += margin;
            }
        }
    }
    return t;
}

std::vector<KernelReport> run_kernel_suite(std::uint64_t seed);
KernelReport run_end_to_end(std::uint64_t seed, int image_size, int sampled_parameters);

}  // namespace nledn::gradcheck
