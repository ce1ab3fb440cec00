#include "nledn/gradcheck.hpp"

namespace nledn::gradcheck {

namespace {

constexpr double kKernelTol = 1e-4;
constexpr double kEndToEndTol = 1e-3;

DTensor projection(const std::vector<int>& shape, Rng& rng) {
    DTensor w(shape);
    w.fill_uniform(rng, 0.5, 1.5);
    for (auto& v : w.data) {
        if (rng.bernoulli(0.5)) v = -v;
    }
    return w;
}

KernelReport report(const std::string& name, const CheckResult& r, double tol = kKernelTol) {
    return {name, r.max_rel_err, tol, r.entries_checked};
}

}  // namespace

std::vector<KernelReport> run_kernel_suite(std::uint64_t seed) {
    std::vector<KernelReport> out;
    Rng rng(hash_seed(seed, 0x6b65726eULL));

    // conv2d, 3x3 and 1x1
    {
        DTensor x = random_tensor({3, 6, 6}, rng);
        DTensor w = random_tensor({4, 3, 3, 3}, rng);
        DTensor b = random_tensor({4}, rng);
        DTensor proj = projection({4, 6, 6}, rng);
        auto build = [proj](DEngine& eng, const std::vector<DVar>& in) {
            return weighted_sum(eng, conv2d(eng, in[0], in[1], in[2], 1), proj);
        };
        out.push_back(report("conv2d_3x3", check({x, w, b}, build)));
    }
    {
        DTensor x = random_tensor({4, 5, 5}, rng);
        DTensor w = random_tensor({2, 4, 1, 1}, rng);
        DTensor b = random_tensor({2}, rng);
        DTensor proj = projection({2, 5, 5}, rng);
        auto build = [proj](DEngine& eng, const std::vector<DVar>& in) {
            return weighted_sum(eng, conv2d(eng, in[0], in[1], in[2], 0), proj);
        };
        out.push_back(report("conv2d_1x1", check({x, w, b}, build)));
    }

    // elementwise
    {
        DTensor x = away_from_zero(random_tensor({2, 4, 4}, rng));
        DTensor proj = projection({2, 4, 4}, rng);
        auto build = [proj](DEngine& eng, const std::vector<DVar>& in) {
            return weighted_sum(eng, relu(eng, in[0]), proj);
        };
        out.push_back(report("relu", check({x}, build)));
    }
    {
        DTensor x = random_tensor({2, 4, 4}, rng, -2.0, 2.0);
        DTensor proj = projection({2, 4, 4}, rng);
        auto build = [proj](DEngine& eng, const std::vector<DVar>& in) {
            return weighted_sum(eng, tanh_act(eng, in[0]), proj);
        };
        out.push_back(report("tanh", check({x}, build)));
    }
    {
        DTensor a = random_tensor({2, 3, 3}, rng);
        DTensor b = random_tensor({2, 3, 3}, rng);
        DTensor proj = projection({2, 3, 3}, rng);
        auto build = [proj](DEngine& eng, const std::vector<DVar>& in) {
            return weighted_sum(eng, add(eng, in[0], in[1]), proj);
        };
        out.push_back(report("add", check({a, b}, build)));
    }
    {
        DTensor x = random_tensor({2, 3, 3}, rng);
        DTensor proj = projection({2, 3, 3}, rng);
        auto build = [proj](DEngine& eng, const std::vector<DVar>& in) {
            return weighted_sum(eng, scale(eng, in[0], -1.7), proj);
        };
        out.push_back(report("scale", check({x}, build)));
    }

    // concat with fan-out: one input feeds two slots
    {
        DTensor a = random_tensor({2, 3, 3}, rng);
        DTensor b = random_tensor({1, 3, 3}, rng);
        DTensor proj = projection({5, 3, 3}, rng);
        auto build = [proj](DEngine& eng, const std::vector<DVar>& in) {
            return weighted_sum(eng, concat_channels(eng, {in[0], in[1], in[0]}), proj);
        };
        out.push_back(report("concat_channels", check({a, b}, build)));
    }

    // pooling pair
    {
        DTensor x = separate_pool_windows(random_tensor({2, 6, 6}, rng));
        DTensor proj = projection({2, 3, 3}, rng);
        auto build = [proj](DEngine& eng, const std::vector<DVar>& in) {
            auto [pooled, ind] = max_pool2d(eng, in[0]);
            return weighted_sum(eng, pooled, proj);
        };
        out.push_back(report("max_pool2d", check({x}, build)));
    }
    {
        // indices fixed from a side map; gradient flows through values only
        auto [pooled, ind] = kernels::max_pool2d(random_tensor({2, 6, 6}, rng));
        auto indices = std::make_shared<PoolIndices>(ind);
        DTensor y = random_tensor({2, 3, 3}, rng);
        DTensor proj = projection({2, 6, 6}, rng);
        auto build = [proj, indices](DEngine& eng, const std::vector<DVar>& in) {
            return weighted_sum(eng, max_unpool2d(eng, in[0], indices), proj);
        };
        out.push_back(report("max_unpool2d", check({y}, build)));
    }

    // attention core, both normalization modes
    for (AffinityMode mode : {AffinityMode::kSoftmax, AffinityMode::kRawSum}) {
        DTensor theta = random_tensor({2, 3, 3}, rng);
        DTensor phi = random_tensor({2, 3, 3}, rng);
        DTensor g = random_tensor({2, 3, 3}, rng);
        if (mode == AffinityMode::kRawSum) {
            // keep row sums of the logits away from the epsilon guard
            for (int attempt = 0; attempt < 64; ++attempt) {
                kernels::AffinitySaved saved;
                kernels::affinity_forward(theta, phi, g, mode, &saved);
                double min_abs = 1e30;
                for (double s : saved.row_sums) min_abs = std::min(min_abs, std::abs(s));
                if (min_abs > 1e-2) break;
                theta = random_tensor({2, 3, 3}, rng);
                phi = random_tensor({2, 3, 3}, rng);
            }
        }
        DTensor proj = projection({2, 3, 3}, rng);
        auto build = [proj, mode](DEngine& eng, const std::vector<DVar>& in) {
            return weighted_sum(eng, affinity_attend(eng, in[0], in[1], in[2], mode), proj);
        };
        out.push_back(report(mode == AffinityMode::kSoftmax ? "affinity_softmax"
                                                            : "affinity_raw_sum",
                             check({theta, phi, g}, build)));
    }

    // full non-local operation including the 1x1 embeddings
    {
        DTensor f = random_tensor({4, 3, 3}, rng);
        DTensor wt = random_tensor({2, 4, 1, 1}, rng);
        DTensor wp = random_tensor({2, 4, 1, 1}, rng);
        DTensor wg = random_tensor({2, 4, 1, 1}, rng);
        DTensor bt = random_tensor({2}, rng);
        DTensor bp = random_tensor({2}, rng);
        DTensor bg = random_tensor({2}, rng);
        DTensor proj = projection({2, 3, 3}, rng);
        auto build = [proj](DEngine& eng, const std::vector<DVar>& in) {
            return weighted_sum(eng,
                                nonlocal_affinity_apply(eng, in[0], in[1], in[2], in[3], in[4],
                                                        in[5], in[6], AffinityMode::kSoftmax),
                                proj);
        };
        out.push_back(report("nonlocal_affinity_apply", check({f, wt, wp, wg, bt, bp, bg}, build)));
    }

    // region partition / merge round trip as one differentiable pipeline
    {
        DTensor x = random_tensor({2, 4, 4}, rng);
        DTensor proj = projection({2, 4, 4}, rng);
        auto build = [proj](DEngine& eng, const std::vector<DVar>& in) {
            auto parts = region_partition(eng, in[0], 2);
            return weighted_sum(eng, region_merge(eng, parts, 2), proj);
        };
        out.push_back(report("region_partition_merge", check({x}, build)));
    }

    // reductions and loss
    {
        DTensor x = random_tensor({2, 4, 4}, rng);
        auto build = [](DEngine& eng, const std::vector<DVar>& in) {
            return reduce_sum(eng, in[0]);
        };
        out.push_back(report("reduce_sum", check({x}, build)));
    }
    {
        DTensor a = random_tensor({3, 4, 4}, rng);
        DTensor b = a;
        Rng offs(hash_seed(seed, 0x6d6165ULL));
        for (auto& v : b.data) {
            const double d = offs.uniform(0.1, 0.4);
            v += offs.bernoulli(0.5) ? d : -d;  // keep |a-b| off the kink
        }
        auto build = [](DEngine& eng, const std::vector<DVar>& in) {
            return mae_loss(eng, in[0], in[1]);
        };
        out.push_back(report("mae_loss", check({a, b}, build)));
    }

    return out;
}

KernelReport run_end_to_end(std::uint64_t seed, int image_size, int sampled_parameters) {
    ModelConfig cfg;
    cfg.base_channels = 4;
    cfg.growth_rate = 2;
    cfg.dense_layers = 2;
    cfg.seed = seed;
    if (image_size >= 24) {
        cfg.base_channels = 6;
        cfg.dense_layers = 3;
    }

    NlednModelT<double> model = NlednModel(cfg).cast<double>();

    // randomize every tensor (including the zero-init fusion/exit convs) so
    // no gradient path is degenerate
    Rng noise(hash_seed(seed, 0x656e64ULL));
    std::vector<DTensor> params;
    params.reserve(model.num_tensors());
    for (std::size_t i = 0; i < model.num_tensors(); ++i) {
        DTensor t = *model.tensor(i);
        for (auto& v : t.data) v += noise.uniform(-0.2, 0.2);
        params.push_back(std::move(t));
    }

    DTensor input({3, image_size, image_size});
    input.fill_uniform(noise, 0.0, 1.0);

    // target constructed at a safe distance from the base prediction so the
    // MAE kink never enters the finite-difference window
    DTensor target;
    {
        for (std::size_t i = 0; i < params.size(); ++i) *model.tensor(i) = params[i];
        EngineT<double> eng(false);
        auto out = model.forward(eng, {std::make_shared<DTensor>(input), -1});
        target = out.restored.v();
        for (auto& v : target.data) {
            const double d = noise.uniform(0.1, 0.4);
            v += noise.bernoulli(0.5) ? d : -d;
        }
    }

    const int samples = std::max(1, sampled_parameters);

    // analytic gradients via the model's own leaf binding
    std::vector<DTensor> grads;
    {
        for (std::size_t i = 0; i < params.size(); ++i) *model.tensor(i) = params[i];
        DEngine eng;
        std::vector<DVar> leaves;
        DVar in = eng.leaf(std::make_shared<DTensor>(input), false);
        auto out = model.forward(eng, in, nullptr, &leaves);
        DVar tgt = eng.leaf(std::make_shared<DTensor>(target), false);
        DVar loss = mae_loss(eng, out.restored, tgt);
        eng.backward(loss);
        for (const auto& leaf : leaves) {
            const DTensor* g = eng.grad(leaf);
            grads.push_back(g ? *g : DTensor(leaf.v().shape));
        }
    }

    auto eval = [&]() {
        DEngine eng(false);
        DVar in = eng.leaf(std::make_shared<DTensor>(input), false);
        auto out = model.forward(eng, in);
        return kernels::mae(out.restored.v(), target);
    };

    const double h = 1e-4;
    Rng pick(hash_seed(seed, 0x73616d70ULL));
    KernelReport rep;
    rep.name = image_size >= 24 ? "end_to_end_small" : "end_to_end_micro";
    rep.tolerance = kEndToEndTol;
    for (int s = 0; s < samples; ++s) {
        const std::size_t ti = static_cast<std::size_t>(
            pick.uniform_int(0, static_cast<int>(params.size()) - 1));
        const std::int64_t k = pick.uniform_int(0, static_cast<int>(params[ti].numel()) - 1);
        DTensor& live = *model.tensor(ti);
        const double saved = live[k];
        live[k] = saved + h;
        const double up = eval();
        live[k] = saved - h;
        const double down = eval();
        live[k] = saved;
        const double fd = (up - down) / (2.0 * h);
        rep.max_rel_err = std::max(rep.max_rel_err, rel_err(fd, grads[ti][k]));
        ++rep.entries;
    }
    return rep;
}

}  // namespace nledn::gradcheck
