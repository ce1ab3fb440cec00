#pragma once

// The NLEDN graph: entrance convolutions, non-locally enhanced dense
// blocks arranged either as a pooled encoder-decoder (three blocks down,
// three up, index-guided unpooling, additive skips) or as a flat cascade,
// and a tanh rain-map exit added back onto the input.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nledn/autodiff.hpp"
#include "nledn/rng.hpp"

namespace nledn {

struct ModelConfig {
    int base_channels = 64;
    int growth_rate = 32;
    int dense_layers = 4;  // densely connected 3x3 convs per block; 1x1 fusion follows
    std::array<int, 3> encoder_grids{8, 4, 2};
    std::array<int, 3> decoder_grids{1, 2, 4};  // 1 = global
    bool nonlocal_enabled = true;
    bool dense_connections = true;
    bool pooling_enabled = true;
    int num_blocks = 6;  // flat cascade length when pooling is off
    AffinityMode affinity_mode = AffinityMode::kSoftmax;
    std::uint64_t seed = 0;

    int embed_channels() const { return std::max(1, base_channels / 2); }
    int block_count() const { return pooling_enabled ? 6 : num_blocks; }

    void validate() const {
        if (base_channels < 1 || growth_rate < 1 || dense_layers < 1) {
            throw Error("model config: channels, growth rate, and dense layers must be >= 1");
        }
        if (!pooling_enabled && num_blocks < 1) {
            throw Error("model config: num_blocks must be >= 1");
        }
        auto check_grid = [](int k) {
            if (k < 1 || k > 8 || (k & (k - 1)) != 0) {
                throw Error("model config: grid sizes must be powers of two in [1,8], got " +
                            std::to_string(k));
            }
        };
        for (int k : encoder_grids) check_grid(k);
        for (int k : decoder_grids) check_grid(k);
    }
};

// Ablation ladder from single plain block (Ra) to the full model (Rf).
// Variants reuse the base config's channel plan and seed.
enum class Variant { Ra, Rb, Rc, Rd, Re, Rf };

inline ModelConfig apply_variant(ModelConfig base, Variant v) {
    switch (v) {
        case Variant::Ra:
            base.num_blocks = 1;
            base.dense_connections = false;
            base.pooling_enabled = false;
            base.nonlocal_enabled = false;
            break;
        case Variant::Rb:
            base.num_blocks = 1;
            base.dense_connections = true;
            base.pooling_enabled = false;
            base.nonlocal_enabled = false;
            break;
        case Variant::Rc:
            base.num_blocks = 6;
            base.dense_connections = true;
            base.pooling_enabled = false;
            base.nonlocal_enabled = false;
            break;
        case Variant::Rd:
            base.num_blocks = 6;
            base.dense_connections = true;
            base.pooling_enabled = true;
            base.nonlocal_enabled = false;
            break;
        case Variant::Re:
            base.num_blocks = 6;
            base.dense_connections = true;
            base.pooling_enabled = false;
            base.nonlocal_enabled = true;
            break;
        case Variant::Rf:
            base.num_blocks = 6;
            base.dense_connections = true;
            base.pooling_enabled = true;
            base.nonlocal_enabled = true;
            break;
    }
    return base;
}

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Ra: return "Ra";
        case Variant::Rb: return "Rb";
        case Variant::Rc: return "Rc";
        case Variant::Rd: return "Rd";
        case Variant::Re: return "Re";
        case Variant::Rf: return "Rf";
    }
    return "?";
}

inline bool parse_variant(const std::string& s, Variant& out) {
    for (Variant v : {Variant::Ra, Variant::Rb, Variant::Rc, Variant::Rd, Variant::Re,
                      Variant::Rf}) {
        if (s == variant_name(v)) {
            out = v;
            return true;
        }
    }
    return false;
}

// Closed-form parameter count for a config; the constructor asserts the
// instantiated tensors sum to exactly this.
inline std::int64_t count_parameters(const ModelConfig& cfg) {
    auto conv = [](std::int64_t cin, std::int64_t cout, std::int64_t k) {
        return cout * cin * k * k + cout;
    };
    const std::int64_t c = cfg.base_channels, g = cfg.growth_rate, l = cfg.dense_layers;
    const std::int64_t ce = cfg.embed_channels();

    std::int64_t block = 0;
    if (cfg.nonlocal_enabled) block += 3 * conv(c, ce, 1) + conv(ce, c, 1);
    for (int i = 0; i < l; ++i) {
        const std::int64_t in = cfg.dense_connections ? c + i * g : (i == 0 ? c : g);
        block += conv(in, g, 3);
    }
    block += conv(cfg.dense_connections ? c + l * g : g, c, 1);

    std::int64_t total = conv(3, c, 3) + conv(c, c, 3);  // entrance
    total += cfg.block_count() * block;
    total += conv(c, c, 3) + conv(c, 3, 3);  // exit
    return total;
}

// Hook for tests to observe or rewrite pooling indices between the encoder
// and decoder (wiring-liveness checks, index dumps).
struct ForwardHooks {
    std::function<void(int stage, PoolIndices&)> on_pool_indices;
};

template <class T>
struct ForwardResultT {
    VarT<T> restored;  // unclamped I0 + R; feed this to the loss
    VarT<T> rain_map;  // R in (-1,1)
};

template <class T>
class NlednModelT {
public:
    ModelConfig config;

    explicit NlednModelT(const ModelConfig& cfg) : config(cfg) {
        cfg.validate();
        build_parameters();
        if (parameter_count() != count_parameters(cfg)) {
            throw Error("parameter count mismatch: instantiated " +
                        std::to_string(parameter_count()) + " vs closed form " +
                        std::to_string(count_parameters(cfg)));
        }
    }

    std::size_t num_tensors() const { return params_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    const std::shared_ptr<TensorT<T>>& tensor(std::size_t i) const { return params_[i]; }

    std::shared_ptr<TensorT<T>> find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("model has no parameter named '" + name + "'");
        return params_[it->second];
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p->numel();
        return n;
    }

    // Draws 3x3 kernels from a fan-in-scaled uniform distribution and zeros
    // every 1x1 fusion conv plus the final exit conv, so a fresh model is
    // the identity map (rain map 0). Deterministic in config.seed.
    void init_parameters() {
        Rng rng(hash_seed(config.seed, 0x4e4c45444eULL));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            TensorT<T>& p = *params_[i];
            if (zero_init_[i] || p.rank() == 1) {
                p.fill(T(0));
                continue;
            }
            const double fan_in = static_cast<double>(p.dim(1)) * p.dim(2) * p.dim(3);
            const double bound = std::sqrt(6.0 / fan_in);
            p.fill_uniform(rng, static_cast<T>(-bound), static_cast<T>(bound));
        }
    }

    template <class U>
    NlednModelT<U> cast() const {
        NlednModelT<U> out(config);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            *out.params_[i] = params_[i]->template cast<U>();
        }
        return out;
    }

    // Builds the graph on the engine's tape. When `param_leaves` is given,
    // every parameter is registered as a gradient leaf (training /
    // gradient checks) and the handles are returned there in tensor order;
    // otherwise parameters enter the graph as constants.
    ForwardResultT<T> forward(EngineT<T>& eng, const VarT<T>& input,
                              const ForwardHooks* hooks = nullptr,
                              std::vector<VarT<T>>* param_leaves = nullptr) const {
        const TensorT<T>& in = input.v();
        if (in.rank() != 3 || in.dim(0) != 3) {
            throw Error("forward: input must be (3,H,W), got " + shape_str(in.shape));
        }
        if (in.dim(1) % 8 != 0 || in.dim(2) % 8 != 0) {
            throw Error("forward: spatial dims must be multiples of 8, got " +
                        shape_str(in.shape) + "; pad the input first");
        }

        std::vector<VarT<T>> leaves;
        leaves.reserve(params_.size());
        for (const auto& p : params_) leaves.push_back(eng.leaf(p, param_leaves != nullptr));
        if (param_leaves) *param_leaves = leaves;

        auto P = [&](const std::string& n) -> const VarT<T>& {
            auto it = index_.find(n);
            if (it == index_.end()) throw Error("model has no parameter named '" + n + "'");
            return leaves[it->second];
        };
        auto conv = [&](const VarT<T>& x, const std::string& n, int k) {
            return conv2d(eng, x, P(n + ".weight"), P(n + ".bias"), (k - 1) / 2);
        };

        VarT<T> f0 = relu(eng, conv(input, "entrance.0", 3));
        VarT<T> f1 = relu(eng, conv(f0, "entrance.1", 3));

        VarT<T> x = f1;
        if (config.pooling_enabled) {
            std::array<VarT<T>, 3> enc_out;
            std::array<std::shared_ptr<PoolIndices>, 3> indices;
            for (int s = 0; s < 3; ++s) {
                x = nedb(eng, P, x, s, config.encoder_grids[static_cast<std::size_t>(s)]);
                enc_out[static_cast<std::size_t>(s)] = x;
                auto [pooled, ind] = max_pool2d(eng, x);
                if (hooks && hooks->on_pool_indices) hooks->on_pool_indices(s, *ind);
                x = pooled;
                indices[static_cast<std::size_t>(s)] = ind;
            }
            for (int s = 0; s < 3; ++s) {
                x = nedb(eng, P, x, 3 + s, config.decoder_grids[static_cast<std::size_t>(s)]);
                x = max_unpool2d(eng, x, indices[static_cast<std::size_t>(2 - s)]);
                const VarT<T>& skip = (s == 2) ? f1 : enc_out[static_cast<std::size_t>(2 - s)];
                x = add(eng, x, skip);
            }
        } else {
            // Flat cascade; region grid fixed to the finest encoder grid.
            for (int b = 0; b < config.num_blocks; ++b) {
                x = nedb(eng, P, x, b, config.encoder_grids[0]);
            }
        }

        VarT<T> e = conv(x, "exit.0", 3);
        e = add(eng, e, f0);
        e = conv(e, "exit.1", 3);
        VarT<T> rain = tanh_act(eng, e);
        VarT<T> restored = add(eng, input, rain);
        return {restored, rain};
    }

private:
    template <class U>
    friend class NlednModelT;

    template <class Lookup>
    VarT<T> nedb(EngineT<T>& eng, const Lookup& lookup, const VarT<T>& f, int block,
                 int grid) const {
        const std::string pre = "block" + std::to_string(block) + ".";
        auto P = [&](const std::string& n) -> const VarT<T>& { return lookup(pre + n); };

        VarT<T> x = f;
        if (config.nonlocal_enabled) {
            const int h = f.v().dim(1), w = f.v().dim(2);
            if (h % grid != 0 || w % grid != 0) {
                throw Error("nedb: grid " + std::to_string(grid) +
                            " does not divide feature map " + shape_str(f.v().shape));
            }
            VarT<T> theta = conv2d(eng, f, P("nl.theta.weight"), P("nl.theta.bias"), 0);
            VarT<T> phi = conv2d(eng, f, P("nl.phi.weight"), P("nl.phi.bias"), 0);
            VarT<T> g = conv2d(eng, f, P("nl.g.weight"), P("nl.g.bias"), 0);
            VarT<T> y;
            if (grid == 1) {
                y = affinity_attend(eng, theta, phi, g, config.affinity_mode);
            } else {
                std::vector<VarT<T>> parts;
                parts.reserve(static_cast<std::size_t>(grid) * grid);
                for (int ry = 0; ry < grid; ++ry) {
                    for (int rx = 0; rx < grid; ++rx) {
                        VarT<T> t = region_slice(eng, theta, grid, ry, rx);
                        VarT<T> p = region_slice(eng, phi, grid, ry, rx);
                        VarT<T> gg = region_slice(eng, g, grid, ry, rx);
                        parts.push_back(affinity_attend(eng, t, p, gg, config.affinity_mode));
                    }
                }
                y = region_merge(eng, parts, grid);
            }
            VarT<T> restored = conv2d(eng, y, P("nl.restore.weight"), P("nl.restore.bias"), 0);
            x = add(eng, f, restored);
        }

        std::vector<VarT<T>> feats{x};
        for (int l = 0; l < config.dense_layers; ++l) {
            VarT<T> in = config.dense_connections
                             ? (feats.size() == 1 ? feats[0] : concat_channels(eng, feats))
                             : feats.back();
            const std::string layer = "dense" + std::to_string(l);
            VarT<T> d = conv2d(eng, in, P(layer + ".weight"), P(layer + ".bias"), 1);
            feats.push_back(relu(eng, d));
        }
        VarT<T> fus_in = config.dense_connections ? concat_channels(eng, feats) : feats.back();
        VarT<T> residual = conv2d(eng, fus_in, P("fusion.weight"), P("fusion.bias"), 0);
        return add(eng, residual, f);
    }

    void add_param(const std::string& name, std::vector<int> shape, bool zero_init) {
        index_[name] = params_.size();
        names_.push_back(name);
        params_.push_back(std::make_shared<TensorT<T>>(std::move(shape)));
        zero_init_.push_back(zero_init);
    }

    void add_conv(const std::string& name, int cin, int cout, int k, bool zero_init = false) {
        add_param(name + ".weight", {cout, cin, k, k}, zero_init);
        add_param(name + ".bias", {cout}, true);
    }

    void build_parameters() {
        const int c = config.base_channels, g = config.growth_rate, l = config.dense_layers;
        const int ce = config.embed_channels();
        add_conv("entrance.0", 3, c, 3);
        add_conv("entrance.1", c, c, 3);
        for (int b = 0; b < config.block_count(); ++b) {
            const std::string pre = "block" + std::to_string(b) + ".";
            if (config.nonlocal_enabled) {
                add_conv(pre + "nl.theta", c, ce, 1);
                add_conv(pre + "nl.phi", c, ce, 1);
                add_conv(pre + "nl.g", c, ce, 1);
                add_conv(pre + "nl.restore", ce, c, 1);
            }
            for (int i = 0; i < l; ++i) {
                const int in = config.dense_connections ? c + i * g : (i == 0 ? c : g);
                add_conv(pre + "dense" + std::to_string(i), in, g, 3);
            }
            add_conv(pre + "fusion", config.dense_connections ? c + l * g : g, c, 1,
                     /*zero_init=*/true);
        }
        add_conv("exit.0", c, c, 3);
        add_conv("exit.1", c, 3, 3, /*zero_init=*/true);
        init_parameters();
    }

    std::vector<std::string> names_;
    std::vector<std::shared_ptr<TensorT<T>>> params_;
    std::vector<bool> zero_init_;
    std::map<std::string, std::size_t> index_;
};

using NlednModel = NlednModelT<float>;

// Convenience inference entry point: no tape, clamped output.
template <class T>
TensorT<T> infer_image(const NlednModelT<T>& model, const TensorT<T>& input,
                       TensorT<T>* rain_out = nullptr) {
    EngineT<T> eng(/*recording=*/false);
    auto result = model.forward(eng, {std::make_shared<TensorT<T>>(input), -1});
    if (rain_out) *rain_out = result.rain_map.v();
    return kernels::clamp01(result.restored.v());
}

}  // namespace nledn
