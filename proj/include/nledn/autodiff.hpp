#pragma once

// Reverse-mode autodiff over the kernels. An EngineT owns a tape of nodes;
// each differentiable op appends one node whose closure routes the output
// gradient to its parents. Handles (VarT) pair a value with a tape position;
// node == -1 means the value is constant for gradient purposes. With
// recording disabled the ops degrade to plain eager evaluation, and
// intermediate values free themselves as handles go out of scope.

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "nledn/kernels.hpp"
#include "nledn/pool_indices.hpp"
#include "nledn/tensor.hpp"

namespace nledn {

using kernels::AffinityMode;

template <class T>
struct VarT {
    std::shared_ptr<TensorT<T>> value;
    int node = -1;

    const TensorT<T>& v() const { return *value; }
    bool tracked() const { return node >= 0; }
};

using Var = VarT<float>;

template <class T>
class EngineT {
public:
    explicit EngineT(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    // Registers a tensor as a graph input. Only requires_grad leaves occupy
    // tape slots; constants stay untracked and get captured by value inside
    // the closures that need them.
    VarT<T> leaf(std::shared_ptr<TensorT<T>> v, bool requires_grad) {
        if (!recording_ || !requires_grad) return {std::move(v), -1};
        nodes_.push_back(Node{{}, v, nullptr, nullptr, true});
        return {std::move(v), static_cast<int>(nodes_.size()) - 1};
    }

    VarT<T> leaf(TensorT<T> v, bool requires_grad = false) {
        return leaf(std::make_shared<TensorT<T>>(std::move(v)), requires_grad);
    }

    int add_node(std::vector<int> parents, std::shared_ptr<TensorT<T>> value,
                 std::function<void(EngineT&, const TensorT<T>&)> backward) {
        nodes_.push_back(Node{std::move(parents), std::move(value), nullptr, std::move(backward),
                              false});
        return static_cast<int>(nodes_.size()) - 1;
    }

    void accumulate(int node, const TensorT<T>& g) {
        if (node < 0) return;
        Node& n = nodes_[static_cast<std::size_t>(node)];
        if (!n.grad) {
            n.grad = std::make_unique<TensorT<T>>(g);
            return;
        }
        require_same_shape(*n.grad, g, "grad accumulate");
        for (std::int64_t i = 0; i < g.numel(); ++i) (*n.grad)[i] += g[i];
    }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse creation
    // order, which is a valid reverse topological order by construction.
    void backward(const VarT<T>& loss) {
        if (!recording_) throw Error("backward: engine is not recording");
        if (backward_done_) throw Error("backward: tape already consumed; build a new graph");
        if (!loss.tracked()) throw Error("backward: loss does not depend on any tracked leaf");
        if (loss.v().numel() != 1) {
            throw Error("backward: loss must be scalar, got shape " + shape_str(loss.v().shape));
        }
        backward_done_ = true;
        accumulate(loss.node, TensorT<T>::scalar(T(1)));
        for (int i = loss.node; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.grad && n.backward) {
                n.backward(*this, *n.grad);
                n.grad.reset();  // only leaf gradients are read afterwards
            }
        }
    }

    const TensorT<T>* grad(const VarT<T>& v) const {
        if (!v.tracked()) return nullptr;
        return nodes_[static_cast<std::size_t>(v.node)].grad.get();
    }

    std::size_t size() const { return nodes_.size(); }

    // Optional per-op output scan used by debug-oriented tests.
    void set_check_finite(bool on) { check_finite_ = on; }
    void maybe_check(const TensorT<T>& t, const char* op) const {
        if (check_finite_ && !kernels::all_finite(t)) {
            throw Error(std::string("non-finite value produced by ") + op);
        }
    }

private:
    struct Node {
        std::vector<int> parents;
        std::shared_ptr<TensorT<T>> value;
        std::unique_ptr<TensorT<T>> grad;
        std::function<void(EngineT&, const TensorT<T>&)> backward;
        bool is_leaf;
    };

    std::vector<Node> nodes_;
    bool recording_;
    bool backward_done_ = false;
    bool check_finite_ = false;
};

using Engine = EngineT<float>;

namespace detail {

template <class T>
bool any_tracked(std::initializer_list<const VarT<T>*> vars) {
    for (const auto* v : vars) {
        if (v->tracked()) return true;
    }
    return false;
}

template <class T>
std::shared_ptr<TensorT<T>> wrap(TensorT<T>&& t) {
    return std::make_shared<TensorT<T>>(std::move(t));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable ops.
// ---------------------------------------------------------------------------

template <class T>
VarT<T> conv2d(EngineT<T>& eng, const VarT<T>& x, const VarT<T>& w, const VarT<T>& b, int pad) {
    if (w.v().dim(2) % 2 == 0 || w.v().dim(3) % 2 == 0 || pad != (w.v().dim(2) - 1) / 2 ||
        pad != (w.v().dim(3) - 1) / 2) {
        throw Error("conv2d: kernel must be odd-sized with padding (k-1)/2, got kernel " +
                    shape_str(w.v().shape) + " pad " + std::to_string(pad));
    }
    auto out = detail::wrap(kernels::conv2d_forward(x.v(), w.v(), b.v(), pad));
    eng.maybe_check(*out, "conv2d");
    VarT<T> r{out, -1};
    if (eng.recording() && detail::any_tracked<T>({&x, &w, &b})) {
        r.node = eng.add_node(
            {x.node, w.node, b.node}, out,
            [xv = x.value, wv = w.value, xn = x.node, wn = w.node, bn = b.node, pad](
                EngineT<T>& e, const TensorT<T>& gy) {
                if (xn >= 0) {
                    e.accumulate(xn, kernels::conv2d_backward_input(gy, *wv, xv->shape, pad));
                }
                if (wn >= 0) {
                    e.accumulate(wn, kernels::conv2d_backward_kernel(gy, *xv, wv->shape, pad));
                }
                if (bn >= 0) e.accumulate(bn, kernels::conv2d_backward_bias(gy));
            });
    }
    return r;
}

template <class T>
VarT<T> relu(EngineT<T>& eng, const VarT<T>& x) {
    auto out = detail::wrap(kernels::relu(x.v()));
    VarT<T> r{out, -1};
    if (eng.recording() && x.tracked()) {
        r.node = eng.add_node({x.node}, out, [xv = x.value, xn = x.node](EngineT<T>& e,
                                                                         const TensorT<T>& gy) {
            TensorT<T> gx(xv->shape);
            for (std::int64_t i = 0; i < gx.numel(); ++i) {
                gx[i] = (*xv)[i] > T(0) ? gy[i] : T(0);
            }
            e.accumulate(xn, gx);
        });
    }
    return r;
}

template <class T>
VarT<T> tanh_act(EngineT<T>& eng, const VarT<T>& x) {
    auto out = detail::wrap(kernels::tanh_map(x.v()));
    VarT<T> r{out, -1};
    if (eng.recording() && x.tracked()) {
        r.node = eng.add_node({x.node}, out, [yv = out, xn = x.node](EngineT<T>& e,
                                                                     const TensorT<T>& gy) {
            TensorT<T> gx(yv->shape);
            for (std::int64_t i = 0; i < gx.numel(); ++i) {
                const T y = (*yv)[i];
                gx[i] = gy[i] * (T(1) - y * y);
            }
            e.accumulate(xn, gx);
        });
    }
    return r;
}

template <class T>
VarT<T> add(EngineT<T>& eng, const VarT<T>& a, const VarT<T>& b) {
    auto out = detail::wrap(kernels::add(a.v(), b.v()));
    VarT<T> r{out, -1};
    if (eng.recording() && detail::any_tracked<T>({&a, &b})) {
        r.node = eng.add_node({a.node, b.node}, out,
                              [an = a.node, bn = b.node](EngineT<T>& e, const TensorT<T>& gy) {
                                  e.accumulate(an, gy);
                                  e.accumulate(bn, gy);
                              });
    }
    return r;
}

template <class T>
VarT<T> scale(EngineT<T>& eng, const VarT<T>& x, T s) {
    auto out = detail::wrap(kernels::scale(x.v(), s));
    VarT<T> r{out, -1};
    if (eng.recording() && x.tracked()) {
        r.node = eng.add_node({x.node}, out, [xn = x.node, s](EngineT<T>& e, const TensorT<T>& gy) {
            e.accumulate(xn, kernels::scale(gy, s));
        });
    }
    return r;
}

template <class T>
VarT<T> concat_channels(EngineT<T>& eng, const std::vector<VarT<T>>& xs) {
    std::vector<const TensorT<T>*> ptrs;
    ptrs.reserve(xs.size());
    for (const auto& x : xs) ptrs.push_back(x.value.get());
    auto out = detail::wrap(kernels::concat_channels(ptrs));
    VarT<T> r{out, -1};

    bool tracked = false;
    std::vector<int> parents;
    parents.reserve(xs.size());
    for (const auto& x : xs) {
        parents.push_back(x.node);
        tracked = tracked || x.tracked();
    }
    if (eng.recording() && tracked) {
        std::vector<std::vector<int>> shapes;
        shapes.reserve(xs.size());
        for (const auto& x : xs) shapes.push_back(x.v().shape);
        r.node = eng.add_node({parents}, out,
                              [parents, shapes](EngineT<T>& e, const TensorT<T>& gy) {
                                  const int h = gy.dim(1), w = gy.dim(2);
                                  int c0 = 0;
                                  for (std::size_t k = 0; k < parents.size(); ++k) {
                                      const int ck = shapes[k][0];
                                      if (parents[k] >= 0) {
                                          TensorT<T> gx({ck, h, w});
                                          std::copy(gy.plane(c0), gy.plane(c0 + ck),
                                                    gx.data.begin());
                                          e.accumulate(parents[k], gx);
                                      }
                                      c0 += ck;
                                  }
                              });
    }
    return r;
}

template <class T>
std::pair<VarT<T>, std::shared_ptr<PoolIndices>> max_pool2d(EngineT<T>& eng, const VarT<T>& x) {
    auto [y, ind] = kernels::max_pool2d(x.v());
    auto out = detail::wrap(std::move(y));
    auto indices = std::make_shared<PoolIndices>(std::move(ind));
    VarT<T> r{out, -1};
    if (eng.recording() && x.tracked()) {
        r.node = eng.add_node({x.node}, out,
                              [xn = x.node, indices](EngineT<T>& e, const TensorT<T>& gy) {
                                  e.accumulate(xn, kernels::max_pool2d_backward(gy, *indices));
                              });
    }
    return {r, indices};
}

template <class T>
VarT<T> max_unpool2d(EngineT<T>& eng, const VarT<T>& x, std::shared_ptr<PoolIndices> indices) {
    auto out = detail::wrap(kernels::max_unpool2d(x.v(), *indices));
    VarT<T> r{out, -1};
    if (eng.recording() && x.tracked()) {
        r.node = eng.add_node({x.node}, out,
                              [xn = x.node, indices](EngineT<T>& e, const TensorT<T>& gy) {
                                  e.accumulate(xn, kernels::max_unpool2d_backward(gy, *indices));
                              });
    }
    return r;
}

// Attention core over embedded maps; see kernels::affinity_forward.
template <class T>
VarT<T> affinity_attend(EngineT<T>& eng, const VarT<T>& theta, const VarT<T>& phi,
                        const VarT<T>& g, AffinityMode mode) {
    const bool track = eng.recording() && detail::any_tracked<T>({&theta, &phi, &g});
    auto saved = track ? std::make_shared<kernels::AffinitySaved>() : nullptr;
    auto out = detail::wrap(kernels::affinity_forward(theta.v(), phi.v(), g.v(), mode,
                                                      saved.get()));
    eng.maybe_check(*out, "affinity");
    VarT<T> r{out, -1};
    if (track) {
        r.node = eng.add_node(
            {theta.node, phi.node, g.node}, out,
            [tv = theta.value, pv = phi.value, gv = g.value, tn = theta.node, pn = phi.node,
             gn = g.node, mode, saved](EngineT<T>& e, const TensorT<T>& gy) {
                TensorT<T> gt, gp, gg;
                kernels::affinity_backward(gy, *tv, *pv, *gv, mode, *saved, gt, gp, gg);
                e.accumulate(tn, gt);
                e.accumulate(pn, gp);
                e.accumulate(gn, gg);
            });
    }
    return r;
}

// Full non-local operation per the block definition: 1x1 embeddings for
// theta/phi/g followed by the position-wise attention. Output has the
// embedding channel count.
template <class T>
VarT<T> nonlocal_affinity_apply(EngineT<T>& eng, const VarT<T>& f, const VarT<T>& w_theta,
                                const VarT<T>& w_phi, const VarT<T>& w_g, const VarT<T>& b_theta,
                                const VarT<T>& b_phi, const VarT<T>& b_g, AffinityMode mode) {
    VarT<T> theta = conv2d(eng, f, w_theta, b_theta, 0);
    VarT<T> phi = conv2d(eng, f, w_phi, b_phi, 0);
    VarT<T> g = conv2d(eng, f, w_g, b_g, 0);
    return affinity_attend(eng, theta, phi, g, mode);
}

template <class T>
VarT<T> region_slice(EngineT<T>& eng, const VarT<T>& x, int k, int ry, int rx) {
    auto out = detail::wrap(kernels::region_slice(x.v(), k, ry, rx));
    VarT<T> r{out, -1};
    if (eng.recording() && x.tracked()) {
        r.node = eng.add_node({x.node}, out,
                              [xn = x.node, shape = x.v().shape, k, ry, rx](EngineT<T>& e,
                                                                            const TensorT<T>& gy) {
                                  TensorT<T> gx(shape);
                                  kernels::region_scatter_add(gx, gy, k, ry, rx);
                                  e.accumulate(xn, gx);
                              });
    }
    return r;
}

template <class T>
std::vector<VarT<T>> region_partition(EngineT<T>& eng, const VarT<T>& x, int k) {
    std::vector<VarT<T>> parts;
    parts.reserve(static_cast<std::size_t>(k) * k);
    for (int ry = 0; ry < k; ++ry) {
        for (int rx = 0; rx < k; ++rx) parts.push_back(region_slice(eng, x, k, ry, rx));
    }
    return parts;
}

template <class T>
VarT<T> region_merge(EngineT<T>& eng, const std::vector<VarT<T>>& parts, int k) {
    if (static_cast<int>(parts.size()) != k * k) {
        throw Error("region_merge: expected " + std::to_string(k * k) + " regions, got " +
                    std::to_string(parts.size()));
    }
    const int c = parts[0].v().dim(0);
    const int rh = parts[0].v().dim(1), rw = parts[0].v().dim(2);
    auto out = std::make_shared<TensorT<T>>(std::vector<int>{c, rh * k, rw * k});
    std::vector<int> parents;
    bool tracked = false;
    for (int ry = 0; ry < k; ++ry) {
        for (int rx = 0; rx < k; ++rx) {
            const auto& part = parts[static_cast<std::size_t>(ry) * k + rx];
            require_same_shape(parts[0].v(), part.v(), "region_merge");
            kernels::region_scatter_add(*out, part.v(), k, ry, rx);
            parents.push_back(part.node);
            tracked = tracked || part.tracked();
        }
    }
    VarT<T> r{out, -1};
    if (eng.recording() && tracked) {
        r.node = eng.add_node({parents}, out, [parents, k](EngineT<T>& e, const TensorT<T>& gy) {
            for (int ry = 0; ry < k; ++ry) {
                for (int rx = 0; rx < k; ++rx) {
                    const int pn = parents[static_cast<std::size_t>(ry) * k + rx];
                    if (pn >= 0) e.accumulate(pn, kernels::region_slice(gy, k, ry, rx));
                }
            }
        });
    }
    return r;
}

template <class T>
VarT<T> reduce_sum(EngineT<T>& eng, const VarT<T>& x) {
    auto out = detail::wrap(TensorT<T>::scalar(kernels::reduce_sum(x.v())));
    VarT<T> r{out, -1};
    if (eng.recording() && x.tracked()) {
        r.node = eng.add_node({x.node}, out,
                              [xn = x.node, shape = x.v().shape](EngineT<T>& e,
                                                                 const TensorT<T>& gy) {
                                  TensorT<T> gx(shape, gy[0]);
                                  e.accumulate(xn, gx);
                              });
    }
    return r;
}

// Scalar projection sum_i x_i * w_i against a fixed weight tensor. Used by
// tests to make a loss sensitive to every output entry.
template <class T>
VarT<T> weighted_sum(EngineT<T>& eng, const VarT<T>& x, const TensorT<T>& weights) {
    require_same_shape(x.v(), weights, "weighted_sum");
    T acc = 0;
    for (std::int64_t i = 0; i < weights.numel(); ++i) acc += x.v()[i] * weights[i];
    auto out = detail::wrap(TensorT<T>::scalar(acc));
    VarT<T> r{out, -1};
    if (eng.recording() && x.tracked()) {
        r.node = eng.add_node({x.node}, out,
                              [xn = x.node, weights](EngineT<T>& e, const TensorT<T>& gy) {
                                  e.accumulate(xn, kernels::scale(weights, gy[0]));
                              });
    }
    return r;
}

// Scalar MAE between prediction and target, normalized by element count.
// Subgradient at exact ties is 0.
template <class T>
VarT<T> mae_loss(EngineT<T>& eng, const VarT<T>& pred, const VarT<T>& target) {
    auto out = detail::wrap(TensorT<T>::scalar(kernels::mae(pred.v(), target.v())));
    VarT<T> r{out, -1};
    if (eng.recording() && detail::any_tracked<T>({&pred, &target})) {
        r.node = eng.add_node(
            {pred.node, target.node}, out,
            [pv = pred.value, tv = target.value, pn = pred.node, tn = target.node](
                EngineT<T>& e, const TensorT<T>& gy) {
                const T s = gy[0] / static_cast<T>(pv->numel());
                TensorT<T> g(pv->shape);
                for (std::int64_t i = 0; i < g.numel(); ++i) {
                    const T d = (*pv)[i] - (*tv)[i];
                    g[i] = d > T(0) ? s : (d < T(0) ? -s : T(0));
                }
                if (pn >= 0) e.accumulate(pn, g);
                if (tn >= 0) {
                    for (auto& v : g.data) v = -v;
                    e.accumulate(tn, g);
                }
            });
    }
    return r;
}

}  // namespace nledn
