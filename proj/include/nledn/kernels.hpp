#pragma once

// Raw forward/backward compute kernels on plain tensors. The autodiff
// layer wraps these; tests hit them directly. All loops are sequential
// and order-stable so results are bit-reproducible run to run. Where a
// kernel is threaded (conv2d over output channels), each output element
// is still summed in a fixed order, so results do not depend on the
// thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "nledn/pool_indices.hpp"
#include "nledn/runtime.hpp"
#include "nledn/tensor.hpp"

namespace nledn::kernels {

// ---------------------------------------------------------------------------
// conv2d: stride-1 cross-correlation, symmetric zero padding.
// Input (Cin,H,W), kernel (Cout,Cin,kH,kW), bias (Cout) -> (Cout,H',W')
// with H' = H + 2p - kH + 1. The model only ever uses p = (k-1)/2.
// ---------------------------------------------------------------------------

template <class T>
void conv2d_shape_check(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int pad) {
    if (x.rank() != 3) throw Error("conv2d: input must be (C,H,W), got " + shape_str(x.shape));
    if (w.rank() != 4)
        throw Error("conv2d: kernel must be (Cout,Cin,kH,kW), got " + shape_str(w.shape));
    if (w.dim(1) != x.dim(0)) {
        throw Error("conv2d: kernel expects " + std::to_string(w.dim(1)) +
                    " input channels but input has " + std::to_string(x.dim(0)) +
                    " (kernel " + shape_str(w.shape) + ", input " + shape_str(x.shape) + ")");
    }
    if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
        throw Error("conv2d: bias shape " + shape_str(b.shape) + " does not match Cout=" +
                    std::to_string(w.dim(0)));
    }
    if (pad < 0) throw Error("conv2d: negative padding");
    if (x.dim(1) + 2 * pad - w.dim(2) + 1 < 1 || x.dim(2) + 2 * pad - w.dim(3) + 1 < 1) {
        throw Error("conv2d: kernel " + shape_str(w.shape) + " larger than padded input " +
                    shape_str(x.shape));
    }
}

template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                          int pad) {
    conv2d_shape_check(x, w, b, pad);
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = h + 2 * pad - kh + 1, ow = wd + 2 * pad - kw + 1;

    TensorT<T> y({cout, oh, ow});
    parallel_for(cout, [&](int co) {
        T* yp = y.plane(co);
        const T bias = b[co];
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) yp[i] = bias;
        for (int ci = 0; ci < cin; ++ci) {
            const T* xp = x.plane(ci);
            const T* wp = &w.data[((static_cast<std::size_t>(co) * cin + ci) * kh) * kw];
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const T wv = wp[ky * kw + kx];
                    if (wv == T(0)) continue;
                    const int oy0 = std::max(0, pad - ky);
                    const int oy1 = std::min(oh, h + pad - ky);
                    const int ox0 = std::max(0, pad - kx);
                    const int ox1 = std::min(ow, wd + pad - kx);
                    for (int oy = oy0; oy < oy1; ++oy) {
                        const T* xrow = xp + static_cast<std::size_t>(oy + ky - pad) * wd + (kx - pad);
                        T* yrow = yp + static_cast<std::size_t>(oy) * ow;
                        for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xrow[ox];
                    }
                }
            }
        }
    });
    return y;
}

template <class T>
TensorT<T> conv2d_backward_input(const TensorT<T>& gy, const TensorT<T>& w,
                                 const std::vector<int>& x_shape, int pad) {
    const int cin = x_shape[0], h = x_shape[1], wd = x_shape[2];
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = gy.dim(1), ow = gy.dim(2);

    TensorT<T> gx(x_shape);
    parallel_for(cin, [&](int ci) {
        T* gxp = gx.plane(ci);
        for (int co = 0; co < cout; ++co) {
            const T* gyp = gy.plane(co);
            const T* wp = &w.data[((static_cast<std::size_t>(co) * cin + ci) * kh) * kw];
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const T wv = wp[ky * kw + kx];
                    if (wv == T(0)) continue;
                    const int oy0 = std::max(0, pad - ky);
                    const int oy1 = std::min(oh, h + pad - ky);
                    const int ox0 = std::max(0, pad - kx);
                    const int ox1 = std::min(ow, wd + pad - kx);
                    for (int oy = oy0; oy < oy1; ++oy) {
                        T* gxrow = gxp + static_cast<std::size_t>(oy + ky - pad) * wd + (kx - pad);
                        const T* gyrow = gyp + static_cast<std::size_t>(oy) * ow;
                        for (int ox = ox0; ox < ox1; ++ox) gxrow[ox] += wv * gyrow[ox];
                    }
                }
            }
        }
    });
    return gx;
}

template <class T>
TensorT<T> conv2d_backward_kernel(const TensorT<T>& gy, const TensorT<T>& x,
                                  const std::vector<int>& w_shape, int pad) {
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w_shape[0], kh = w_shape[2], kw = w_shape[3];
    const int oh = gy.dim(1), ow = gy.dim(2);

    TensorT<T> gw(w_shape);
    parallel_for(cout, [&](int co) {
        const T* gyp = gy.plane(co);
        for (int ci = 0; ci < cin; ++ci) {
            const T* xp = x.plane(ci);
            T* gwp = &gw.data[((static_cast<std::size_t>(co) * cin + ci) * kh) * kw];
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const int oy0 = std::max(0, pad - ky);
                    const int oy1 = std::min(oh, h + pad - ky);
                    const int ox0 = std::max(0, pad - kx);
                    const int ox1 = std::min(ow, wd + pad - kx);
                    T acc = 0;
                    for (int oy = oy0; oy < oy1; ++oy) {
                        const T* xrow = xp + static_cast<std::size_t>(oy + ky - pad) * wd + (kx - pad);
                        const T* gyrow = gyp + static_cast<std::size_t>(oy) * ow;
                        for (int ox = ox0; ox < ox1; ++ox) acc += xrow[ox] * gyrow[ox];
                    }
                    gwp[ky * kw + kx] = acc;
                }
            }
        }
    });
    return gw;
}

template <class T>
TensorT<T> conv2d_backward_bias(const TensorT<T>& gy) {
    const int cout = gy.dim(0);
    TensorT<T> gb({cout});
    for (int co = 0; co < cout; ++co) {
        const T* gyp = gy.plane(co);
        T acc = 0;
        const std::int64_t n = static_cast<std::int64_t>(gy.dim(1)) * gy.dim(2);
        for (std::int64_t i = 0; i < n; ++i) acc += gyp[i];
        gb[co] = acc;
    }
    return gb;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling with argmax indices, stride 2. Ties go to the smallest
// flat index, so results are deterministic on constant inputs.
// ---------------------------------------------------------------------------

template <class T>
std::pair<TensorT<T>, PoolIndices> max_pool2d(const TensorT<T>& x) {
    if (x.rank() != 3) throw Error("max_pool2d: input must be (C,H,W)");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0) {
        throw Error("max_pool2d: spatial dims must be even, got " + shape_str(x.shape) +
                    "; pad the input before pooling");
    }
    TensorT<T> y({c, h / 2, w / 2});
    PoolIndices ind;
    ind.channels = c;
    ind.out_h = h / 2;
    ind.out_w = w / 2;
    ind.src_h = h;
    ind.src_w = w;
    ind.idx.resize(static_cast<std::size_t>(ind.cells()));

    std::size_t cell = 0;
    for (int ci = 0; ci < c; ++ci) {
        const T* xp = x.plane(ci);
        for (int oy = 0; oy < h / 2; ++oy) {
            for (int ox = 0; ox < w / 2; ++ox) {
                const int base = 2 * oy * w + 2 * ox;
                int best = base;
                T bv = xp[base];
                const int cand[3] = {base + 1, base + w, base + w + 1};
                for (int k = 0; k < 3; ++k) {
                    if (xp[cand[k]] > bv) {
                        bv = xp[cand[k]];
                        best = cand[k];
                    }
                }
                y.plane(ci)[static_cast<std::size_t>(oy) * (w / 2) + ox] = bv;
                ind.idx[cell++] = best;
            }
        }
    }
    return {std::move(y), std::move(ind)};
}

template <class T>
TensorT<T> max_pool2d_backward(const TensorT<T>& gy, const PoolIndices& ind) {
    TensorT<T> gx({ind.channels, ind.src_h, ind.src_w});
    std::size_t cell = 0;
    for (int ci = 0; ci < ind.channels; ++ci) {
        T* gxp = gx.plane(ci);
        const T* gyp = gy.plane(ci);
        const std::int64_t n = static_cast<std::int64_t>(ind.out_h) * ind.out_w;
        for (std::int64_t i = 0; i < n; ++i) gxp[ind.idx[cell++]] += gyp[i];
    }
    return gx;
}

// ---------------------------------------------------------------------------
// max unpooling: scatter values to recorded argmax positions, zero elsewhere.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> max_unpool2d(const TensorT<T>& x, const PoolIndices& ind) {
    if (x.rank() != 3 || x.dim(0) != ind.channels || x.dim(1) != ind.out_h ||
        x.dim(2) != ind.out_w) {
        throw Error("max_unpool2d: input " + shape_str(x.shape) + " does not match indices (" +
                    std::to_string(ind.channels) + "," + std::to_string(ind.out_h) + "," +
                    std::to_string(ind.out_w) + ")");
    }
    TensorT<T> y({ind.channels, ind.src_h, ind.src_w});
    const std::int64_t plane = static_cast<std::int64_t>(ind.src_h) * ind.src_w;
    std::size_t cell = 0;
    for (int ci = 0; ci < ind.channels; ++ci) {
        T* yp = y.plane(ci);
        const T* xp = x.plane(ci);
        const std::int64_t n = static_cast<std::int64_t>(ind.out_h) * ind.out_w;
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int32_t at = ind.idx[cell++];
            if (at < 0 || at >= plane) {
                throw Error("max_unpool2d: corrupt index " + std::to_string(at) +
                            " outside plane of " + std::to_string(plane) + " elements");
            }
            yp[at] = xp[i];
        }
    }
    return y;
}

template <class T>
TensorT<T> max_unpool2d_backward(const TensorT<T>& gy, const PoolIndices& ind) {
    TensorT<T> gx({ind.channels, ind.out_h, ind.out_w});
    std::size_t cell = 0;
    for (int ci = 0; ci < ind.channels; ++ci) {
        const T* gyp = gy.plane(ci);
        T* gxp = gx.plane(ci);
        const std::int64_t n = static_cast<std::int64_t>(ind.out_h) * ind.out_w;
        for (std::int64_t i = 0; i < n; ++i) gxp[i] = gyp[ind.idx[cell++]];
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Position-wise attention over a feature map: given embedded maps
// theta/phi/g of shape (C',H,W), produce y_i = sum_j w_ij * g_j where the
// logits are f_ij = <theta_i, phi_j>. Softmax mode normalizes each row
// with a stabilized softmax; raw-sum mode divides by the plain row sum,
// guarded against magnitudes below eps.
// ---------------------------------------------------------------------------

enum class AffinityMode { kSoftmax, kRawSum };

constexpr double kRawSumGuard = 1e-6;

struct AffinitySaved {
    // row-normalized weights, P x P, plus raw row sums for raw-sum mode
    std::vector<double> weights;
    std::vector<double> row_sums;
    int positions = 0;
};

template <class T>
TensorT<T> affinity_forward(const TensorT<T>& theta, const TensorT<T>& phi, const TensorT<T>& g,
                            AffinityMode mode, AffinitySaved* saved = nullptr) {
    require_same_shape(theta, phi, "affinity");
    require_same_shape(theta, g, "affinity");
    if (theta.rank() != 3) throw Error("affinity: inputs must be (C,H,W)");
    const int c = theta.dim(0);
    const std::int64_t p = static_cast<std::int64_t>(theta.dim(1)) * theta.dim(2);

    // logits f = theta^T phi, accumulated in double for stable normalization
    std::vector<double> f(static_cast<std::size_t>(p) * p, 0.0);
    for (int ci = 0; ci < c; ++ci) {
        const T* tp = theta.plane(ci);
        const T* pp = phi.plane(ci);
        for (std::int64_t i = 0; i < p; ++i) {
            const double ti = tp[i];
            if (ti == 0.0) continue;
            double* frow = f.data() + static_cast<std::size_t>(i) * p;
            for (std::int64_t j = 0; j < p; ++j) frow[j] += ti * static_cast<double>(pp[j]);
        }
    }

    std::vector<double> row_sums(static_cast<std::size_t>(p), 0.0);
    if (mode == AffinityMode::kSoftmax) {
        for (std::int64_t i = 0; i < p; ++i) {
            double* frow = f.data() + static_cast<std::size_t>(i) * p;
            double m = frow[0];
            for (std::int64_t j = 1; j < p; ++j) m = std::max(m, frow[j]);
            double s = 0.0;
            for (std::int64_t j = 0; j < p; ++j) {
                frow[j] = std::exp(frow[j] - m);
                s += frow[j];
            }
            for (std::int64_t j = 0; j < p; ++j) frow[j] /= s;
        }
    } else {
        for (std::int64_t i = 0; i < p; ++i) {
            double* frow = f.data() + static_cast<std::size_t>(i) * p;
            double s = 0.0;
            for (std::int64_t j = 0; j < p; ++j) s += frow[j];
            row_sums[static_cast<std::size_t>(i)] = s;
            const double d = std::abs(s) < kRawSumGuard ? std::copysign(kRawSumGuard, s) : s;
            for (std::int64_t j = 0; j < p; ++j) frow[j] /= d;
        }
    }

    TensorT<T> y(theta.shape);
    for (int ci = 0; ci < c; ++ci) {
        const T* gp = g.plane(ci);
        T* yp = y.plane(ci);
        for (std::int64_t i = 0; i < p; ++i) {
            const double* wrow = f.data() + static_cast<std::size_t>(i) * p;
            double acc = 0.0;
            for (std::int64_t j = 0; j < p; ++j) acc += wrow[j] * static_cast<double>(gp[j]);
            yp[i] = static_cast<T>(acc);
        }
    }

    if (saved) {
        saved->weights = std::move(f);
        saved->row_sums = std::move(row_sums);
        saved->positions = static_cast<int>(p);
    }
    return y;
}

template <class T>
void affinity_backward(const TensorT<T>& gy, const TensorT<T>& theta, const TensorT<T>& phi,
                       const TensorT<T>& g, AffinityMode mode, const AffinitySaved& saved,
                       TensorT<T>& gtheta, TensorT<T>& gphi, TensorT<T>& gg) {
    const int c = theta.dim(0);
    const std::int64_t p = saved.positions;
    const std::vector<double>& w = saved.weights;

    gtheta = TensorT<T>(theta.shape);
    gphi = TensorT<T>(phi.shape);
    gg = TensorT<T>(g.shape);

    // dg = W^T dy
    for (int ci = 0; ci < c; ++ci) {
        const T* gyp = gy.plane(ci);
        T* ggp = gg.plane(ci);
        for (std::int64_t i = 0; i < p; ++i) {
            const double a = gyp[i];
            if (a == 0.0) continue;
            const double* wrow = w.data() + static_cast<std::size_t>(i) * p;
            for (std::int64_t j = 0; j < p; ++j) ggp[j] += static_cast<T>(a * wrow[j]);
        }
    }

    // dW_ij = sum_c dy_ci * g_cj
    std::vector<double> dw(static_cast<std::size_t>(p) * p, 0.0);
    for (int ci = 0; ci < c; ++ci) {
        const T* gyp = gy.plane(ci);
        const T* gp = g.plane(ci);
        for (std::int64_t i = 0; i < p; ++i) {
            const double a = gyp[i];
            if (a == 0.0) continue;
            double* drow = dw.data() + static_cast<std::size_t>(i) * p;
            for (std::int64_t j = 0; j < p; ++j) drow[j] += a * static_cast<double>(gp[j]);
        }
    }

    // normalize-backward into df (reuse dw storage)
    if (mode == AffinityMode::kSoftmax) {
        for (std::int64_t i = 0; i < p; ++i) {
            double* drow = dw.data() + static_cast<std::size_t>(i) * p;
            const double* wrow = w.data() + static_cast<std::size_t>(i) * p;
            double dot = 0.0;
            for (std::int64_t j = 0; j < p; ++j) dot += drow[j] * wrow[j];
            for (std::int64_t j = 0; j < p; ++j) drow[j] = wrow[j] * (drow[j] - dot);
        }
    } else {
        for (std::int64_t i = 0; i < p; ++i) {
            double* drow = dw.data() + static_cast<std::size_t>(i) * p;
            const double* wrow = w.data() + static_cast<std::size_t>(i) * p;
            const double s = saved.row_sums[static_cast<std::size_t>(i)];
            const double d = std::abs(s) < kRawSumGuard ? std::copysign(kRawSumGuard, s) : s;
            if (std::abs(s) < kRawSumGuard) {
                // guard active: denominator treated as constant
                for (std::int64_t j = 0; j < p; ++j) drow[j] /= d;
            } else {
                double dot = 0.0;
                for (std::int64_t j = 0; j < p; ++j) dot += drow[j] * wrow[j];
                for (std::int64_t j = 0; j < p; ++j) drow[j] = (drow[j] - dot) / d;
            }
        }
    }

    // dtheta_ci = sum_j df_ij phi_cj ; dphi_cj = sum_i df_ij theta_ci
    for (int ci = 0; ci < c; ++ci) {
        const T* pp = phi.plane(ci);
        const T* tp = theta.plane(ci);
        T* gtp = gtheta.plane(ci);
        T* gpp = gphi.plane(ci);
        for (std::int64_t i = 0; i < p; ++i) {
            const double* drow = dw.data() + static_cast<std::size_t>(i) * p;
            double acc = 0.0;
            for (std::int64_t j = 0; j < p; ++j) acc += drow[j] * static_cast<double>(pp[j]);
            gtp[i] += static_cast<T>(acc);
            const double ti = tp[i];
            if (ti == 0.0) continue;
            for (std::int64_t j = 0; j < p; ++j) gpp[j] += static_cast<T>(ti * drow[j]);
        }
    }
}

// ---------------------------------------------------------------------------
// Channel concatenation and region tiling.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& xs) {
    if (xs.empty()) throw Error("concat_channels: empty input list");
    const int h = xs[0]->dim(1), w = xs[0]->dim(2);
    int c = 0;
    for (const auto* x : xs) {
        if (x->rank() != 3 || x->dim(1) != h || x->dim(2) != w) {
            throw Error("concat_channels: spatial mismatch, first input " +
                        shape_str(xs[0]->shape) + " vs " + shape_str(x->shape));
        }
        c += x->dim(0);
    }
    TensorT<T> y({c, h, w});
    std::size_t off = 0;
    for (const auto* x : xs) {
        std::copy(x->data.begin(), x->data.end(), y.data.begin() + off);
        off += x->data.size();
    }
    return y;
}

// Extract region (ry,rx) of a k x k tiling. Regions are (C, H/k, W/k).
template <class T>
TensorT<T> region_slice(const TensorT<T>& x, int k, int ry, int rx) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % k != 0 || w % k != 0) {
        throw Error("region grid " + std::to_string(k) + "x" + std::to_string(k) +
                    " does not divide feature map " + shape_str(x.shape));
    }
    const int rh = h / k, rw = w / k;
    TensorT<T> y({c, rh, rw});
    for (int ci = 0; ci < c; ++ci) {
        const T* xp = x.plane(ci);
        T* yp = y.plane(ci);
        for (int yy = 0; yy < rh; ++yy) {
            const T* src = xp + static_cast<std::size_t>(ry * rh + yy) * w + rx * rw;
            std::copy(src, src + rw, yp + static_cast<std::size_t>(yy) * rw);
        }
    }
    return y;
}

template <class T>
void region_scatter_add(TensorT<T>& dst, const TensorT<T>& part, int k, int ry, int rx) {
    (void)k;  // region extent comes from `part`; k kept for call-site symmetry
    const int c = dst.dim(0), w = dst.dim(2);
    const int rh = part.dim(1), rw = part.dim(2);
    for (int ci = 0; ci < c; ++ci) {
        T* dp = dst.plane(ci);
        const T* pp = part.plane(ci);
        for (int yy = 0; yy < rh; ++yy) {
            T* drow = dp + static_cast<std::size_t>(ry * rh + yy) * w + rx * rw;
            const T* prow = pp + static_cast<std::size_t>(yy) * rw;
            for (int xx = 0; xx < rw; ++xx) drow[xx] += prow[xx];
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops and reductions.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
    TensorT<T> y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return y;
}

template <class T>
TensorT<T> tanh_map(const TensorT<T>& x) {
    TensorT<T> y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = std::tanh(x[i]);
    return y;
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "add");
    TensorT<T> y(a.shape);
    for (std::int64_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
    return y;
}

template <class T>
TensorT<T> scale(const TensorT<T>& x, T s) {
    TensorT<T> y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] * s;
    return y;
}

template <class T>
TensorT<T> clamp01(const TensorT<T>& x) {
    TensorT<T> y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = std::min(T(1), std::max(T(0), x[i]));
    return y;
}

template <class T>
T reduce_sum(const TensorT<T>& x) {
    T acc = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += x[i];
    return acc;
}

// mean absolute error, normalized by element count (H*W*C)
template <class T>
T mae(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "mae");
    T acc = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<T>(a.numel());
}

template <class T>
bool all_finite(const TensorT<T>& x) {
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        if (!std::isfinite(x[i])) return false;
    }
    return true;
}

}  // namespace nledn::kernels
