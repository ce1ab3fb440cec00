#include "nledn/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "nledn/error.hpp"

namespace nledn {

Tensor rgb_to_y(const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3) {
        throw Error("rgb_to_y: expected (3,H,W), got " + shape_str(rgb.shape));
    }
    const int h = rgb.dim(1), w = rgb.dim(2);
    Tensor y({1, h, w});
    const float* r = rgb.plane(0);
    const float* g = rgb.plane(1);
    const float* b = rgb.plane(2);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < n; ++i) {
        y.data[i] = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
    }
    return y;
}

double psnr(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "psnr");
    double se = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2
constexpr double kC2 = 0.03 * 0.03;  // (K2*L)^2

const double* gaussian_window() {
    static double w[kWin] = {0};
    static bool ready = false;
    if (!ready) {
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - (kWin - 1) / 2.0;
            w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += w[i];
        }
        for (int i = 0; i < kWin; ++i) w[i] /= sum;
        ready = true;
    }
    return w;
}

// separable weighted sum over valid positions: (H,W) -> (H-10, W-10)
std::vector<double> window_filter(const std::vector<double>& img, int h, int w) {
    const double* win = gaussian_window();
    const int vw = w - kWin + 1;
    const int vh = h - kWin + 1;
    std::vector<double> horiz(static_cast<std::size_t>(h) * vw);
    for (int y = 0; y < h; ++y) {
        const double* row = img.data() + static_cast<std::size_t>(y) * w;
        double* out = horiz.data() + static_cast<std::size_t>(y) * vw;
        for (int x = 0; x < vw; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k) acc += win[k] * row[x + k];
            out[x] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(vh) * vw);
    for (int y = 0; y < vh; ++y) {
        for (int x = 0; x < vw; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k) {
                acc += win[k] * horiz[static_cast<std::size_t>(y + k) * vw + x];
            }
            out[static_cast<std::size_t>(y) * vw + x] = acc;
        }
    }
    return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "ssim");
    const int h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
    if (h < kWin || w < kWin) {
        throw Error("ssim: image " + shape_str(a.shape) + " smaller than the 11x11 window");
    }
    const std::size_t n = static_cast<std::size_t>(h) * w;
    if (static_cast<std::size_t>(a.numel()) != n) {
        throw Error("ssim: expected a single-channel image, got " + shape_str(a.shape));
    }

    std::vector<double> xa(n), xb(n), xaa(n), xbb(n), xab(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double va = a.data[i], vb = b.data[i];
        xa[i] = va;
        xb[i] = vb;
        xaa[i] = va * va;
        xbb[i] = vb * vb;
        xab[i] = va * vb;
    }
    const auto mu_a = window_filter(xa, h, w);
    const auto mu_b = window_filter(xb, h, w);
    const auto m_aa = window_filter(xaa, h, w);
    const auto m_bb = window_filter(xbb, h, w);
    const auto m_ab = window_filter(xab, h, w);

    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = m_aa[i] - ma * ma;
        const double vb = m_bb[i] - mb * mb;
        const double cov = m_ab[i] - ma * mb;
        const double num = (2.0 * ma * mb + kC1) * (2.0 * cov + kC2);
        const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
        total += num / den;
    }
    return total / static_cast<double>(mu_a.size());
}

void EvalReport::finalize() {
    double psum = 0.0, ssum = 0.0;
    int finite = 0;
    skipped_infinite = 0;
    for (const auto& e : entries) {
        ssum += e.ssim;
        if (std::isinf(e.psnr_db)) {
            ++skipped_infinite;
        } else {
            psum += e.psnr_db;
            ++finite;
        }
    }
    mean_psnr = finite > 0 ? psum / finite : 0.0;
    mean_ssim = entries.empty() ? 0.0 : ssum / static_cast<double>(entries.size());
}

std::string EvalReport::to_tsv() const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "id\tpsnr_db\tssim\n";
    for (const auto& e : entries) {
        os << e.id << "\t";
        if (std::isinf(e.psnr_db)) {
            os << "inf";
        } else {
            os << e.psnr_db;
        }
        os << "\t" << e.ssim << "\n";
    }
    os << "MEAN\t" << mean_psnr << "\t" << mean_ssim << "\n";
    return os.str();
}

}  // namespace nledn
