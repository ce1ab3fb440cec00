#include "nledn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "nledn/error.hpp"
#include "nledn/png_io.hpp"

namespace fs = std::filesystem;

namespace nledn {

void RainParams::validate() const {
    if (streak_count < 0) throw Error("rain params: streak count must be >= 0");
    if (angle_min_deg > angle_max_deg || length_min > length_max || sigma_min > sigma_max ||
        intensity_min > intensity_max) {
        throw Error("rain params: each range must satisfy min <= max");
    }
    if (length_min <= 0 || sigma_min <= 0) {
        throw Error("rain params: lengths and widths must be positive");
    }
    if (intensity_min < 0 || intensity_max > 0.6) {
        throw Error("rain params: intensity must lie in [0, 0.6]");
    }
}

SynthResult synth_rain(const Tensor& clean, const RainParams& params) {
    params.validate();
    if (clean.rank() != 3 || clean.dim(0) != 3) {
        throw Error("synth_rain: clean image must be (3,H,W)");
    }
    const int h = clean.dim(1), w = clean.dim(2);

    Rng rng(hash_seed(params.seed, 0x7261696eULL));
    const double angle = rng.uniform(params.angle_min_deg, params.angle_max_deg);
    const double rad = angle * 3.14159265358979323846 / 180.0;
    const double dx = std::cos(rad), dy = std::sin(rad);

    // single-channel streak layer, stamped as anti-aliased capsules with a
    // Gaussian cross profile
    std::vector<float> streaks(static_cast<std::size_t>(h) * w, 0.0f);
    for (int s = 0; s < params.streak_count; ++s) {
        const double cx = rng.uniform(0.0, w);
        const double cy = rng.uniform(0.0, h);
        const double len = rng.uniform(params.length_min, params.length_max);
        const double sigma = rng.uniform(params.sigma_min, params.sigma_max);
        const double amp = rng.uniform(params.intensity_min, params.intensity_max);

        const double x0 = cx - dx * len / 2, y0 = cy - dy * len / 2;
        const double x1 = cx + dx * len / 2, y1 = cy + dy * len / 2;
        const double margin = 3.0 * sigma + 1.0;
        const int ylo = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - margin)));
        const int yhi = std::min(h - 1, static_cast<int>(std::ceil(std::max(y0, y1) + margin)));
        const int xlo = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - margin)));
        const int xhi = std::min(w - 1, static_cast<int>(std::ceil(std::max(x0, x1) + margin)));
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

        for (int y = ylo; y <= yhi; ++y) {
            for (int x = xlo; x <= xhi; ++x) {
                const double px = x + 0.5 - x0, py = y + 0.5 - y0;
                double t = px * dx + py * dy;
                t = std::clamp(t, 0.0, len);
                const double ex = px - dx * t, ey = py - dy * t;
                const double d2 = ex * ex + ey * ey;
                if (d2 > margin * margin) continue;
                streaks[static_cast<std::size_t>(y) * w + x] +=
                    static_cast<float>(amp * std::exp(-d2 * inv2s2));
            }
        }
    }

    SynthResult out;
    out.angle_deg = angle;
    out.pair.clean = clean;
    out.pair.rainy = Tensor({3, h, w});
    for (int c = 0; c < 3; ++c) {
        const float* cp = clean.plane(c);
        float* rp = out.pair.rainy.plane(c);
        for (std::size_t i = 0; i < streaks.size(); ++i) {
            rp[i] = std::min(1.0f, std::max(0.0f, cp[i] + streaks[i]));
        }
    }
    return out;
}

Tensor load_image(const std::string& path) {
    const RgbImage img = read_png(path);
    Tensor t({3, img.height, img.width});
    const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
    for (std::size_t i = 0; i < plane; ++i) {
        t.data[i] = img.pixels[i * 3] / 255.0f;
        t.data[plane + i] = img.pixels[i * 3 + 1] / 255.0f;
        t.data[2 * plane + i] = img.pixels[i * 3 + 2] / 255.0f;
    }
    return t;
}

void save_image(const Tensor& image, const std::string& path) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw Error("save_image: tensor must be (3,H,W)");
    }
    RgbImage img;
    img.height = image.dim(1);
    img.width = image.dim(2);
    const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
    img.pixels.resize(plane * 3);
    auto quantize = [](float v) {
        const float c = std::min(1.0f, std::max(0.0f, v));
        return static_cast<std::uint8_t>(std::floor(c * 255.0f + 0.5f));
    };
    for (std::size_t i = 0; i < plane; ++i) {
        img.pixels[i * 3] = quantize(image.data[i]);
        img.pixels[i * 3 + 1] = quantize(image.data[plane + i]);
        img.pixels[i * 3 + 2] = quantize(image.data[2 * plane + i]);
    }
    write_png(path, img);
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (out_h < 1 || out_w < 1) throw Error("resize: output dims must be >= 1");
    Tensor out({c, out_h, out_w});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int ci = 0; ci < c; ++ci) {
        const float* src = image.plane(ci);
        float* dst = out.plane(ci);
        for (int y = 0; y < out_h; ++y) {
            const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, h - 1.0);
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, h - 1);
            const double wy = fy - y0;
            for (int x = 0; x < out_w; ++x) {
                const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, w - 1.0);
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, w - 1);
                const double wx = fx - x0;
                const double top = src[y0 * w + x0] * (1 - wx) + src[y0 * w + x1] * wx;
                const double bot = src[y1 * w + x0] * (1 - wx) + src[y1 * w + x1] * wx;
                dst[static_cast<std::size_t>(y) * out_w + x] =
                    static_cast<float>(top * (1 - wy) + bot * wy);
            }
        }
    }
    return out;
}

namespace {

// edge-inclusive mirror, folded so any pad width is valid
int mirror_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    int j = i % period;
    if (j < 0) j += period;
    return j < n ? j : period - 1 - j;
}

}  // namespace

Tensor reflect_pad(const Tensor& image, const Padding& pad) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const int oh = h + pad.top + pad.bottom, ow = w + pad.left + pad.right;
    Tensor out({c, oh, ow});
    for (int ci = 0; ci < c; ++ci) {
        const float* src = image.plane(ci);
        float* dst = out.plane(ci);
        for (int y = 0; y < oh; ++y) {
            const int sy = mirror_index(y - pad.top, h);
            for (int x = 0; x < ow; ++x) {
                const int sx = mirror_index(x - pad.left, w);
                dst[static_cast<std::size_t>(y) * ow + x] = src[static_cast<std::size_t>(sy) * w + sx];
            }
        }
    }
    return out;
}

Tensor crop(const Tensor& image, const Padding& pad) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const int oh = h - pad.top - pad.bottom, ow = w - pad.left - pad.right;
    if (oh < 1 || ow < 1) throw Error("crop: padding exceeds image size");
    Tensor out({c, oh, ow});
    for (int ci = 0; ci < c; ++ci) {
        const float* src = image.plane(ci);
        float* dst = out.plane(ci);
        for (int y = 0; y < oh; ++y) {
            const float* row = src + static_cast<std::size_t>(y + pad.top) * w + pad.left;
            std::copy(row, row + ow, dst + static_cast<std::size_t>(y) * ow);
        }
    }
    return out;
}

Tensor flip_horizontal(const Tensor& image) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out(image.shape);
    for (int ci = 0; ci < c; ++ci) {
        const float* src = image.plane(ci);
        float* dst = out.plane(ci);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                dst[static_cast<std::size_t>(y) * w + x] =
                    src[static_cast<std::size_t>(y) * w + (w - 1 - x)];
            }
        }
    }
    return out;
}

Padding pad_to_multiple_of_8(int h, int w) {
    Padding p;
    const int ph = (8 - h % 8) % 8;
    const int pw = (8 - w % 8) % 8;
    p.top = ph / 2;
    p.bottom = ph - p.top;
    p.left = pw / 2;
    p.right = pw - p.left;
    return p;
}

ImagePair prepare(const ImagePair& pair, bool train_mode, Rng& rng) {
    require_same_shape(pair.rainy, pair.clean, "prepare");
    ImagePair out;
    out.id = pair.id;
    out.rainy = pair.rainy;
    out.clean = pair.clean;

    const int h = out.rainy.dim(1), w = out.rainy.dim(2);
    const int long_side = std::max(h, w);
    if (long_side > 512) {
        const double s = 512.0 / long_side;
        const int nh = std::max(1, static_cast<int>(std::lround(h * s)));
        const int nw = std::max(1, static_cast<int>(std::lround(w * s)));
        out.rainy = resize_bilinear(out.rainy, nh, nw);
        out.clean = resize_bilinear(out.clean, nh, nw);
    }

    out.pad = pad_to_multiple_of_8(out.rainy.dim(1), out.rainy.dim(2));
    if (out.pad.any()) {
        out.rainy = reflect_pad(out.rainy, out.pad);
        out.clean = reflect_pad(out.clean, out.pad);
    }

    if (train_mode && rng.bernoulli(0.5)) {
        out.rainy = flip_horizontal(out.rainy);
        out.clean = flip_horizontal(out.clean);
    }
    return out;
}

std::vector<std::string> list_pngs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw Error("not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") {
            out.push_back(e.path().string());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

Dataset Dataset::open(const std::string& root) {
    const fs::path rainy_dir = fs::path(root) / "rainy";
    const fs::path clean_dir = fs::path(root) / "clean";
    if (!fs::is_directory(rainy_dir) || !fs::is_directory(clean_dir)) {
        throw Error("dataset root must contain rainy/ and clean/: " + root);
    }

    Dataset ds;
    std::vector<std::string> unpaired;
    for (const auto& rainy : list_pngs(rainy_dir.string())) {
        const std::string id = fs::path(rainy).stem().string();
        const fs::path clean = clean_dir / (id + ".png");
        if (fs::exists(clean)) {
            ds.entries.push_back({id, rainy, clean.string()});
        } else {
            unpaired.push_back(id);
        }
    }
    for (const auto& clean : list_pngs(clean_dir.string())) {
        const std::string id = fs::path(clean).stem().string();
        if (!fs::exists(rainy_dir / (id + ".png"))) unpaired.push_back(id);
    }
    if (!unpaired.empty()) {
        std::string msg = "dataset has unpaired images:";
        for (const auto& id : unpaired) msg += " " + id;
        throw Error(msg);
    }
    if (ds.entries.empty()) throw Error("dataset is empty: " + root);
    return ds;
}

ImagePair Dataset::load(std::size_t i) const {
    const Entry& e = entries.at(i);
    ImagePair pair;
    pair.id = e.id;
    pair.rainy = load_image(e.rainy_path);
    pair.clean = load_image(e.clean_path);
    if (!pair.rainy.same_shape(pair.clean)) {
        throw Error("pair '" + e.id + "' has mismatched sizes: rainy " +
                    shape_str(pair.rainy.shape) + " vs clean " + shape_str(pair.clean.shape));
    }
    return pair;
}

}  // namespace nledn
