#pragma once

// Image I/O, geometry (resize / reflect-pad / flip), the synthetic
// rain-streak generator, and dataset handling. All images are (3,H,W)
// float tensors in [0,1].

#include <cstdint>
#include <string>
#include <vector>

#include "nledn/rng.hpp"
#include "nledn/tensor.hpp"

namespace nledn {

struct Padding {
    int top = 0, bottom = 0, left = 0, right = 0;
    bool any() const { return top || bottom || left || right; }
};

struct ImagePair {
    Tensor rainy;
    Tensor clean;
    std::string id;
    Padding pad;  // recorded so network outputs can be cropped back
};

// Additive rain-streak layer parameters. All streaks in one image share a
// single sampled angle (real rain falls near-parallel); the remaining
// attributes are drawn per streak.
struct RainParams {
    int streak_count = 120;
    double angle_min_deg = 60.0;  // measured from horizontal
    double angle_max_deg = 120.0;
    double length_min = 8.0;  // px
    double length_max = 24.0;
    double sigma_min = 0.6;  // Gaussian cross-profile width, px
    double sigma_max = 1.2;
    double intensity_min = 0.05;  // additive brightness
    double intensity_max = 0.30;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthResult {
    ImagePair pair;
    double angle_deg = 0.0;  // the per-image angle, for the manifest
};

SynthResult synth_rain(const Tensor& clean, const RainParams& params);

// PNG <-> tensor. Loading divides by 255; saving clamps to [0,1],
// multiplies by 255 and rounds half up.
Tensor load_image(const std::string& path);
void save_image(const Tensor& image, const std::string& path);

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);
Tensor reflect_pad(const Tensor& image, const Padding& pad);
Tensor crop(const Tensor& image, const Padding& pad);
Tensor flip_horizontal(const Tensor& image);

// Pad amounts that bring (h,w) up to the next multiple of 8, split
// symmetrically with the extra row/column on the bottom/right.
Padding pad_to_multiple_of_8(int h, int w);

// Resizes so the long side is at most 512 (both images identically),
// reflect-pads to multiples of 8, and in train mode flips horizontally
// with probability 1/2 using the caller's RNG (one draw for the pair).
ImagePair prepare(const ImagePair& pair, bool train_mode, Rng& rng);

// Dataset layout on disk: <root>/rainy/<id>.png + <root>/clean/<id>.png,
// paired by file name.
struct Dataset {
    struct Entry {
        std::string id;
        std::string rainy_path;
        std::string clean_path;
    };
    std::vector<Entry> entries;

    static Dataset open(const std::string& root);
    ImagePair load(std::size_t i) const;
    std::size_t size() const { return entries.size(); }
};

std::vector<std::string> list_pngs(const std::string& dir);

}  // namespace nledn
