#pragma once

// PSNR and single-scale SSIM on the BT.601 luminance channel. Both
// metrics accumulate in double regardless of the tensor element type.

#include <string>
#include <vector>

#include "nledn/tensor.hpp"

namespace nledn {

Tensor rgb_to_y(const Tensor& rgb);

// 10*log10(1/MSE) for [0,1] images; +inf for identical inputs.
double psnr(const Tensor& a, const Tensor& b);

// 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=1, averaged over
// valid window positions. Requires min(H,W) >= 11.
double ssim(const Tensor& a, const Tensor& b);

struct EvalEntry {
    std::string id;
    double psnr_db = 0.0;  // +inf when images are identical
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<EvalEntry> entries;
    double mean_psnr = 0.0;  // over finite entries only
    double mean_ssim = 0.0;
    int skipped_infinite = 0;  // identical pairs excluded from mean_psnr

    void finalize();
    std::string to_tsv() const;
};

}  // namespace nledn
