#pragma once

#include <cstdint>
#include <vector>

namespace nledn {

// Per-output-cell argmax locations recorded by 2x2 max-pooling and
// consumed by max-unpooling. `idx` stores, for each pooled cell, the
// flat position (h*W + w) of the winning element inside its channel
// plane of the pre-pool map.
struct PoolIndices {
    int channels = 0;
    int out_h = 0;  // pooled height (H/2)
    int out_w = 0;  // pooled width (W/2)
    int src_h = 0;  // pre-pool height
    int src_w = 0;  // pre-pool width
    std::vector<std::int32_t> idx;

    std::int64_t cells() const {
        return static_cast<std::int64_t>(channels) * out_h * out_w;
    }
};

}  // namespace nledn
