#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lakd/tensor.hpp"

namespace lakd {

/// Averaged absolute input-gradient map from a centered seed gradient.
struct ErfMap {
    int height = 0;
    int width = 0;
    std::vector<float> values;  // row-major, all >= 0
    int patch_count = 0;
    std::string layer;
    float max_value = 0.0f;
};

/// Central horizontal scanline with the x-axis rescaled to [-30, 30].
struct ErfProfile {
    std::vector<double> xs;
    std::vector<double> ys;
    float max_value = 0.0f;
    std::string layer;
};

struct BBox {
    int row0 = 0, col0 = 0, row1 = 0, col1 = 0;  // inclusive
    bool empty = true;
    int rows() const { return empty ? 0 : row1 - row0 + 1; }
    int cols() const { return empty ? 0 : col1 - col0 + 1; }
    bool contains(const BBox& other) const {
        if (other.empty) return true;
        if (empty) return false;
        return row0 <= other.row0 && col0 <= other.col0 && row1 >= other.row1 &&
               col1 >= other.col1;
    }
};

/// Maps an input tensor to the feature map being probed.
using ProbeFn = std::function<Tensor(const Tensor&)>;

/// For each patch: forward to the probed map, seed gradient 1 at its spatial
/// center on every channel, backpropagate, and accumulate |d/d input| summed
/// over input channels. Patches are uniform noise in [0,1) unless `inputs`
/// supplies them. The average uses 64-bit accumulators in patch order.
ErfMap compute_erf(const ProbeFn& probe, int in_channels, int patch_h, int patch_w,
                   int n_patches, std::uint64_t seed,
                   const std::vector<Tensor>* inputs = nullptr,
                   const std::string& layer_name = "");

ErfProfile extract_scanline(const ErfMap& map);

/// Tight bounding box of entries strictly greater than threshold.
BBox erf_support(const ErfMap& map, float threshold);

/// Writes <dir>/erf.f32 (raw LE floats), <dir>/erf.json (sidecar) and
/// <dir>/erf.pgm (log1p-normalized 8-bit view).
void save_erf(const ErfMap& map, const std::string& dir);
ErfMap load_erf(const std::string& dir);

}  // namespace lakd
