#pragma once

#include "lakd/tensor.hpp"

namespace lakd {

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel_size = 0;  // square, odd
    int groups = 1;
    int dilation = 1;
    bool has_bias = true;

    int pad() const { return dilation * (kernel_size - 1) / 2; }
    void validate() const;
    std::size_t weight_count() const;
};

/// Grouped 2D cross-correlation with zero same-padding. Weight layout is
/// [Cout, Cin/groups, k, k]; bias [Cout]. Output spatial size equals input.
Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
              const Tensor& bias = Tensor());

/// Channel-dimension layer normalization: per (b,h,w) normalize over C,
/// then apply the per-channel affine gamma/beta.
Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  float epsilon = 1e-6f);

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF via erf.
Tensor gelu(const Tensor& input);

/// Space-to-depth: [B,C,H,W] -> [B,C*r^2,H/r,W/r]. Output channel
/// c*r^2 + dy*r + dx at (h,w) takes input channel c at (h*r+dy, w*r+dx).
Tensor pixel_unshuffle(const Tensor& input, int r);

/// Depth-to-space, the exact inverse of pixel_unshuffle.
Tensor pixel_shuffle(const Tensor& input, int r);

/// Concatenate along the channel dimension; other dims must match.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// View of channels [c0, c1) as a new tensor.
Tensor slice_channels(const Tensor& t, int c0, int c1);

}  // namespace lakd
