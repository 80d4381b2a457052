#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "lakd/layers.hpp"
#include "lakd/tensor.hpp"

namespace lakd {

enum class InputMode { Single, DualPixel };
enum class BlockVariant { LaKD, Dilated };

struct NetworkConfig {
    int base_channels = 16;
    std::array<int, 4> block_counts = {2, 3, 3, 4};
    int mixer_kernel = 9;
    InputMode input_mode = InputMode::Single;
    BlockVariant block_variant = BlockVariant::LaKD;
    bool shortcut_inner = true;
    bool shortcut_middle = true;

    int input_channels() const { return input_mode == InputMode::DualPixel ? 6 : 3; }
    int level_channels(int level) const { return base_channels << (level - 1); }
    void validate() const;

    std::string to_json() const;
    static NetworkConfig from_json(const std::string& text);
};

/// Learnable parameters keyed by layer path; std::map keeps iteration order
/// deterministic for the optimizer and the checkpoint writer.
using ParamMap = std::map<std::string, Tensor>;

struct LayerDef {
    enum class Kind { Conv, Norm };
    std::string name;
    Kind kind;
    ConvSpec conv;     // valid when kind == Conv
    int norm_channels; // valid when kind == Norm
};

/// Visits every learnable layer of the network in architectural order.
void for_each_layer(const NetworkConfig& cfg,
                    const std::function<void(const LayerDef&)>& fn);

/// Conv weights ~ U(-b, b) with b = sqrt(1/fan_in); biases 0; LN affine (1,0).
ParamMap init_params(const NetworkConfig& cfg, std::uint64_t seed);

/// Exact number of learnable scalars.
std::size_t count_params(const NetworkConfig& cfg);

/// One block pass at the given level channel count. `prefix` selects the
/// block's parameters, e.g. "enc1.b0.".
Tensor lakd_block_forward(const Tensor& f_prev, const ParamMap& params,
                          const std::string& prefix, const NetworkConfig& cfg,
                          int channels);

/// Named activations captured during a forward pass ("bt_neck", "enc1"...).
using TapMap = std::map<std::string, Tensor>;

/// Full U-shape forward: Y = I_rgb + Net(I). H and W must be divisible by 8.
Tensor lakdnet_forward(const Tensor& input, const ParamMap& params,
                       const NetworkConfig& cfg, TapMap* taps = nullptr);

}  // namespace lakd
