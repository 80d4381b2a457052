#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lakd/lakdnet.hpp"
#include "lakd/rng.hpp"
#include "lakd/tensor.hpp"

namespace lakd {

struct PatchPhase {
    int start_iter = 0;
    int patch_size = 64;
    int batch_size = 1;
};

struct TrainConfig {
    double lr_max = 3e-4;
    double lr_min = 1e-6;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double weight_decay = 1e-4;
    int total_iters = 1200;
    std::vector<PatchPhase> patch_schedule = {{0, 32, 8}, {400, 48, 4}, {800, 64, 2}};
    double charbonnier_eps = 1e-3;
    std::uint64_t rng_seed = 0;

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

struct BlurSpec {
    enum class Kind { Gaussian, Disk };
    Kind kind = Kind::Gaussian;
    double radius_min = 1.0;  // sigma for gaussian, radius for disk
    double radius_max = 2.0;
    std::uint64_t rng_seed = 0;
};

struct ImagePair {
    Tensor blurry;  // [1,C,H,W]
    Tensor sharp;
};

/// Dead-leaves style procedural texture: random rectangles and disks.
Tensor make_texture(int channels, int h, int w, Rng& rng);

/// Normalized blur kernel with odd support; sums to 1.
std::vector<float> make_blur_kernel(BlurSpec::Kind kind, double radius, int* size_out);

/// Blurs each sharp image with a per-sample jittered kernel using
/// reflect-padded convolution. Deterministic per spec seed.
std::vector<ImagePair> synth_dataset(const std::vector<Tensor>& sharp, const BlurSpec& spec);

/// Mean over elements of sqrt((pred - target)^2 + eps^2).
Tensor charbonnier_loss(const Tensor& pred, const Tensor& target, float eps);

/// lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi t / total)); clamps past total.
double cosine_lr(int t, int total, double lr_max, double lr_min);

/// Per-parameter first/second moment buffers, keyed like the ParamMap.
struct AdamState {
    std::map<std::string, std::vector<float>> m;
    std::map<std::string, std::vector<float>> v;
};

/// Decoupled weight decay followed by a bias-corrected Adam update
/// (numerical epsilon 1e-8). Parameters with no gradient are still decayed.
void adamw_step(ParamMap& params, AdamState& state, int t, double lr,
                const TrainConfig& cfg);

/// 10 log10(peak^2 / MSE); +infinity when MSE == 0.
double psnr(const Tensor& pred, const Tensor& target, double peak = 1.0);

struct TrainResult {
    ParamMap params;
    std::vector<double> loss_trace;
    bool aborted = false;  // NaN loss abort; params hold the last good state
    int completed_iters = 0;
};

TrainResult train(const NetworkConfig& net_cfg, const TrainConfig& cfg,
                  const std::vector<ImagePair>& dataset);

/// Tiled inference with 16px overlap, overlap-averaged. H and W must be
/// divisible by 8.
Tensor infer_tiled(const Tensor& input, const ParamMap& params, const NetworkConfig& cfg,
                   int tile = 128, int overlap = 16);

}  // namespace lakd
