#include "lakd/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace lakd {

void TrainConfig::validate() const {
    if (!(lr_min > 0.0) || !(lr_max >= lr_min))
        throw std::invalid_argument("require 0 < lr_min <= lr_max");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw std::invalid_argument("adam betas must be in [0, 1)");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
    if (total_iters < 1) throw std::invalid_argument("total_iters must be >= 1");
    if (!(charbonnier_eps > 0.0)) throw std::invalid_argument("charbonnier_eps must be > 0");
    if (patch_schedule.empty()) throw std::invalid_argument("patch_schedule must be non-empty");
    if (patch_schedule.front().start_iter != 0)
        throw std::invalid_argument("patch_schedule must start at iteration 0");
    int prev = -1;
    for (const auto& p : patch_schedule) {
        if (p.start_iter <= prev)
            throw std::invalid_argument("patch_schedule iterations must be strictly increasing");
        prev = p.start_iter;
        if (p.patch_size < 8 || p.patch_size % 8 != 0)
            throw std::invalid_argument("patch sizes must be divisible by 8, got " +
                                        std::to_string(p.patch_size));
        if (p.batch_size < 1) throw std::invalid_argument("batch sizes must be >= 1");
    }
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["lr_max"] = lr_max;
    j["lr_min"] = lr_min;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["weight_decay"] = weight_decay;
    j["total_iters"] = total_iters;
    auto sched = nlohmann::json::array();
    for (const auto& p : patch_schedule)
        sched.push_back({p.start_iter, p.patch_size, p.batch_size});
    j["patch_schedule"] = sched;
    j["charbonnier_eps"] = charbonnier_eps;
    j["rng_seed"] = rng_seed;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    static const char* known[] = {"lr_max",       "lr_min",          "adam_beta1",
                                  "adam_beta2",   "weight_decay",    "total_iters",
                                  "patch_schedule", "charbonnier_eps", "rng_seed"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) ok = true;
        if (!ok) throw std::invalid_argument("unknown train config key: " + it.key());
    }
    TrainConfig c;
    if (j.contains("lr_max")) c.lr_max = j.at("lr_max").get<double>();
    if (j.contains("lr_min")) c.lr_min = j.at("lr_min").get<double>();
    if (j.contains("adam_beta1")) c.adam_beta1 = j.at("adam_beta1").get<double>();
    if (j.contains("adam_beta2")) c.adam_beta2 = j.at("adam_beta2").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("total_iters")) c.total_iters = j.at("total_iters").get<int>();
    if (j.contains("patch_schedule")) {
        c.patch_schedule.clear();
        for (const auto& e : j.at("patch_schedule")) {
            if (!e.is_array() || e.size() != 3)
                throw std::invalid_argument(
                    "patch_schedule entries must be [iteration, patch, batch]");
            c.patch_schedule.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<int>()});
        }
    }
    if (j.contains("charbonnier_eps")) c.charbonnier_eps = j.at("charbonnier_eps").get<double>();
    if (j.contains("rng_seed")) c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    c.validate();
    return c;
}

Tensor make_texture(int channels, int h, int w, Rng& rng) {
    Tensor img({1, channels, h, w});
    float* d = img.data();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c)
        std::fill_n(d + c * plane, plane, rng.uniform(0.1f, 0.9f));

    const int n_shapes = 24;
    for (int s = 0; s < n_shapes; ++s) {
        const bool disk = rng.next_float() < 0.5f;
        const int cy = static_cast<int>(rng.next_below(h));
        const int cx = static_cast<int>(rng.next_below(w));
        const int rad = 2 + static_cast<int>(rng.next_below(std::max(2, h / 4)));
        float color[8];
        for (int c = 0; c < channels; ++c) color[c] = rng.next_float();
        const int y0 = std::max(0, cy - rad), y1 = std::min(h - 1, cy + rad);
        const int x0 = std::max(0, cx - rad), x1 = std::min(w - 1, cx + rad);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                if (disk) {
                    const int dy = y - cy, dx = x - cx;
                    if (dy * dy + dx * dx > rad * rad) continue;
                }
                for (int c = 0; c < channels; ++c)
                    d[c * plane + static_cast<std::size_t>(y) * w + x] = color[c];
            }
    }
    return img;
}

std::vector<float> make_blur_kernel(BlurSpec::Kind kind, double radius, int* size_out) {
    if (!(radius > 0.0)) throw std::invalid_argument("blur radius must be > 0");
    int half;
    if (kind == BlurSpec::Kind::Gaussian)
        half = std::max(1, static_cast<int>(std::ceil(3.0 * radius)));
    else
        half = std::max(1, static_cast<int>(std::ceil(radius)));
    const int size = 2 * half + 1;
    std::vector<float> k(static_cast<std::size_t>(size) * size);
    double sum = 0.0;
    for (int y = -half; y <= half; ++y)
        for (int x = -half; x <= half; ++x) {
            double v;
            if (kind == BlurSpec::Kind::Gaussian) {
                v = std::exp(-(y * y + x * x) / (2.0 * radius * radius));
            } else {
                v = (y * y + x * x <= radius * radius) ? 1.0 : 0.0;
            }
            k[static_cast<std::size_t>(y + half) * size + (x + half)] = static_cast<float>(v);
            sum += v;
        }
    for (auto& v : k) v = static_cast<float>(v / sum);
    if (size_out) *size_out = size;
    return k;
}

namespace {

int reflect(int i, int n) {
    // reflect-101 style without repeating the border sample twice
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

Tensor blur_image(const Tensor& sharp, const std::vector<float>& kernel, int ksize) {
    const Shape& s = sharp.shape();
    const int C = s[1], H = s[2], W = s[3];
    const int half = ksize / 2;
    Tensor out(s);
    const float* in = sharp.data();
    float* o = out.data();
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int ky = -half; ky <= half; ++ky)
                    for (int kx = -half; kx <= half; ++kx) {
                        const int sy = reflect(y + ky, H);
                        const int sx = reflect(x + kx, W);
                        acc += static_cast<double>(
                                   kernel[static_cast<std::size_t>(ky + half) * ksize +
                                          (kx + half)]) *
                               in[c * plane + static_cast<std::size_t>(sy) * W + sx];
                    }
                o[c * plane + static_cast<std::size_t>(y) * W + x] = static_cast<float>(acc);
            }
    return out;
}

}  // namespace

std::vector<ImagePair> synth_dataset(const std::vector<Tensor>& sharp, const BlurSpec& spec) {
    if (sharp.empty()) throw std::invalid_argument("synth_dataset: empty sharp source");
    if (!(spec.radius_min > 0.0) || spec.radius_max < spec.radius_min)
        throw std::invalid_argument("synth_dataset: invalid blur radius range");
    Rng rng(spec.rng_seed);
    std::vector<ImagePair> pairs;
    pairs.reserve(sharp.size());
    for (const Tensor& img : sharp) {
        const double radius =
            spec.radius_min + (spec.radius_max - spec.radius_min) * rng.next_float();
        int ksize = 0;
        const auto kernel = make_blur_kernel(spec.kind, radius, &ksize);
        pairs.push_back({blur_image(img, kernel, ksize), Tensor(img.shape(), img.vec())});
    }
    return pairs;
}

Tensor charbonnier_loss(const Tensor& pred, const Tensor& target, float eps) {
    if (pred.shape() != target.shape())
        throw std::invalid_argument("charbonnier_loss shape mismatch: " +
                                    shape_str(pred.shape()) + " vs " +
                                    shape_str(target.shape()));
    if (!(eps > 0.0f)) throw std::invalid_argument("charbonnier eps must be > 0");
    const Tensor d = sub(pred, target);
    return mean(sqrt_elem(add(mul(d, d), eps * eps)));
}

double cosine_lr(int t, int total, double lr_max, double lr_min) {
    if (total < 1) throw std::invalid_argument("cosine_lr: total must be >= 1");
    if (t < 0) throw std::invalid_argument("cosine_lr: t must be >= 0");
    if (t > total) return lr_min;
    return lr_min + 0.5 * (lr_max - lr_min) *
                        (1.0 + std::cos(3.14159265358979323846 * t / total));
}

void adamw_step(ParamMap& params, AdamState& state, int t, double lr,
                const TrainConfig& cfg) {
    if (t < 1) throw std::invalid_argument("adamw_step: t must be >= 1");
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
    constexpr double kEps = 1e-8;
    for (auto& [name, p] : params) {
        float* theta = p.data();
        const std::size_t n = p.numel();
        if (cfg.weight_decay > 0.0) {
            const float shrink = static_cast<float>(lr * cfg.weight_decay);
            for (std::size_t i = 0; i < n; ++i) theta[i] -= shrink * theta[i];
        }
        if (!p.has_grad()) continue;
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(n, 0.0f);
        if (v.empty()) v.assign(n, 0.0f);
        const float* g = p.grad().data();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = static_cast<float>(cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i]);
            v[i] = static_cast<float>(cfg.adam_beta2 * v[i] +
                                      (1.0 - cfg.adam_beta2) * static_cast<double>(g[i]) * g[i]);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + kEps));
        }
    }
}

double psnr(const Tensor& pred, const Tensor& target, double peak) {
    if (pred.shape() != target.shape())
        throw std::invalid_argument("psnr shape mismatch: " + shape_str(pred.shape()) +
                                    " vs " + shape_str(target.shape()));
    double mse = 0.0;
    const float* a = pred.data();
    const float* b = target.data();
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(pred.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

TrainResult train(const NetworkConfig& net_cfg, const TrainConfig& cfg,
                  const std::vector<ImagePair>& dataset) {
    net_cfg.validate();
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    const int C = net_cfg.input_channels();
    for (const auto& pair : dataset) {
        if (pair.blurry.shape() != pair.sharp.shape() || pair.blurry.shape().size() != 4 ||
            pair.blurry.shape()[1] != C)
            throw std::invalid_argument("train: dataset pair has shape " +
                                        shape_str(pair.blurry.shape()) + ", expected [1," +
                                        std::to_string(C) + ",H,W]");
    }

    TrainResult res;
    res.params = init_params(net_cfg, cfg.rng_seed);
    AdamState state;
    Rng rng(cfg.rng_seed + 1);

    for (int it = 0; it < cfg.total_iters; ++it) {
        const PatchPhase* phase = &cfg.patch_schedule.front();
        for (const auto& p : cfg.patch_schedule)
            if (p.start_iter <= it) phase = &p;
        const int ps = phase->patch_size;
        const int bs = phase->batch_size;

        Tensor blur_batch({bs, C, ps, ps});
        Tensor sharp_batch({bs, C, ps, ps});
        for (int b = 0; b < bs; ++b) {
            const auto& pair = dataset[rng.next_below(dataset.size())];
            const int H = pair.sharp.shape()[2], W = pair.sharp.shape()[3];
            if (ps > H || ps > W)
                throw std::invalid_argument("train: patch size " + std::to_string(ps) +
                                            " exceeds image size " + std::to_string(H) + "x" +
                                            std::to_string(W));
            const int y0 = static_cast<int>(rng.next_below(H - ps + 1));
            const int x0 = static_cast<int>(rng.next_below(W - ps + 1));
            const std::size_t plane = static_cast<std::size_t>(H) * W;
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < ps; ++y) {
                    const float* sb = pair.blurry.data() + c * plane +
                                      static_cast<std::size_t>(y0 + y) * W + x0;
                    const float* ss = pair.sharp.data() + c * plane +
                                      static_cast<std::size_t>(y0 + y) * W + x0;
                    float* db = blur_batch.data() +
                                ((static_cast<std::size_t>(b) * C + c) * ps + y) * ps;
                    float* ds = sharp_batch.data() +
                                ((static_cast<std::size_t>(b) * C + c) * ps + y) * ps;
                    std::copy_n(sb, ps, db);
                    std::copy_n(ss, ps, ds);
                }
        }

        const Tensor pred = lakdnet_forward(blur_batch, res.params, net_cfg);
        const Tensor loss =
            charbonnier_loss(pred, sharp_batch, static_cast<float>(cfg.charbonnier_eps));
        const double loss_v = loss.item();
        if (!std::isfinite(loss_v)) {
            res.aborted = true;
            res.completed_iters = it;
            return res;  // params are the last state with a finite loss
        }
        res.loss_trace.push_back(loss_v);

        backward(loss, 1.0f);
        adamw_step(res.params, state, it + 1,
                   cosine_lr(it, cfg.total_iters, cfg.lr_max, cfg.lr_min), cfg);
        for (auto& [name, p] : res.params) p.zero_grad();
        res.completed_iters = it + 1;
    }
    return res;
}

Tensor infer_tiled(const Tensor& input, const ParamMap& params, const NetworkConfig& cfg,
                   int tile, int overlap) {
    NoGradGuard ng;
    const Shape& s = input.shape();
    if (s.size() != 4 || s[0] != 1)
        throw std::invalid_argument("infer_tiled expects a single [1,C,H,W] image");
    const int C = s[1], H = s[2], W = s[3];
    if (H % 8 != 0 || W % 8 != 0)
        throw std::invalid_argument("infer_tiled: spatial size must be divisible by 8");
    if (tile % 8 != 0 || overlap < 0 || 2 * overlap >= tile)
        throw std::invalid_argument("infer_tiled: bad tile/overlap");

    if (H <= tile && W <= tile) return lakdnet_forward(input, params, cfg);

    const int th = std::min(tile, H);
    const int tw = std::min(tile, W);
    auto positions = [&](int extent, int t) {
        std::vector<int> pos;
        const int step = t - overlap;
        for (int p = 0;; p += step) {
            if (p + t >= extent) {
                pos.push_back(extent - t);
                break;
            }
            pos.push_back(p);
        }
        return pos;
    };
    const auto ys = positions(H, th);
    const auto xs = positions(W, tw);

    std::vector<double> acc(static_cast<std::size_t>(3) * H * W, 0.0);
    std::vector<double> weight(static_cast<std::size_t>(H) * W, 0.0);
    const std::size_t plane = static_cast<std::size_t>(H) * W;

    Tensor patch({1, C, th, tw});
    for (int y0 : ys)
        for (int x0 : xs) {
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < th; ++y)
                    std::copy_n(input.data() + c * plane +
                                    static_cast<std::size_t>(y0 + y) * W + x0,
                                tw,
                                patch.data() +
                                    (static_cast<std::size_t>(c) * th + y) * tw);
            const Tensor out = lakdnet_forward(patch, params, cfg);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < th; ++y)
                    for (int x = 0; x < tw; ++x) {
                        acc[c * plane + static_cast<std::size_t>(y0 + y) * W + (x0 + x)] +=
                            out.data()[(static_cast<std::size_t>(c) * th + y) * tw + x];
                        if (c == 0)
                            weight[static_cast<std::size_t>(y0 + y) * W + (x0 + x)] += 1.0;
                    }
        }

    Tensor result({1, 3, H, W});
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            result.data()[c * plane + i] = static_cast<float>(acc[c * plane + i] / weight[i]);
    return result;
}

}  // namespace lakd
