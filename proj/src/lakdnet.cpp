#include "lakd/lakdnet.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "lakd/rng.hpp"

#include "json.hpp"

namespace lakd {

void NetworkConfig::validate() const {
    if (base_channels < 4 || base_channels % 4 != 0)
        throw std::invalid_argument("base_channels must be >= 4 and divisible by 4, got " +
                                    std::to_string(base_channels));
    for (int n : block_counts)
        if (n < 1) throw std::invalid_argument("block counts must be >= 1");
    if (mixer_kernel < 1 || mixer_kernel % 2 == 0)
        throw std::invalid_argument("mixer_kernel must be odd, got " +
                                    std::to_string(mixer_kernel));
}

std::string NetworkConfig::to_json() const {
    nlohmann::json j;
    j["base_channels"] = base_channels;
    j["block_counts"] = block_counts;
    j["mixer_kernel"] = mixer_kernel;
    j["input_mode"] = input_mode == InputMode::DualPixel ? "dual_pixel" : "single";
    j["block_variant"] = block_variant == BlockVariant::Dilated ? "dilated" : "lakd";
    j["shortcut_inner"] = shortcut_inner;
    j["shortcut_middle"] = shortcut_middle;
    return j.dump(2);
}

NetworkConfig NetworkConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    static const char* known[] = {"base_channels",  "block_counts",   "mixer_kernel",
                                  "input_mode",     "block_variant",  "shortcut_inner",
                                  "shortcut_middle"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) ok = true;
        if (!ok) throw std::invalid_argument("unknown network config key: " + it.key());
    }
    NetworkConfig c;
    if (j.contains("base_channels")) c.base_channels = j.at("base_channels").get<int>();
    if (j.contains("block_counts")) {
        auto v = j.at("block_counts").get<std::vector<int>>();
        if (v.size() != 4)
            throw std::invalid_argument("block_counts must have exactly 4 entries");
        for (int i = 0; i < 4; ++i) c.block_counts[i] = v[i];
    }
    if (j.contains("mixer_kernel")) c.mixer_kernel = j.at("mixer_kernel").get<int>();
    if (j.contains("input_mode")) {
        const std::string m = j.at("input_mode").get<std::string>();
        if (m == "single")
            c.input_mode = InputMode::Single;
        else if (m == "dual_pixel")
            c.input_mode = InputMode::DualPixel;
        else
            throw std::invalid_argument("input_mode must be 'single' or 'dual_pixel'");
    }
    if (j.contains("block_variant")) {
        const std::string v = j.at("block_variant").get<std::string>();
        if (v == "lakd")
            c.block_variant = BlockVariant::LaKD;
        else if (v == "dilated")
            c.block_variant = BlockVariant::Dilated;
        else
            throw std::invalid_argument("block_variant must be 'lakd' or 'dilated'");
    }
    if (j.contains("shortcut_inner")) c.shortcut_inner = j.at("shortcut_inner").get<bool>();
    if (j.contains("shortcut_middle")) c.shortcut_middle = j.at("shortcut_middle").get<bool>();
    c.validate();
    return c;
}

namespace {

LayerDef conv_def(std::string name, int cin, int cout, int k, int groups = 1,
                  int dilation = 1) {
    LayerDef d;
    d.name = std::move(name);
    d.kind = LayerDef::Kind::Conv;
    d.conv = ConvSpec{cin, cout, k, groups, dilation, true};
    d.norm_channels = 0;
    return d;
}

LayerDef norm_def(std::string name, int c) {
    LayerDef d;
    d.name = std::move(name);
    d.kind = LayerDef::Kind::Norm;
    d.norm_channels = c;
    return d;
}

void emit_block(const NetworkConfig& cfg, const std::string& prefix, int c,
                const std::function<void(const LayerDef&)>& fn) {
    fn(norm_def(prefix + "ln0", c));
    if (cfg.block_variant == BlockVariant::LaKD) {
        const int k = cfg.mixer_kernel;
        fn(conv_def(prefix + "mix.dw1", c, c, k, c));
        fn(conv_def(prefix + "mix.pw1", c, c, 1));
        fn(conv_def(prefix + "mix.dw2", c, c, k, c));
        fn(conv_def(prefix + "mix.pw2", c, c, 1));
    } else {
        fn(conv_def(prefix + "mix.d1", c, c, 3, 1, 1));
        fn(conv_def(prefix + "mix.d2", c, c, 3, 1, 2));
        fn(conv_def(prefix + "mix.d3", c, c, 3, 1, 3));
    }
    fn(norm_def(prefix + "ln1", c));
    fn(conv_def(prefix + "fuse.w1", c, c, 1));
    fn(conv_def(prefix + "fuse.dwa", c, c, 3, c));
    fn(conv_def(prefix + "fuse.w2", c, c, 1));
    fn(conv_def(prefix + "fuse.dwb", c, c, 3, c));
    fn(norm_def(prefix + "ln2", c));
}

}  // namespace

void for_each_layer(const NetworkConfig& cfg,
                    const std::function<void(const LayerDef&)>& fn) {
    cfg.validate();
    const int C = cfg.base_channels;
    fn(conv_def("stem", cfg.input_channels(), C, 3));
    for (int level = 1; level <= 4; ++level) {
        const int cl = cfg.level_channels(level);
        for (int n = 0; n < cfg.block_counts[level - 1]; ++n)
            emit_block(cfg, "enc" + std::to_string(level) + ".b" + std::to_string(n) + ".",
                       cl, fn);
        if (level < 4)
            fn(conv_def("down" + std::to_string(level), 4 * cl, 2 * cl, 1));
    }
    for (int level = 3; level >= 1; --level) {
        const int cl = cfg.level_channels(level);
        fn(conv_def("up" + std::to_string(level), 2 * cl, 4 * cl, 1));
        fn(conv_def("skip" + std::to_string(level), 2 * cl, cl, 1));
        for (int n = 0; n < cfg.block_counts[level - 1]; ++n)
            emit_block(cfg, "dec" + std::to_string(level) + ".b" + std::to_string(n) + ".",
                       cl, fn);
    }
    fn(conv_def("head", C, 3, 3));
}

ParamMap init_params(const NetworkConfig& cfg, std::uint64_t seed) {
    ParamMap params;
    Rng rng(seed);
    for_each_layer(cfg, [&](const LayerDef& d) {
        if (d.kind == LayerDef::Kind::Conv) {
            const int fan_in =
                (d.conv.in_channels / d.conv.groups) * d.conv.kernel_size * d.conv.kernel_size;
            const float b = 1.0f / std::sqrt(static_cast<float>(fan_in));
            Tensor w({d.conv.out_channels, d.conv.in_channels / d.conv.groups,
                      d.conv.kernel_size, d.conv.kernel_size},
                     true);
            for (auto& v : w.vec()) v = rng.uniform(-b, b);
            params.emplace(d.name + ".w", std::move(w));
            params.emplace(d.name + ".b", Tensor::zeros({d.conv.out_channels}, true));
        } else {
            params.emplace(d.name + ".gamma",
                           Tensor::full({d.norm_channels}, 1.0f, true));
            params.emplace(d.name + ".beta", Tensor::zeros({d.norm_channels}, true));
        }
    });
    return params;
}

std::size_t count_params(const NetworkConfig& cfg) {
    std::size_t n = 0;
    for_each_layer(cfg, [&](const LayerDef& d) {
        if (d.kind == LayerDef::Kind::Conv)
            n += d.conv.weight_count() + static_cast<std::size_t>(d.conv.out_channels);
        else
            n += 2 * static_cast<std::size_t>(d.norm_channels);
    });
    return n;
}

namespace {

const Tensor& param(const ParamMap& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw std::invalid_argument("missing parameter: " + name);
    return it->second;
}

Tensor apply_conv(const ParamMap& p, const std::string& name, const Tensor& x, int cin,
                  int cout, int k, int groups = 1, int dilation = 1) {
    return conv2d(x, ConvSpec{cin, cout, k, groups, dilation, true}, param(p, name + ".w"),
                  param(p, name + ".b"));
}

Tensor apply_norm(const ParamMap& p, const std::string& name, const Tensor& x) {
    return layer_norm(x, param(p, name + ".gamma"), param(p, name + ".beta"));
}

}  // namespace

Tensor lakd_block_forward(const Tensor& f_prev, const ParamMap& params,
                          const std::string& prefix, const NetworkConfig& cfg, int channels) {
    if (f_prev.shape().size() != 4 || f_prev.shape()[1] != channels)
        throw std::invalid_argument("block input shape " + shape_str(f_prev.shape()) +
                                    " does not match level channels " +
                                    std::to_string(channels));
    const int c = channels;
    const Tensor z0 = apply_norm(params, prefix + "ln0", f_prev);

    // feature mixer chain; with shortcut_inner off each step is g(z) alone
    Tensor z = z0;
    auto mix_step = [&](const Tensor& gz) { return cfg.shortcut_inner ? add(z0, gz) : gz; };
    if (cfg.block_variant == BlockVariant::LaKD) {
        const int k = cfg.mixer_kernel;
        z = mix_step(apply_conv(params, prefix + "mix.dw1", z, c, c, k, c));
        z = mix_step(apply_conv(params, prefix + "mix.pw1", z, c, c, 1));
        z = mix_step(apply_conv(params, prefix + "mix.dw2", z, c, c, k, c));
        z = mix_step(apply_conv(params, prefix + "mix.pw2", z, c, c, 1));
    } else {
        z = mix_step(apply_conv(params, prefix + "mix.d1", z, c, c, 3, 1, 1));
        z = mix_step(apply_conv(params, prefix + "mix.d2", z, c, c, 3, 1, 2));
        z = mix_step(apply_conv(params, prefix + "mix.d3", z, c, c, 3, 1, 3));
    }

    const Tensor m = cfg.shortcut_middle ? add(f_prev, z) : z;
    const Tensor t = apply_norm(params, prefix + "ln1", m);

    // gated fusion: GELU(dw3(W1 t)) * dw3(W2 t)
    Tensor gate = apply_conv(params, prefix + "fuse.w1", t, c, c, 1);
    gate = gelu(apply_conv(params, prefix + "fuse.dwa", gate, c, c, 3, c));
    Tensor value = apply_conv(params, prefix + "fuse.w2", t, c, c, 1);
    value = apply_conv(params, prefix + "fuse.dwb", value, c, c, 3, c);

    const Tensor fused = apply_norm(params, prefix + "ln2", mul(gate, value));
    return add(f_prev, fused);
}

Tensor lakdnet_forward(const Tensor& input, const ParamMap& params, const NetworkConfig& cfg,
                       TapMap* taps) {
    cfg.validate();
    const Shape& s = input.shape();
    if (s.size() != 4)
        throw std::invalid_argument("network input must be [B,C,H,W], got " + shape_str(s));
    if (s[1] != cfg.input_channels())
        throw std::invalid_argument("network input has " + std::to_string(s[1]) +
                                    " channels, config expects " +
                                    std::to_string(cfg.input_channels()));
    if (s[2] % 8 != 0 || s[3] % 8 != 0)
        throw std::invalid_argument("input spatial size " + std::to_string(s[2]) + "x" +
                                    std::to_string(s[3]) +
                                    " must be divisible by 8 (three 2x downsamplings)");

    const int C = cfg.base_channels;
    Tensor x = apply_conv(params, "stem", input, cfg.input_channels(), C, 3);

    std::vector<Tensor> skips(4);  // encoder outputs for levels 1..3
    for (int level = 1; level <= 4; ++level) {
        const int cl = cfg.level_channels(level);
        for (int n = 0; n < cfg.block_counts[level - 1]; ++n)
            x = lakd_block_forward(
                x, params, "enc" + std::to_string(level) + ".b" + std::to_string(n) + ".",
                cfg, cl);
        if (taps) (*taps)["enc" + std::to_string(level)] = x;
        if (level < 4) {
            skips[level] = x;
            x = apply_conv(params, "down" + std::to_string(level), pixel_unshuffle(x, 2),
                           4 * cl, 2 * cl, 1);
        }
    }
    if (taps) (*taps)["bt_neck"] = x;

    for (int level = 3; level >= 1; --level) {
        const int cl = cfg.level_channels(level);
        Tensor up = apply_conv(params, "up" + std::to_string(level), x, 2 * cl, 4 * cl, 1);
        up = pixel_shuffle(up, 2);
        x = apply_conv(params, "skip" + std::to_string(level),
                       concat_channels(up, skips[level]), 2 * cl, cl, 1);
        for (int n = 0; n < cfg.block_counts[level - 1]; ++n)
            x = lakd_block_forward(
                x, params, "dec" + std::to_string(level) + ".b" + std::to_string(n) + ".",
                cfg, cl);
        if (taps) (*taps)["dec" + std::to_string(level)] = x;
    }

    const Tensor out = apply_conv(params, "head", x, C, 3, 3);
    const Tensor rgb =
        cfg.input_mode == InputMode::DualPixel ? slice_channels(input, 0, 3) : input;
    return add(rgb, out);
}

}  // namespace lakd
