#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "lakd/checkpoint.hpp"
#include "lakd/image_io.hpp"
#include "lakd/rng.hpp"
#include "lakd/train.hpp"

using namespace lakd;

namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "lakd_pipeline_test";
    fs::create_directories(dir);
    return dir;
}

std::vector<float> checkpoint_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    std::vector<float> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>(raw[i]);
    return out;
}

}  // namespace

TEST_CASE("charbonnier loss values") {
    const float eps = 1e-3f;
    Tensor same({2}, {0.5f, -1.0f});
    CHECK(charbonnier_loss(same, same, eps).item() == doctest::Approx(eps).epsilon(1e-6));

    Tensor a({2}, {1.0f, 0.0f});
    Tensor b({2}, {1.0f, -0.1f});
    // elementwise: sqrt(0 + eps^2) = eps; sqrt(0.01 + 1e-6)
    const double expect = 0.5 * (eps + std::sqrt(0.01 + 1e-6));
    CHECK(charbonnier_loss(a, b, eps).item() == doctest::Approx(expect).epsilon(1e-6));

    // lower bound eps, approaches |diff| for large residuals
    Rng rng(3);
    Tensor x({64}), y({64});
    for (auto& v : x.vec()) v = rng.uniform(-2.0f, 2.0f);
    for (auto& v : y.vec()) v = rng.uniform(-2.0f, 2.0f);
    const float loss = charbonnier_loss(x, y, eps).item();
    CHECK(loss >= eps);
    double l1 = 0.0;
    for (int i = 0; i < 64; ++i) l1 += std::abs(x.vec()[i] - y.vec()[i]);
    l1 /= 64.0;
    CHECK(loss == doctest::Approx(l1).epsilon(1e-2));

    // gradient flows
    Tensor p({3}, {0.4f, 0.2f, -0.7f}, true);
    Tensor t({3}, {0.0f, 0.0f, 0.0f});
    backward(charbonnier_loss(p, t, eps));
    for (int i = 0; i < 3; ++i)
        CHECK(std::abs(p.grad()[i]) > 0.0f);
}

TEST_CASE("cosine learning-rate schedule") {
    CHECK(cosine_lr(0, 1200, 3e-4, 1e-6) == doctest::Approx(3e-4).epsilon(1e-12));
    CHECK(cosine_lr(1200, 1200, 3e-4, 1e-6) == doctest::Approx(1e-6).epsilon(1e-12));
    // midpoint: lr_min + 0.5 (lr_max - lr_min)
    CHECK(cosine_lr(600, 1200, 3e-4, 1e-6) ==
          doctest::Approx(1e-6 + 0.5 * (3e-4 - 1e-6)).epsilon(1e-12));
    // clamps past the horizon
    CHECK(cosine_lr(2400, 1200, 3e-4, 1e-6) == doctest::Approx(1e-6).epsilon(1e-12));
    // monotone nonincreasing
    double prev = cosine_lr(0, 100, 1e-3, 1e-6);
    for (int t = 1; t <= 110; ++t) {
        const double cur = cosine_lr(t, 100, 1e-3, 1e-6);
        CHECK(cur <= prev + 1e-18);
        prev = cur;
    }
}

TEST_CASE("adamw first step matches hand arithmetic") {
    TrainConfig cfg;
    cfg.weight_decay = 1e-4;
    ParamMap params;
    Tensor p({1}, {1.0f}, true);
    p.grad() = {0.1f};
    params.emplace("p.w", p);
    AdamState state;
    adamw_step(params, state, 1, 3e-4, cfg);
    // decay: 1 - lr*wd*1; then m_hat = 0.1, v_hat = 0.01,
    // update = lr * 0.1 / (0.1 + 1e-8)
    const double decayed = 1.0 - 3e-4 * 1e-4;
    const double expect = decayed - 3e-4 * (0.1 / (std::sqrt(0.01) + 1e-8));
    CHECK(params.at("p.w").vec()[0] == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("adamw with zero decay and zero grad leaves parameters unchanged") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    ParamMap params;
    Tensor p({2}, {1.5f, -2.0f}, true);
    params.emplace("p.w", p);
    AdamState state;
    adamw_step(params, state, 1, 3e-4, cfg);  // no grad buffer
    CHECK(params.at("p.w").vec() == std::vector<float>{1.5f, -2.0f});
}

TEST_CASE("adamw decay without gradient is a pure shrink") {
    TrainConfig cfg;
    cfg.weight_decay = 0.5;
    ParamMap params;
    Tensor p({1}, {2.0f}, true);
    params.emplace("p.w", p);
    AdamState state;
    adamw_step(params, state, 1, 0.1, cfg);
    CHECK(params.at("p.w").vec()[0] == doctest::Approx(2.0f * (1.0 - 0.1 * 0.5)).epsilon(1e-6));
}

TEST_CASE("adamw descends a convex quadratic") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    ParamMap params;
    Tensor p({1}, {3.0f}, true);
    params.emplace("p.w", p);
    AdamState state;
    for (int t = 1; t <= 400; ++t) {
        const float x = params.at("p.w").vec()[0];
        params.at("p.w").grad() = {2.0f * x};  // d/dx x^2
        adamw_step(params, state, t, 0.05, cfg);
        params.at("p.w").zero_grad();
    }
    CHECK(std::abs(params.at("p.w").vec()[0]) < 0.05f);
}

TEST_CASE("psnr values") {
    Tensor a({4}, {0.0f, 0.0f, 0.0f, 0.0f});
    Tensor b({4}, {0.1f, 0.1f, 0.1f, 0.1f});
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));  // MSE 0.01, peak 1
    CHECK(std::isinf(psnr(a, a)));
    // shift both by the same constant: unchanged
    Tensor a2({4}, {0.3f, 0.3f, 0.3f, 0.3f});
    Tensor b2({4}, {0.4f, 0.4f, 0.4f, 0.4f});
    CHECK(psnr(a2, b2) == doctest::Approx(20.0).epsilon(1e-6));
    // doubling peak adds 20 log10 2
    CHECK(psnr(a, b, 2.0) == doctest::Approx(20.0 + 20.0 * std::log10(2.0)).epsilon(1e-6));
}

TEST_CASE("ppm round-trip and quantization") {
    const fs::path dir = temp_dir();
    const fs::path p6 = dir / "rt.ppm";

    Tensor img({1, 3, 2, 3});
    Rng rng(9);
    for (auto& v : img.vec()) v = rng.next_float();
    write_image(p6.string(), img);
    const Tensor back = read_image(p6.string());
    REQUIRE(back.shape() == img.shape());
    // round-trip error bounded by half a quantization step
    for (std::size_t i = 0; i < img.numel(); ++i)
        CHECK(std::abs(back.data()[i] - img.data()[i]) <= 0.5f / 255.0f + 1e-6f);
    // re-writing the quantized image is lossless
    const fs::path p6b = dir / "rt2.ppm";
    write_image(p6b.string(), back);
    CHECK(read_image(p6b.string()).vec() == back.vec());

    // 0.5 rounds up to 128
    Tensor gray = Tensor::full({1, 1, 1, 1}, 0.5f);
    const fs::path p5 = dir / "gray.pgm";
    write_image(p5.string(), gray);
    std::ifstream in(p5, std::ios::binary);
    std::string header;
    in >> header;
    CHECK(header == "P5");
    int w, h, maxv;
    in >> w >> h >> maxv;
    in.get();
    CHECK(w == 1);
    CHECK(maxv == 255);
    CHECK(in.get() == 128);

    // out-of-range values clamp instead of wrapping
    Tensor hot({1, 1, 1, 2}, {-0.5f, 1.5f});
    const fs::path clamp = dir / "clamp.pgm";
    write_image(clamp.string(), hot);
    const Tensor cb = read_image(clamp.string());
    CHECK(cb.vec() == std::vector<float>{0.0f, 1.0f});
}

TEST_CASE("image reader rejects malformed files with byte offsets") {
    const fs::path dir = temp_dir();
    const fs::path bad = dir / "bad.ppm";
    {
        std::ofstream out(bad, std::ios::binary);
        out << "P7\n1 1\n255\nx";
    }
    CHECK_THROWS_WITH_AS(read_image(bad.string()), doctest::Contains("byte"),
                         std::runtime_error);

    const fs::path trunc = dir / "trunc.ppm";
    {
        std::ofstream out(trunc, std::ios::binary);
        out << "P6\n4 4\n255\nab";  // 48 payload bytes promised, 2 given
    }
    CHECK_THROWS_WITH_AS(read_image(trunc.string()), doctest::Contains("byte"),
                         std::runtime_error);

    const fs::path maxv = dir / "maxv.ppm";
    {
        std::ofstream out(maxv, std::ios::binary);
        out << "P6\n1 1\n65535\n";
        for (int i = 0; i < 6; ++i) out.put('\0');
    }
    CHECK_THROWS_AS(read_image(maxv.string()), std::runtime_error);

    CHECK_THROWS_AS(read_image((dir / "missing.ppm").string()), std::runtime_error);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    const fs::path dir = temp_dir();
    const fs::path ckpt = dir / "model.ckpt";

    std::map<std::string, Tensor> tensors;
    Rng rng(4);
    Tensor w({2, 3, 3, 3});
    for (auto& v : w.vec()) v = rng.uniform(-5.0f, 5.0f);
    tensors.emplace("stem.w", w);
    tensors.emplace("stem.b", Tensor({2}, {1e-20f, -3.5f}));
    tensors.emplace("enc1.b0.ln0.gamma", Tensor::full({8}, 1.0f));

    save_checkpoint(ckpt.string(), tensors);
    const auto back = load_checkpoint(ckpt.string());
    REQUIRE(back.size() == tensors.size());
    for (const auto& [name, t] : tensors) {
        REQUIRE(back.count(name) == 1);
        CHECK(back.at(name).shape() == t.shape());
        CHECK(back.at(name).vec() == t.vec());
    }

    // header spot-check: magic and version 1
    std::ifstream in(ckpt, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "LAKD");
    unsigned char ver[2];
    in.read(reinterpret_cast<char*>(ver), 2);
    CHECK(ver[0] == 1);
    CHECK(ver[1] == 0);

    // corrupt magic is rejected
    const fs::path badck = dir / "bad.ckpt";
    {
        std::ofstream out(badck, std::ios::binary);
        out << "NOPE";
    }
    CHECK_THROWS_AS(load_checkpoint(badck.string()), std::runtime_error);
}

TEST_CASE("blur kernels are normalized and symmetric") {
    for (double r : {0.8, 1.5, 2.5}) {
        for (auto kind : {BlurSpec::Kind::Gaussian, BlurSpec::Kind::Disk}) {
            int size = 0;
            const std::vector<float> k = make_blur_kernel(kind, r, &size);
            REQUIRE(size % 2 == 1);
            REQUIRE(k.size() == static_cast<std::size_t>(size) * size);
            double sum = 0.0;
            for (float v : k) {
                CHECK(v >= 0.0f);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            for (int i = 0; i < size * size; ++i)
                CHECK(k[i] == doctest::Approx(k[size * size - 1 - i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("synthetic dataset blurs deterministically and conserves flat regions") {
    Rng rng(11);
    std::vector<Tensor> sharp;
    sharp.push_back(make_texture(3, 32, 32, rng));
    sharp.push_back(Tensor::full({1, 3, 32, 32}, 0.25f));

    BlurSpec spec;
    spec.rng_seed = 5;
    const auto a = synth_dataset(sharp, spec);
    const auto b = synth_dataset(sharp, spec);
    REQUIRE(a.size() == 2);
    CHECK(a[0].blurry.vec() == b[0].blurry.vec());
    CHECK(a[0].sharp.vec() == sharp[0].vec());

    // blurring a constant image with a normalized kernel returns the constant
    for (float v : a[1].blurry.vec()) CHECK(v == doctest::Approx(0.25f).epsilon(1e-5));

    // blur actually changes a textured image
    double diff = 0.0;
    for (std::size_t i = 0; i < sharp[0].numel(); ++i)
        diff = std::max(diff, std::abs(static_cast<double>(a[0].blurry.data()[i]) -
                                       sharp[0].data()[i]));
    CHECK(diff > 1e-4);

    // textures land in [0,1] and differ per call
    const Tensor t2 = make_texture(3, 32, 32, rng);
    CHECK(t2.vec() != sharp[0].vec());
    for (float v : t2.vec()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("train config JSON strictness") {
    TrainConfig cfg;
    cfg.total_iters = 10;
    cfg.patch_schedule = {{0, 16, 2}};
    cfg.rng_seed = 7;
    const TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.total_iters == 10);
    CHECK(back.patch_schedule.size() == 1);
    CHECK(back.patch_schedule[0].patch_size == 16);
    CHECK(back.rng_seed == 7);
    CHECK(back.lr_max == doctest::Approx(cfg.lr_max).epsilon(1e-15));

    CHECK_THROWS_WITH_AS(TrainConfig::from_json(R"({"lr_maxx":1})"),
                         doctest::Contains("lr_maxx"), std::invalid_argument);
    CHECK_THROWS_AS(TrainConfig::from_json(R"({"total_iters":0})"), std::invalid_argument);
    CHECK_THROWS_AS(TrainConfig::from_json(R"({"lr_max":-1})"), std::invalid_argument);
}

TEST_CASE("short training run is deterministic and reduces the loss") {
    NetworkConfig net;
    net.base_channels = 4;
    net.block_counts = {1, 1, 1, 1};
    net.mixer_kernel = 3;

    TrainConfig cfg;
    cfg.total_iters = 12;
    cfg.patch_schedule = {{0, 16, 1}};
    cfg.rng_seed = 3;

    Rng rng(13);
    std::vector<Tensor> sharp;
    for (int i = 0; i < 4; ++i) sharp.push_back(make_texture(3, 32, 32, rng));
    BlurSpec blur;
    blur.rng_seed = 14;
    const auto dataset = synth_dataset(sharp, blur);

    const TrainResult r1 = train(net, cfg, dataset);
    CHECK_FALSE(r1.aborted);
    CHECK(r1.completed_iters == 12);
    REQUIRE(r1.loss_trace.size() == 12);
    for (double l : r1.loss_trace) CHECK(std::isfinite(l));

    const TrainResult r2 = train(net, cfg, dataset);
    const fs::path dir = temp_dir();
    save_checkpoint((dir / "r1.ckpt").string(), r1.params);
    save_checkpoint((dir / "r2.ckpt").string(), r2.params);
    CHECK(checkpoint_bytes(dir / "r1.ckpt") == checkpoint_bytes(dir / "r2.ckpt"));

    // with a vanishing learning rate the parameters stay at their init
    TrainConfig frozen = cfg;
    frozen.lr_max = 1e-12;
    frozen.lr_min = 1e-12;
    frozen.total_iters = 2;
    const TrainResult rf = train(net, frozen, dataset);
    const ParamMap init = init_params(net, cfg.rng_seed);
    for (const auto& [name, t] : rf.params)
        for (std::size_t i = 0; i < t.numel(); ++i)
            CHECK(t.data()[i] == doctest::Approx(init.at(name).data()[i]).epsilon(1e-6));
}

TEST_CASE("tiled inference matches whole-image inference") {
    NetworkConfig net;
    net.base_channels = 4;
    net.block_counts = {1, 1, 1, 1};
    net.mixer_kernel = 3;
    ParamMap params = init_params(net, 21);

    Rng rng(22);
    Tensor img({1, 3, 48, 48});
    for (auto& v : img.vec()) v = rng.next_float();

    NoGradGuard guard;
    const Tensor whole = lakdnet_forward(img, params, net);
    // tile >= image: identical to the whole pass
    const Tensor one_tile = infer_tiled(img, params, net, 64, 16);
    CHECK(one_tile.vec() == whole.vec());

    // overlapping tiles keep the right shape, stay finite, and are
    // deterministic across runs
    const Tensor tiled = infer_tiled(img, params, net, 32, 8);
    REQUIRE(tiled.shape() == whole.shape());
    for (float v : tiled.vec()) CHECK(std::isfinite(v));
    const Tensor again = infer_tiled(img, params, net, 32, 8);
    CHECK(again.vec() == tiled.vec());

    // with a zeroed final projection the network is the identity, so the
    // overlap-averaged tiling must reproduce the input exactly
    std::fill(params.at("head.w").vec().begin(), params.at("head.w").vec().end(), 0.0f);
    std::fill(params.at("head.b").vec().begin(), params.at("head.b").vec().end(), 0.0f);
    const Tensor ident = infer_tiled(img, params, net, 32, 8);
    for (std::size_t i = 0; i < img.numel(); ++i)
        CHECK(ident.data()[i] == doctest::Approx(img.data()[i]).epsilon(1e-6));
}
