#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "lakd/layers.hpp"
#include "lakd/rng.hpp"
#include "oracle.hpp"

using namespace lakd;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, float lo = -2.0f, float hi = 2.0f,
                     bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("conv2d all-ones 3x3 counts kernel overlap") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor b = Tensor::zeros({1});
    const Tensor y = conv2d(x, ConvSpec{1, 1, 3}, w, b);
    CHECK(y.data()[4] == doctest::Approx(9.0f));  // center
    CHECK(y.data()[0] == doctest::Approx(4.0f));  // corner
    CHECK(y.data()[2] == doctest::Approx(4.0f));
    CHECK(y.data()[1] == doctest::Approx(6.0f));  // edge
}

TEST_CASE("conv2d delta kernel is the identity") {
    Rng rng(5);
    Tensor x = random_tensor({2, 3, 5, 7}, rng);
    Tensor w = Tensor::zeros({3, 3, 3, 3});
    for (int oc = 0; oc < 3; ++oc) w.data()[((oc * 3 + oc) * 3 + 1) * 3 + 1] = 1.0f;
    Tensor b = Tensor::zeros({3});
    const Tensor y = conv2d(x, ConvSpec{3, 3, 3}, w, b);
    CHECK(y.vec() == x.vec());
}

TEST_CASE("depth-wise conv scales channels independently") {
    Tensor x = Tensor::full({1, 2, 4, 4}, 1.0f);
    Tensor w = Tensor::zeros({2, 1, 1, 1});
    w.data()[0] = 1.0f;
    w.data()[1] = 2.0f;
    Tensor b = Tensor::zeros({2});
    const Tensor y = conv2d(x, ConvSpec{2, 2, 1, 2}, w, b);
    for (int i = 0; i < 16; ++i) {
        CHECK(y.data()[i] == doctest::Approx(1.0f));
        CHECK(y.data()[16 + i] == doctest::Approx(2.0f));
    }
}

TEST_CASE("conv2d matches the naive oracle across kernel/groups/dilation") {
    Rng rng(17);
    const int B = 1, C = 4, H = 16, W = 16;
    for (int k : {1, 3, 5, 7, 9, 11})
        for (int groups : {1, C})
            for (int dilation : {1, 2, 3}) {
                Tensor x = random_tensor({B, C, H, W}, rng);
                Tensor w = random_tensor({C, C / groups, k, k}, rng, -0.5f, 0.5f);
                Tensor b = random_tensor({C}, rng, -0.5f, 0.5f);
                const Tensor y = conv2d(x, ConvSpec{C, C, k, groups, dilation}, w, b);
                const auto ref = oracle::conv2d_naive(x.vec(), B, C, H, W, w.vec(), C, k,
                                                      groups, dilation, b.vec());
                double max_diff = 0.0;
                for (std::size_t i = 0; i < ref.size(); ++i)
                    max_diff = std::max(max_diff,
                                        std::abs(static_cast<double>(y.data()[i]) - ref[i]));
                INFO("k=", k, " groups=", groups, " dilation=", dilation);
                CHECK(max_diff <= 1e-4);
            }
}

TEST_CASE("conv2d rejects bad specs") {
    Tensor x = Tensor::zeros({1, 4, 8, 8});
    Tensor w = Tensor::zeros({4, 4, 3, 3});
    Tensor b = Tensor::zeros({4});
    CHECK_THROWS_AS(conv2d(x, ConvSpec{4, 4, 2}, w, b), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, ConvSpec{4, 6, 3, 4}, w, b), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, ConvSpec{3, 4, 3}, w, b), std::invalid_argument);
}

TEST_CASE("conv2d gradients pass grad_check") {
    Rng rng(23);
    const int C = 3, H = 6, W = 6, k = 3;
    Tensor x = random_tensor({1, C, H, W}, rng);
    Tensor w = random_tensor({C, C, k, k}, rng, -0.5f, 0.5f);
    Tensor b = random_tensor({C}, rng, -0.5f, 0.5f);

    const ConvSpec spec{C, C, k};
    auto wrt_input = [&](const Tensor& t) { return mean(conv2d(t, spec, w, b)); };
    auto wrt_weight = [&](const Tensor& t) { return mean(conv2d(x, spec, t, b)); };
    auto wrt_bias = [&](const Tensor& t) { return mean(conv2d(x, spec, w, t)); };
    CHECK(grad_check(wrt_input, x, 1e-3) < 1e-3);
    CHECK(grad_check(wrt_weight, w, 1e-3) < 1e-3);
    CHECK(grad_check(wrt_bias, b, 1e-3) < 1e-3);

    // grouped + dilated path
    Tensor wd = random_tensor({C, 1, k, k}, rng, -0.5f, 0.5f);
    const ConvSpec dspec{C, C, k, C, 2};
    auto dw_input = [&](const Tensor& t) { return mean(conv2d(t, dspec, wd, b)); };
    auto dw_weight = [&](const Tensor& t) { return mean(conv2d(x, dspec, t, b)); };
    CHECK(grad_check(dw_input, x, 1e-3) < 1e-3);
    CHECK(grad_check(dw_weight, wd, 1e-3) < 1e-3);
}

TEST_CASE("layer_norm examples") {
    // channel-constant input -> zeros
    Tensor x = Tensor::full({1, 4, 2, 2}, 3.7f);
    Tensor gamma = Tensor::full({4}, 1.0f);
    Tensor beta = Tensor::zeros({4});
    const Tensor y = layer_norm(x, gamma, beta);
    for (float v : y.vec()) CHECK(v == doctest::Approx(0.0f).epsilon(1e-5));

    // channels [1,3] at one pixel -> [-1,1]
    Tensor x2({1, 2, 1, 1}, {1.0f, 3.0f});
    Tensor g2 = Tensor::full({2}, 1.0f);
    Tensor b2 = Tensor::zeros({2});
    const Tensor y2 = layer_norm(x2, g2, b2, 1e-12f);
    CHECK(y2.data()[0] == doctest::Approx(-1.0f));
    CHECK(y2.data()[1] == doctest::Approx(1.0f));

    // gamma = 0 -> output == beta
    Tensor g3 = Tensor::zeros({2});
    Tensor b3({2}, {0.25f, -0.5f});
    const Tensor y3 = layer_norm(x2, g3, b3);
    CHECK(y3.data()[0] == doctest::Approx(0.25f));
    CHECK(y3.data()[1] == doctest::Approx(-0.5f));

    CHECK_THROWS_AS(layer_norm(x, g2, b2), std::invalid_argument);
}

TEST_CASE("layer_norm standardizes channels") {
    Rng rng(31);
    Tensor x = random_tensor({2, 8, 4, 4}, rng, -3.0f, 3.0f);
    Tensor gamma = Tensor::full({8}, 1.0f);
    Tensor beta = Tensor::zeros({8});
    const Tensor y = layer_norm(x, gamma, beta);
    for (int b = 0; b < 2; ++b)
        for (int p = 0; p < 16; ++p) {
            double m = 0.0, v = 0.0;
            for (int c = 0; c < 8; ++c) m += y.data()[(b * 8 + c) * 16 + p];
            m /= 8;
            for (int c = 0; c < 8; ++c) {
                const double d = y.data()[(b * 8 + c) * 16 + p] - m;
                v += d * d;
            }
            v /= 8;
            CHECK(std::abs(m) < 1e-5);
            CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
        }
}

TEST_CASE("layer_norm gradients pass grad_check") {
    Rng rng(37);
    Tensor x = random_tensor({1, 4, 3, 3}, rng);
    Tensor gamma = random_tensor({4}, rng, 0.5f, 1.5f);
    Tensor beta = random_tensor({4}, rng, -0.5f, 0.5f);
    auto wrt_x = [&](const Tensor& t) { return mean(layer_norm(t, gamma, beta)); };
    auto wrt_g = [&](const Tensor& t) { return mean(layer_norm(x, t, beta)); };
    auto wrt_b = [&](const Tensor& t) { return mean(layer_norm(x, gamma, t)); };
    CHECK(grad_check(wrt_x, x, 1e-3) < 1e-3);
    CHECK(grad_check(wrt_g, gamma, 1e-3) < 1e-3);
    CHECK(grad_check(wrt_b, beta, 1e-3) < 1e-3);
}

TEST_CASE("gelu values") {
    Tensor x({3}, {0.0f, 1.0f, -10.0f});
    const Tensor y = gelu(x);
    CHECK(y.data()[0] == doctest::Approx(0.0f));
    // 1 * Phi(1), Phi via the erf series oracle
    const double phi1 = 0.5 * (1.0 + oracle::erf_series(1.0 / std::sqrt(2.0)));
    CHECK(y.data()[1] == doctest::Approx(phi1).epsilon(1e-6));
    CHECK(y.data()[1] == doctest::Approx(0.841345f).epsilon(1e-5));
    CHECK(std::abs(y.data()[2]) < 1e-20);
}

TEST_CASE("pixel unshuffle ordering and inverse") {
    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor y = pixel_unshuffle(x, 2);
    CHECK(y.shape() == Shape{1, 4, 1, 1});
    CHECK(y.vec() == std::vector<float>{1, 2, 3, 4});

    Rng rng(41);
    Tensor z = random_tensor({1, 3, 4, 4}, rng);
    const Tensor rt = pixel_shuffle(pixel_unshuffle(z, 2), 2);
    CHECK(rt.vec() == z.vec());  // bit-exact

    // multiset preservation
    auto a = z.vec();
    auto b = pixel_unshuffle(z, 2).vec();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);

    CHECK_THROWS_AS(pixel_unshuffle(random_tensor({1, 1, 3, 4}, rng), 2),
                    std::invalid_argument);
    CHECK_THROWS_AS(pixel_shuffle(random_tensor({1, 3, 2, 2}, rng), 2),
                    std::invalid_argument);
}

TEST_CASE("pixel unshuffle gradient is the inverse permutation") {
    Rng rng(43);
    Tensor x = random_tensor({1, 2, 4, 4}, rng, -1.0f, 1.0f, true);
    Tensor y = pixel_unshuffle(x, 2);
    backward(max_reduce(y), 1.0f);
    // exactly one grad entry is 1, at the preimage of the max output element
    int ones = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (x.grad()[i] == 1.0f) {
            ++ones;
            CHECK(x.data()[i] == max_reduce(y).item());
        } else {
            CHECK(x.grad()[i] == 0.0f);
        }
    }
    CHECK(ones == 1);

    auto through = [&](const Tensor& t) { return mean(pixel_shuffle(pixel_unshuffle(t, 2), 2)); };
    CHECK(grad_check(through, x, 1e-2) < 1e-6);
}

TEST_CASE("concat and slice channels") {
    Rng rng(47);
    Tensor a = random_tensor({1, 2, 3, 3}, rng, -1.0f, 1.0f, true);
    Tensor b = random_tensor({1, 3, 3, 3}, rng, -1.0f, 1.0f, true);
    Tensor cat = concat_channels(a, b);
    CHECK(cat.shape() == Shape{1, 5, 3, 3});
    const Tensor sl = slice_channels(cat, 2, 5);
    CHECK(sl.vec() == b.vec());

    auto wrt_a = [&](const Tensor& t) { return mean(mul(concat_channels(t, b), 2.0f)); };
    CHECK(grad_check(wrt_a, a, 1e-2) < 1e-6);
    auto wrt_slice = [&](const Tensor& t) { return mean(slice_channels(t, 1, 4)); };
    CHECK(grad_check(wrt_slice, cat, 1e-2) < 1e-6);
}
