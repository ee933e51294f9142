#include <doctest.h>

#include "helpers.hpp"
#include "rgelan/init.hpp"
#include "rgelan/tensor.hpp"

using namespace rgelan;
using testing::conv_oracle;
using testing::max_diff;

TEST_CASE("tensor construction rejects empty dims") {
    CHECK_THROWS_AS(Tensor4(0, 1, 1, 1), DimensionError);
    CHECK_THROWS_AS(Tensor4(1, 1, -2, 1), DimensionError);
    Tensor4 t(2, 3, 4, 5, 1.5f);
    CHECK(t.size() == 120);
    CHECK(t.at(1, 2, 3, 4) == 1.5f);
}

TEST_CASE("conv_out_dim matches the window arithmetic and rejects oversize windows") {
    CHECK(conv_out_dim(5, 3, 1, 1) == 5);
    CHECK(conv_out_dim(5, 3, 2, 1) == 3);
    CHECK(conv_out_dim(5, 1, 1, 0) == 5);
    CHECK(conv_out_dim(2, 2, 1, 0) == 1);
    CHECK_THROWS_AS(conv_out_dim(2, 5, 1, 1), DimensionError);
}

TEST_CASE("conv2d equals an im2col oracle over random settings") {
    Rng rng(100);
    struct Case {
        int in_ch, out_ch, k, stride, pad, groups, h, w;
    };
    const Case cases[] = {
        {3, 4, 3, 1, 1, 1, 7, 9}, {4, 6, 1, 1, 0, 2, 5, 5},  {8, 8, 3, 2, 1, 4, 8, 8},
        {2, 2, 5, 1, 2, 1, 6, 6}, {6, 3, 3, 2, 0, 3, 10, 7}, {1, 5, 2, 2, 1, 1, 4, 4},
    };
    for (const Case& c : cases) {
        for (int rep = 0; rep < 3; ++rep) {
            const bool bias = rep % 2 == 0;
            ConvParams p = random_conv(c.in_ch, c.out_ch, c.k, c.stride, c.pad, c.groups, bias, rng);
            Tensor4 x(2, c.in_ch, c.h, c.w);
            fill_uniform(x.data, rng, 1.0f);
            Tensor4 got = conv2d(x, p);
            Tensor4 want = conv_oracle(x, p);
            CHECK(got.same_shape(want));
            CHECK(max_diff(got, want) <= 1e-6);
        }
    }
}

TEST_CASE("conv2d validates channel wiring") {
    Rng rng(4);
    ConvParams p = random_conv(4, 4, 3, 1, 1, 1, false, rng);
    Tensor4 x(1, 3, 5, 5);
    CHECK_THROWS_AS(conv2d(x, p), DimensionError);
    ConvParams odd = random_conv(4, 6, 1, 1, 0, 2, false, rng);
    odd.groups = 4; // 6 outputs not divisible by 4 groups
    CHECK_THROWS_AS(conv2d(Tensor4(1, 4, 5, 5), odd), DimensionError);
}

TEST_CASE("conv madds follow the counting convention exactly") {
    Rng rng(5);
    // out_elems * in_ch/groups * k*k, bias excluded.
    ConvParams p = random_conv(16, 32, 3, 1, 1, 1, true, rng);
    CHECK(conv_madds(p, 10, 10) == 32ull * 10 * 10 * 16 * 9);
    for (int g : {2, 4}) {
        ConvParams pg = random_conv(16, 32, 3, 1, 1, g, false, rng);
        CHECK(conv_madds(p, 10, 10) == conv_madds(pg, 10, 10) * g);
    }
}

TEST_CASE("batchnorm_infer matches the direct per-channel formula") {
    Rng rng(6);
    BnParams bn = random_bn(3, rng);
    Tensor4 x(2, 3, 4, 4);
    fill_uniform(x.data, rng, 2.0f);
    Tensor4 y = batchnorm_infer(x, bn);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j) {
                    const double denom = std::sqrt(static_cast<double>(bn.running_var[c]) + bn.eps);
                    const double want =
                        bn.gamma[c] * (x.at(n, c, i, j) - bn.running_mean[c]) / denom + bn.beta[c];
                    CHECK(y.at(n, c, i, j) == doctest::Approx(want).epsilon(1e-6));
                }
    // identity() keeps eps in the denominator, so it scales by 1/sqrt(1+eps):
    // off by about eps/2 relative, not bit-exact.
    BnParams id = BnParams::identity(3);
    CHECK(max_diff(batchnorm_infer(x, id), x) <= 2e-5);
}

TEST_CASE("activations compute the documented pointwise maps") {
    Tensor4 x(1, 1, 1, 4);
    x.data = {-2.0f, -0.5f, 0.0f, 3.0f};
    Tensor4 r = activation(x, Activation::Relu);
    CHECK(r.data[0] == 0.0f);
    CHECK(r.data[3] == 3.0f);
    Tensor4 s = activation(x, Activation::Sigmoid);
    CHECK(s.data[2] == doctest::Approx(0.5));
    CHECK(s.data[3] == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
    Tensor4 si = activation(x, Activation::Silu);
    for (int i = 0; i < 4; ++i)
        CHECK(si.data[i] ==
              doctest::Approx(x.data[i] / (1.0 + std::exp(-static_cast<double>(x.data[i])))));
    CHECK(max_diff(activation(x, Activation::None), x) == 0.0);
}

TEST_CASE("pool2d max and avg agree with per-window scans") {
    Tensor4 x(1, 1, 4, 4);
    for (int i = 0; i < 16; ++i)
        x.data[i] = static_cast<float>(i);
    Tensor4 mx = pool2d(x, PoolMode::Max, 2, 2, 0);
    CHECK(mx.h == 2);
    CHECK(mx.data[0] == 5.0f);
    CHECK(mx.data[3] == 15.0f);
    Tensor4 av = pool2d(x, PoolMode::Avg, 2, 2, 0);
    CHECK(av.data[0] == doctest::Approx((0 + 1 + 4 + 5) / 4.0));

    SUBCASE("avg divisor excludes padding cells") {
        Tensor4 one(1, 1, 2, 2, 1.0f);
        Tensor4 y = pool2d(one, PoolMode::Avg, 3, 1, 1);
        // every window holds only ones, so every average is exactly 1
        for (float v : y.data)
            CHECK(v == 1.0f);
    }

    SUBCASE("k=5 s=1 p=2 preserves spatial dims") {
        Tensor4 big(1, 2, 7, 9);
        Rng rng(8);
        fill_uniform(big.data, rng, 1.0f);
        Tensor4 y = pool2d(big, PoolMode::Max, 5, 1, 2);
        CHECK(y.same_shape(big));
    }

    CHECK_THROWS_AS(pool2d(x, PoolMode::Max, 3, 1, 2), DimensionError); // 2*pad > k
    CHECK_THROWS_AS(pool2d(x, PoolMode::Max, 0, 1, 0), DimensionError);
}

TEST_CASE("upsample_nearest replicates each cell") {
    Tensor4 x(1, 1, 2, 2);
    x.data = {1, 2, 3, 4};
    Tensor4 y = upsample_nearest(x, 2);
    CHECK(y.h == 4);
    CHECK(y.at(0, 0, 0, 0) == 1.0f);
    CHECK(y.at(0, 0, 0, 1) == 1.0f);
    CHECK(y.at(0, 0, 1, 1) == 1.0f);
    CHECK(y.at(0, 0, 3, 3) == 4.0f);
    CHECK(max_diff(upsample_nearest(x, 1), x) == 0.0);
}

TEST_CASE("concat and split are channel-order inverses") {
    Rng rng(9);
    Tensor4 a(2, 3, 4, 4), b(2, 5, 4, 4);
    fill_uniform(a.data, rng, 1.0f);
    fill_uniform(b.data, rng, 1.0f);
    Tensor4 cat = concat_channels(a, b);
    CHECK(cat.c == 8);
    const int sizes[2] = {3, 5};
    std::vector<Tensor4> parts = split_channels(cat, sizes);
    CHECK(max_diff(parts[0], a) == 0.0);
    CHECK(max_diff(parts[1], b) == 0.0);

    CHECK_THROWS_AS(concat_channels(a, Tensor4(2, 1, 5, 4)), DimensionError);
    const int bad[2] = {3, 4};
    CHECK_THROWS_AS(split_channels(cat, bad), DimensionError);
}

TEST_CASE("softmax groups sum to one and order preserves mass") {
    std::vector<float> in = {0.0f, 1.0f, 2.0f, 5.0f, 5.0f, 5.0f};
    std::vector<float> out = softmax_last(in, 3);
    CHECK(out[0] + out[1] + out[2] == doctest::Approx(1.0));
    CHECK(out[3] == doctest::Approx(1.0 / 3.0));
    CHECK(out[2] > out[1]);
    CHECK_THROWS_AS(softmax_last(std::span<const float>(in.data(), 5), 3), DimensionError);
}
