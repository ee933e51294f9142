#ifndef RGELAN_TENSOR_HPP
#define RGELAN_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rgelan/errors.hpp"

namespace rgelan {

// Dense rank-4 array in NCHW layout, row-major, 32-bit floats.
// Window accumulations (conv, pooling) run in 64-bit and round at store.
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_, float fill = 0.0f);

    std::size_t size() const { return data.size(); }
    bool same_spatial(const Tensor4& o) const { return n == o.n && h == o.h && w == o.w; }
    bool same_shape(const Tensor4& o) const { return same_spatial(o) && c == o.c; }

    std::size_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
    }
    float& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
    float at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

    // Pointer to the start of one (batch, channel) plane.
    float* plane(int in, int ic) { return data.data() + index(in, ic, 0, 0); }
    const float* plane(int in, int ic) const { return data.data() + index(in, ic, 0, 0); }
};

// Convolution kernel plus hyperparameters. Weight layout is
// (out_ch, in_ch / groups, kh, kw); an empty bias vector means no bias.
struct ConvParams {
    Tensor4 weight;
    std::vector<float> bias;
    int stride = 1;
    int padding = 0;
    int groups = 1;

    int out_ch() const { return weight.n; }
    int in_ch() const { return weight.c * groups; }
    int kh() const { return weight.h; }
    int kw() const { return weight.w; }
    bool has_bias() const { return !bias.empty(); }

    void validate() const;
};

// Inference-time batchnorm statistics, one entry per channel.
struct BnParams {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> running_mean;
    std::vector<float> running_var;
    float eps = 1e-5f;

    int channels() const { return static_cast<int>(gamma.size()); }
    void validate() const;

    static BnParams identity(int channels, float eps = 1e-5f);
};

enum class Activation { None, Relu, Silu, Sigmoid };
enum class PoolMode { Max, Avg };

int conv_out_dim(int in, int k, int stride, int pad);

Tensor4 conv2d(const Tensor4& x, const ConvParams& p);
Tensor4 batchnorm_infer(const Tensor4& x, const BnParams& b);
Tensor4 activation(const Tensor4& x, Activation kind);

// Avg mode divides by the number of non-padding cells in each window.
Tensor4 pool2d(const Tensor4& x, PoolMode mode, int k, int stride, int pad);

Tensor4 upsample_nearest(const Tensor4& x, int factor);

Tensor4 concat_channels(std::span<const Tensor4> xs);
Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);
std::vector<Tensor4> split_channels(const Tensor4& x, std::span<const int> sizes);

// Softmax over consecutive groups of group_len values; in.size() must be a
// multiple of group_len. Each group sums to 1.
std::vector<float> softmax_last(std::span<const float> in, int group_len);

// Multiply-add count of one convolution at the given output resolution.
// Convention: out_elems * (in_ch / groups) * kh * kw, bias not counted.
std::uint64_t conv_madds(const ConvParams& p, int out_h, int out_w);

} // namespace rgelan

#endif
