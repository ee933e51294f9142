#include "rgelan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace rgelan {

static std::string shape_str(const Tensor4& t) {
    return std::to_string(t.n) + "x" + std::to_string(t.c) + "x" + std::to_string(t.h) + "x" +
           std::to_string(t.w);
}

Tensor4::Tensor4(int n_, int c_, int h_, int w_, float fill) : n(n_), c(c_), h(h_), w(w_) {
    if (n < 1 || c < 1 || h < 1 || w < 1)
        throw DimensionError("tensor dims must be >= 1, got " + shape_str(*this));
    data.assign(static_cast<std::size_t>(n) * c * h * w, fill);
}

void ConvParams::validate() const {
    if (groups < 1)
        throw DimensionError("conv groups must be >= 1");
    if (weight.n < 1 || weight.c < 1 || weight.h < 1 || weight.w < 1)
        throw DimensionError("conv weight has empty dims");
    if (weight.n % groups != 0)
        throw DimensionError("conv out_ch " + std::to_string(weight.n) +
                             " not divisible by groups " + std::to_string(groups));
    if (!bias.empty() && static_cast<int>(bias.size()) != weight.n)
        throw DimensionError("conv bias length " + std::to_string(bias.size()) +
                             " != out_ch " + std::to_string(weight.n));
    if (stride < 1)
        throw DimensionError("conv stride must be >= 1");
    if (padding < 0)
        throw DimensionError("conv padding must be >= 0");
}

void BnParams::validate() const {
    const std::size_t c = gamma.size();
    if (c == 0 || beta.size() != c || running_mean.size() != c || running_var.size() != c)
        throw DimensionError("batchnorm vectors must share one nonzero length");
    if (!(eps > 0.0f))
        throw DimensionError("batchnorm eps must be > 0");
    for (float v : running_var)
        if (v < 0.0f)
            throw DimensionError("batchnorm running_var must be >= 0");
}

BnParams BnParams::identity(int channels, float eps) {
    BnParams b;
    b.gamma.assign(channels, 1.0f);
    b.beta.assign(channels, 0.0f);
    b.running_mean.assign(channels, 0.0f);
    b.running_var.assign(channels, 1.0f);
    b.eps = eps;
    return b;
}

int conv_out_dim(int in, int k, int stride, int pad) {
    const int span = in + 2 * pad - k;
    if (span < 0)
        throw DimensionError("window " + std::to_string(k) + " larger than padded input " +
                             std::to_string(in + 2 * pad));
    return span / stride + 1;
}

Tensor4 conv2d(const Tensor4& x, const ConvParams& p) {
    p.validate();
    if (x.c != p.in_ch())
        throw DimensionError("conv2d: input channels " + std::to_string(x.c) +
                             " != kernel in_ch " + std::to_string(p.in_ch()) + " (groups " +
                             std::to_string(p.groups) + ")");
    if (x.c % p.groups != 0)
        throw DimensionError("conv2d: input channels not divisible by groups");

    const int oh = conv_out_dim(x.h, p.kh(), p.stride, p.padding);
    const int ow = conv_out_dim(x.w, p.kw(), p.stride, p.padding);
    const int cg_in = x.c / p.groups;       // input channels per group
    const int cg_out = p.out_ch() / p.groups;

    Tensor4 y(x.n, p.out_ch(), oh, ow);
    for (int in = 0; in < x.n; ++in) {
        for (int oc = 0; oc < p.out_ch(); ++oc) {
            const int g = oc / cg_out;
            const double b = p.has_bias() ? static_cast<double>(p.bias[oc]) : 0.0;
            float* dst = y.plane(in, oc);
            for (int oy = 0; oy < oh; ++oy) {
                const int iy0 = oy * p.stride - p.padding;
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix0 = ox * p.stride - p.padding;
                    double acc = b;
                    for (int ic = 0; ic < cg_in; ++ic) {
                        const float* src = x.plane(in, g * cg_in + ic);
                        const float* ker = p.weight.plane(oc, ic);
                        for (int ky = 0; ky < p.kh(); ++ky) {
                            const int iy = iy0 + ky;
                            if (iy < 0 || iy >= x.h)
                                continue;
                            const float* row = src + static_cast<std::size_t>(iy) * x.w;
                            const float* krow = ker + static_cast<std::size_t>(ky) * p.kw();
                            for (int kx = 0; kx < p.kw(); ++kx) {
                                const int ix = ix0 + kx;
                                if (ix < 0 || ix >= x.w)
                                    continue;
                                acc += static_cast<double>(row[ix]) * krow[kx];
                            }
                        }
                    }
                    dst[static_cast<std::size_t>(oy) * ow + ox] = static_cast<float>(acc);
                }
            }
        }
    }
    return y;
}

Tensor4 batchnorm_infer(const Tensor4& x, const BnParams& b) {
    b.validate();
    if (b.channels() != x.c)
        throw DimensionError("batchnorm: channel count " + std::to_string(b.channels()) +
                             " != input channels " + std::to_string(x.c));

    Tensor4 y(x.n, x.c, x.h, x.w);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int in = 0; in < x.n; ++in) {
        for (int ic = 0; ic < x.c; ++ic) {
            const double scale = b.gamma[ic] / std::sqrt(static_cast<double>(b.running_var[ic]) + b.eps);
            const double shift = b.beta[ic] - scale * b.running_mean[ic];
            const float* src = x.plane(in, ic);
            float* dst = y.plane(in, ic);
            for (std::size_t i = 0; i < plane; ++i)
                dst[i] = static_cast<float>(scale * src[i] + shift);
        }
    }
    return y;
}

Tensor4 activation(const Tensor4& x, Activation kind) {
    Tensor4 y = x;
    switch (kind) {
    case Activation::None:
        break;
    case Activation::Relu:
        for (float& v : y.data)
            v = v > 0.0f ? v : 0.0f;
        break;
    case Activation::Sigmoid:
        for (float& v : y.data)
            v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
        break;
    case Activation::Silu:
        for (float& v : y.data)
            v = static_cast<float>(v / (1.0 + std::exp(-static_cast<double>(v))));
        break;
    }
    return y;
}

Tensor4 pool2d(const Tensor4& x, PoolMode mode, int k, int stride, int pad) {
    if (k < 1)
        throw DimensionError("pool window must be >= 1");
    if (stride < 1)
        throw DimensionError("pool stride must be >= 1");
    if (pad < 0 || 2 * pad > k)
        throw DimensionError("pool padding must satisfy 0 <= 2*pad <= k");

    const int oh = conv_out_dim(x.h, k, stride, pad);
    const int ow = conv_out_dim(x.w, k, stride, pad);

    Tensor4 y(x.n, x.c, oh, ow);
    for (int in = 0; in < x.n; ++in) {
        for (int ic = 0; ic < x.c; ++ic) {
            const float* src = x.plane(in, ic);
            float* dst = y.plane(in, ic);
            for (int oy = 0; oy < oh; ++oy) {
                const int y0 = std::max(0, oy * stride - pad);
                const int y1 = std::min(x.h, oy * stride - pad + k);
                for (int ox = 0; ox < ow; ++ox) {
                    const int x0 = std::max(0, ox * stride - pad);
                    const int x1 = std::min(x.w, ox * stride - pad + k);
                    float out;
                    if (mode == PoolMode::Max) {
                        float m = -std::numeric_limits<float>::infinity();
                        for (int iy = y0; iy < y1; ++iy)
                            for (int ix = x0; ix < x1; ++ix)
                                m = std::max(m, src[static_cast<std::size_t>(iy) * x.w + ix]);
                        out = m;
                    } else {
                        double acc = 0.0;
                        for (int iy = y0; iy < y1; ++iy)
                            for (int ix = x0; ix < x1; ++ix)
                                acc += src[static_cast<std::size_t>(iy) * x.w + ix];
                        // padding cells excluded from the divisor
                        out = static_cast<float>(acc / ((y1 - y0) * (x1 - x0)));
                    }
                    dst[static_cast<std::size_t>(oy) * ow + ox] = out;
                }
            }
        }
    }
    return y;
}

Tensor4 upsample_nearest(const Tensor4& x, int factor) {
    if (factor < 1)
        throw DimensionError("upsample factor must be >= 1");
    if (factor == 1)
        return x;

    Tensor4 y(x.n, x.c, x.h * factor, x.w * factor);
    for (int in = 0; in < x.n; ++in) {
        for (int ic = 0; ic < x.c; ++ic) {
            const float* src = x.plane(in, ic);
            float* dst = y.plane(in, ic);
            for (int oy = 0; oy < y.h; ++oy) {
                const float* row = src + static_cast<std::size_t>(oy / factor) * x.w;
                for (int ox = 0; ox < y.w; ++ox)
                    dst[static_cast<std::size_t>(oy) * y.w + ox] = row[ox / factor];
            }
        }
    }
    return y;
}

Tensor4 concat_channels(std::span<const Tensor4> xs) {
    if (xs.empty())
        throw DimensionError("concat_channels: empty input list");
    int total_c = 0;
    for (const Tensor4& t : xs) {
        if (!t.same_spatial(xs[0]))
            throw DimensionError("concat_channels: spatial mismatch " + shape_str(t) + " vs " +
                                 shape_str(xs[0]));
        total_c += t.c;
    }

    Tensor4 y(xs[0].n, total_c, xs[0].h, xs[0].w);
    const std::size_t plane = static_cast<std::size_t>(y.h) * y.w;
    for (int in = 0; in < y.n; ++in) {
        int oc = 0;
        for (const Tensor4& t : xs)
            for (int ic = 0; ic < t.c; ++ic, ++oc)
                std::copy_n(t.plane(in, ic), plane, y.plane(in, oc));
    }
    return y;
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
    const Tensor4 xs[2] = {a, b};
    return concat_channels(std::span<const Tensor4>(xs, 2));
}

std::vector<Tensor4> split_channels(const Tensor4& x, std::span<const int> sizes) {
    int sum = 0;
    for (int s : sizes) {
        if (s < 1)
            throw DimensionError("split_channels: sizes must be >= 1");
        sum += s;
    }
    if (sum != x.c)
        throw DimensionError("split_channels: sizes sum " + std::to_string(sum) +
                             " != channel count " + std::to_string(x.c));

    std::vector<Tensor4> out;
    out.reserve(sizes.size());
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    int start = 0;
    for (int s : sizes) {
        Tensor4 part(x.n, s, x.h, x.w);
        for (int in = 0; in < x.n; ++in)
            for (int ic = 0; ic < s; ++ic)
                std::copy_n(x.plane(in, start + ic), plane, part.plane(in, ic));
        out.push_back(std::move(part));
        start += s;
    }
    return out;
}

std::vector<float> softmax_last(std::span<const float> in, int group_len) {
    if (group_len < 1)
        throw DimensionError("softmax group length must be >= 1");
    if (in.size() % static_cast<std::size_t>(group_len) != 0)
        throw DimensionError("softmax: input length not a multiple of group length");

    std::vector<float> out(in.size());
    for (std::size_t g = 0; g < in.size(); g += group_len) {
        float m = in[g];
        for (int i = 1; i < group_len; ++i)
            m = std::max(m, in[g + i]);
        double sum = 0.0;
        for (int i = 0; i < group_len; ++i) {
            const double e = std::exp(static_cast<double>(in[g + i]) - m);
            out[g + i] = static_cast<float>(e);
            sum += e;
        }
        for (int i = 0; i < group_len; ++i)
            out[g + i] = static_cast<float>(out[g + i] / sum);
    }
    return out;
}

std::uint64_t conv_madds(const ConvParams& p, int out_h, int out_w) {
    return static_cast<std::uint64_t>(p.out_ch()) * out_h * out_w * p.weight.c * p.kh() * p.kw();
}

} // namespace rgelan
