#include "rgelan/init.hpp"

#include <cmath>

namespace rgelan {

float uniform(Rng& rng, float lo, float hi) {
    std::uniform_real_distribution<float> d(lo, hi);
    return d(rng);
}

void fill_uniform(std::span<float> dst, Rng& rng, float bound) {
    std::uniform_real_distribution<float> d(-bound, bound);
    for (float& v : dst)
        v = d(rng);
}

ConvParams random_conv(int in_ch, int out_ch, int k, int stride, int pad, int groups, bool bias,
                       Rng& rng) {
    ConvParams p;
    p.weight = Tensor4(out_ch, in_ch / groups, k, k);
    p.stride = stride;
    p.padding = pad;
    p.groups = groups;
    const float fan_in = static_cast<float>(in_ch / groups) * k * k;
    fill_uniform(p.weight.data, rng, std::sqrt(6.0f / fan_in));
    if (bias) {
        p.bias.resize(out_ch);
        fill_uniform(p.bias, rng, 1.0f / std::sqrt(fan_in));
    }
    p.validate();
    return p;
}

BnParams random_bn(int channels, Rng& rng) {
    BnParams b;
    b.gamma.resize(channels);
    b.beta.resize(channels);
    b.running_mean.resize(channels);
    b.running_var.resize(channels);
    for (int i = 0; i < channels; ++i) {
        b.gamma[i] = uniform(rng, 0.5f, 1.5f);
        b.beta[i] = uniform(rng, -0.5f, 0.5f);
        b.running_mean[i] = uniform(rng, -1.0f, 1.0f);
        b.running_var[i] = uniform(rng, 0.5f, 2.0f);
    }
    b.eps = 1e-5f;
    return b;
}

} // namespace rgelan
