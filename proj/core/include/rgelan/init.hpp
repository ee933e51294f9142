#ifndef RGELAN_INIT_HPP
#define RGELAN_INIT_HPP

#include <random>
#include <span>

#include "rgelan/tensor.hpp"

namespace rgelan {

// All weight material is drawn from a caller-owned mt19937 so that a config
// plus a seed always reproduces the same network.
using Rng = std::mt19937;

float uniform(Rng& rng, float lo, float hi);
void fill_uniform(std::span<float> dst, Rng& rng, float bound);

// Kernel values ~ U(-b, b) with b = sqrt(6 / fan_in).
ConvParams random_conv(int in_ch, int out_ch, int k, int stride, int pad, int groups, bool bias,
                       Rng& rng);

BnParams random_bn(int channels, Rng& rng);

} // namespace rgelan

#endif
