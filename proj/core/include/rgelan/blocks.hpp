#ifndef RGELAN_BLOCKS_HPP
#define RGELAN_BLOCKS_HPP

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "rgelan/reparam.hpp"
#include "rgelan/tensor.hpp"

namespace rgelan {

// Single-image feature map shape, batch dim implied.
struct Shape {
    int c = 0, h = 0, w = 0;
    bool operator==(const Shape&) const = default;
};

// Raw operation tallies; turned into FLOPs by the documented convention
// (2 per multiply-add, 2 per BN element, 1 per activation element or
// elementwise add, window size per pooled element).
struct OpCount {
    std::uint64_t madds = 0;
    std::uint64_t bn_elems = 0;
    std::uint64_t act_elems = 0;
    std::uint64_t pool_ops = 0;
    std::uint64_t ew_adds = 0;

    OpCount& operator+=(const OpCount& o);
    double flops() const;
};

// Conv -> BN -> activation. Graph fusion folds the BN away, leaving a
// biased conv.
struct ConvUnit {
    ConvParams conv;
    std::optional<BnParams> bn;
    Activation act = Activation::Silu;

    int in_ch() const { return conv.in_ch(); }
    int out_ch() const { return conv.out_ch(); }

    Tensor4 forward(const Tensor4& x) const;
    ConvUnit fused() const;
    Shape count_ops(const Shape& in, OpCount& acc) const;
    Shape out_shape(const Shape& in) const;
    std::uint64_t param_count() const;
};

// One CSP bottleneck: RepVGG (optionally RCS-wrapped) stage, a 3x3 conv
// stage and a residual add when the widths line up.
struct RepNcspBottleneck {
    std::variant<RepVGGBlock, RcsBlock> stage1;
    ConvUnit stage2;
    bool shortcut = true;

    Tensor4 forward(const Tensor4& x) const;
    RepNcspBottleneck fused() const;
    Shape count_ops(const Shape& in, OpCount& acc) const;
    std::uint64_t param_count() const;
};

// Cross-stage partial block: a bottleneck chain and a shortcut projection,
// concatenated and exit-convolved.
struct RepNcspBlock {
    ConvUnit entry_main;  // 1x1 onto the processed path
    ConvUnit entry_short; // 1x1 onto the shortcut path
    ConvUnit exit;        // 1x1 over the 2-way concat
    std::vector<RepNcspBottleneck> bottlenecks;

    Tensor4 forward(const Tensor4& x) const;
    RepNcspBlock fused() const;
    Shape count_ops(const Shape& in, OpCount& acc) const;
    Shape out_shape(const Shape& in) const;
    std::uint64_t param_count() const;
};

// ELAN aggregation: entry conv, split in two, two sequential RepNCSP+conv
// stages appended to the part list, 4-way concat, exit conv.
struct RepNcspElan4 {
    ConvUnit entry; // 1x1: c1 -> c3 (c3 even)
    RepNcspBlock ncsp1;
    ConvUnit conv1; // 3x3 after stage 1
    RepNcspBlock ncsp2;
    ConvUnit conv2; // 3x3 after stage 2
    ConvUnit exit;  // 1x1: c3 + 2*c4 -> c2

    Tensor4 forward(const Tensor4& x) const;
    RepNcspElan4 fused() const;
    Shape count_ops(const Shape& in, OpCount& acc) const;
    Shape out_shape(const Shape& in) const;
    std::uint64_t param_count() const;
};

// Asymmetric downsampling: avg-pooled half through a strided 3x3, max-pooled
// half through a 1x1, concatenated. Halves spatial dims exactly.
struct ADownBlock {
    ConvUnit conv_a; // 3x3 stride 2 pad 1
    ConvUnit conv_b; // 1x1

    Tensor4 forward(const Tensor4& x) const;
    ADownBlock fused() const;
    Shape count_ops(const Shape& in, OpCount& acc) const;
    Shape out_shape(const Shape& in) const;
    std::uint64_t param_count() const;
};

// Spatial pyramid pooling: three chained max pools (k, stride 1, pad k/2)
// over the entry conv output, 4-way concat, exit conv.
struct SppElanBlock {
    ConvUnit entry; // 1x1: c1 -> c3
    int pool_k = 5;
    ConvUnit exit; // 1x1: 4*c3 -> c2

    Tensor4 forward(const Tensor4& x) const;
    SppElanBlock fused() const;
    Shape count_ops(const Shape& in, OpCount& acc) const;
    Shape out_shape(const Shape& in) const;
    std::uint64_t param_count() const;
};

// Op tallies for the standalone reparameterizable blocks (train or deploy
// form, whichever the block currently holds).
Shape repvgg_count_ops(const RepVGGBlock& b, const Shape& in, OpCount& acc);
Shape rcs_count_ops(const RcsBlock& b, const Shape& in, OpCount& acc);

// Nearest-upsample a deeper map and concatenate skip maps behind it.
Tensor4 upsample_concat(const Tensor4& a, std::span<const Tensor4> skips, int factor);
Tensor4 upsample_concat(const Tensor4& a, const Tensor4& b, int factor);

ConvUnit random_conv_unit(int in_ch, int out_ch, int k, int stride, int groups, Activation act,
                          Rng& rng);
RepNcspBlock random_repncsp(int in_ch, int out_ch, int n_bottlenecks, bool rcs_stages, Rng& rng);
RepNcspElan4 random_repncspelan4(int in_ch, int out_ch, int c3, int c4, int n_bottlenecks,
                                 bool rcs_stages, Rng& rng);
ADownBlock random_adown(int in_ch, int out_ch, Rng& rng);
SppElanBlock random_sppelan(int in_ch, int out_ch, int c3, Rng& rng);

} // namespace rgelan

#endif
