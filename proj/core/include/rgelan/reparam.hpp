#ifndef RGELAN_REPARAM_HPP
#define RGELAN_REPARAM_HPP

#include <cstdint>
#include <optional>
#include <variant>

#include "rgelan/init.hpp"
#include "rgelan/tensor.hpp"

namespace rgelan {

// Training-time RepVGG block: parallel 3x3+BN, 1x1+BN and (when the shape
// allows) identity-BN branches, summed and passed through ReLU.
struct RepVGGBlockTrain {
    ConvParams conv3x3; // bias-free, pad 1
    BnParams bn3x3;
    ConvParams conv1x1; // bias-free, pad 0
    BnParams bn1x1;
    std::optional<BnParams> bn_id; // only when in_ch == out_ch and stride == 1

    int in_ch() const { return conv3x3.in_ch(); }
    int out_ch() const { return conv3x3.out_ch(); }
    int stride() const { return conv3x3.stride; }
    int groups() const { return conv3x3.groups; }

    void validate() const;
    std::uint64_t param_count() const;
};

// Deploy-time form: one 3x3 convolution with bias, then ReLU.
struct RepVGGBlockDeploy {
    ConvParams fused; // 3x3, bias present, pad 1

    int in_ch() const { return fused.in_ch(); }
    int out_ch() const { return fused.out_ch(); }
    int stride() const { return fused.stride; }

    void validate() const;
    std::uint64_t param_count() const;
};

// A RepVGG block in either form.
struct RepVGGBlock {
    std::variant<RepVGGBlockTrain, RepVGGBlockDeploy> form;

    RepVGGBlock() = default;
    RepVGGBlock(RepVGGBlockTrain t) : form(std::move(t)) {}
    RepVGGBlock(RepVGGBlockDeploy d) : form(std::move(d)) {}

    bool is_deploy() const { return std::holds_alternative<RepVGGBlockDeploy>(form); }
    int in_ch() const;
    int out_ch() const;
    int stride() const;
    std::uint64_t param_count() const;
};

// Channel split -> per-half RepVGG -> channel-wise concat -> channel shuffle.
// An absent second half leaves that half of the channels untouched.
struct RcsBlock {
    RepVGGBlock half_a;
    std::optional<RepVGGBlock> half_b;
    int shuffle_groups = 2;

    void validate() const;
    int in_ch() const;
    int out_ch() const;
    int stride() const;
    std::uint64_t param_count() const;
};

// Folds batchnorm into the preceding convolution:
//   W' = (gamma / sqrt(var + eps)) . W   per output channel,
//   b' = beta - gamma * mean / sqrt(var + eps)  (+ scaled original bias).
ConvParams fuse_conv_bn(const ConvParams& conv, const BnParams& bn);

// Places each 1x1 value at the spatial center of a 3x3 kernel and bumps the
// padding by one, so the forward result is unchanged.
ConvParams pad_1x1_to_3x3(const ConvParams& conv);

// 3x3 kernel that reproduces its input exactly at stride 1, pad 1; the
// grouped variant wires each output channel to its in-group input channel.
ConvParams identity_as_3x3(int channels, int groups);

RepVGGBlockDeploy reparameterize(const RepVGGBlockTrain& b);
RepVGGBlock reparameterized(const RepVGGBlock& b); // idempotent
RcsBlock reparameterized(const RcsBlock& b);

Tensor4 repvgg_forward(const RepVGGBlockTrain& b, const Tensor4& x);
Tensor4 repvgg_forward(const RepVGGBlockDeploy& b, const Tensor4& x);
Tensor4 repvgg_forward(const RepVGGBlock& b, const Tensor4& x);

// Reshape-transpose channel permutation: (g, c/g) -> (c/g, g).
Tensor4 channel_shuffle(const Tensor4& x, int g);

Tensor4 rcs_forward(const RcsBlock& b, const Tensor4& x);

RepVGGBlockTrain random_repvgg_train(int in_ch, int out_ch, int stride, int groups,
                                     bool identity_branch, Rng& rng);

} // namespace rgelan

#endif
