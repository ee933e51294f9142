#include "rgelan/reparam.hpp"

#include <cmath>
#include <string>

namespace rgelan {

void RepVGGBlockTrain::validate() const {
    conv3x3.validate();
    conv1x1.validate();
    bn3x3.validate();
    bn1x1.validate();
    if (conv3x3.kh() != 3 || conv3x3.kw() != 3)
        throw DimensionError("repvgg: main branch kernel must be 3x3");
    if (conv1x1.kh() != 1 || conv1x1.kw() != 1)
        throw DimensionError("repvgg: secondary branch kernel must be 1x1");
    if (conv3x3.has_bias() || conv1x1.has_bias())
        throw DimensionError("repvgg: train-form conv branches are bias-free");
    if (conv1x1.stride != conv3x3.stride || conv1x1.groups != conv3x3.groups)
        throw DimensionError("repvgg: branches must share stride and groups");
    if (conv1x1.in_ch() != conv3x3.in_ch() || conv1x1.out_ch() != conv3x3.out_ch())
        throw DimensionError("repvgg: branches must share channel counts");
    if (bn3x3.channels() != out_ch() || bn1x1.channels() != out_ch())
        throw DimensionError("repvgg: branch BN width must equal out_ch");
    if (bn_id) {
        bn_id->validate();
        if (in_ch() != out_ch() || stride() != 1)
            throw DimensionError("repvgg: identity branch requires in_ch == out_ch and stride 1");
        if (bn_id->channels() != out_ch())
            throw DimensionError("repvgg: identity BN width must equal out_ch");
    }
    if (conv3x3.padding != 1 || conv1x1.padding != 0)
        throw DimensionError("repvgg: expected pad 1 on 3x3 branch, pad 0 on 1x1 branch");
}

std::uint64_t RepVGGBlockTrain::param_count() const {
    std::uint64_t p = conv3x3.weight.size() + conv1x1.weight.size();
    p += 2ull * bn3x3.channels() + 2ull * bn1x1.channels(); // gamma + beta
    if (bn_id)
        p += 2ull * bn_id->channels();
    return p;
}

void RepVGGBlockDeploy::validate() const {
    fused.validate();
    if (fused.kh() != 3 || fused.kw() != 3)
        throw DimensionError("repvgg deploy kernel must be 3x3");
    if (!fused.has_bias())
        throw DimensionError("repvgg deploy kernel must carry a bias");
}

std::uint64_t RepVGGBlockDeploy::param_count() const {
    return fused.weight.size() + fused.bias.size();
}

int RepVGGBlock::in_ch() const {
    return std::visit([](const auto& f) { return f.in_ch(); }, form);
}
int RepVGGBlock::out_ch() const {
    return std::visit([](const auto& f) { return f.out_ch(); }, form);
}
int RepVGGBlock::stride() const {
    return std::visit([](const auto& f) { return f.stride(); }, form);
}
std::uint64_t RepVGGBlock::param_count() const {
    return std::visit([](const auto& f) { return f.param_count(); }, form);
}

void RcsBlock::validate() const {
    if (shuffle_groups < 1)
        throw DimensionError("rcs: shuffle group count must be >= 1");
    if (half_b) {
        if (half_b->stride() != half_a.stride())
            throw DimensionError("rcs: halves must agree on stride");
    } else if (half_a.stride() != 1) {
        throw DimensionError("rcs: identity second half requires stride 1");
    }
    if (out_ch() % shuffle_groups != 0)
        throw DimensionError("rcs: shuffle groups must divide output channels");
}

int RcsBlock::in_ch() const {
    return half_a.in_ch() + (half_b ? half_b->in_ch() : half_a.in_ch());
}
int RcsBlock::out_ch() const {
    return half_a.out_ch() + (half_b ? half_b->out_ch() : half_a.in_ch());
}
int RcsBlock::stride() const {
    return half_a.stride();
}

std::uint64_t RcsBlock::param_count() const {
    return half_a.param_count() + (half_b ? half_b->param_count() : 0);
}

ConvParams fuse_conv_bn(const ConvParams& conv, const BnParams& bn) {
    conv.validate();
    bn.validate();
    if (bn.channels() != conv.out_ch())
        throw DimensionError("fuse_conv_bn: BN channels " + std::to_string(bn.channels()) +
                             " != conv out_ch " + std::to_string(conv.out_ch()));

    ConvParams out = conv;
    out.bias.assign(conv.out_ch(), 0.0f);
    const std::size_t per_oc = conv.weight.size() / conv.out_ch();
    for (int oc = 0; oc < conv.out_ch(); ++oc) {
        const double scale =
            bn.gamma[oc] / std::sqrt(static_cast<double>(bn.running_var[oc]) + bn.eps);
        float* w = out.weight.data.data() + per_oc * oc;
        for (std::size_t i = 0; i < per_oc; ++i)
            w[i] = static_cast<float>(scale * w[i]);
        double b = bn.beta[oc] - scale * bn.running_mean[oc];
        if (conv.has_bias())
            b += scale * conv.bias[oc];
        out.bias[oc] = static_cast<float>(b);
    }
    return out;
}

ConvParams pad_1x1_to_3x3(const ConvParams& conv) {
    if (conv.kh() != 1 || conv.kw() != 1)
        throw DimensionError("pad_1x1_to_3x3: kernel is not 1x1");

    ConvParams out = conv;
    out.weight = Tensor4(conv.weight.n, conv.weight.c, 3, 3);
    for (int oc = 0; oc < conv.weight.n; ++oc)
        for (int ic = 0; ic < conv.weight.c; ++ic)
            out.weight.at(oc, ic, 1, 1) = conv.weight.at(oc, ic, 0, 0);
    out.padding = conv.padding + 1;
    return out;
}

ConvParams identity_as_3x3(int channels, int groups) {
    if (channels < 1 || groups < 1 || channels % groups != 0)
        throw DimensionError("identity_as_3x3: groups must divide channels");

    ConvParams p;
    p.weight = Tensor4(channels, channels / groups, 3, 3);
    p.stride = 1;
    p.padding = 1;
    p.groups = groups;
    const int per_group = channels / groups;
    for (int oc = 0; oc < channels; ++oc)
        p.weight.at(oc, oc % per_group, 1, 1) = 1.0f;
    return p;
}

RepVGGBlockDeploy reparameterize(const RepVGGBlockTrain& b) {
    b.validate();

    const ConvParams k3 = fuse_conv_bn(b.conv3x3, b.bn3x3);
    const ConvParams k1 = pad_1x1_to_3x3(fuse_conv_bn(b.conv1x1, b.bn1x1));

    RepVGGBlockDeploy d;
    d.fused = k3;
    for (std::size_t i = 0; i < d.fused.weight.size(); ++i)
        d.fused.weight.data[i] = static_cast<float>(static_cast<double>(k3.weight.data[i]) +
                                                    k1.weight.data[i]);
    for (int oc = 0; oc < d.fused.out_ch(); ++oc)
        d.fused.bias[oc] =
            static_cast<float>(static_cast<double>(k3.bias[oc]) + k1.bias[oc]);

    if (b.bn_id) {
        const ConvParams kid = fuse_conv_bn(identity_as_3x3(b.out_ch(), b.groups()), *b.bn_id);
        for (std::size_t i = 0; i < d.fused.weight.size(); ++i)
            d.fused.weight.data[i] = static_cast<float>(
                static_cast<double>(d.fused.weight.data[i]) + kid.weight.data[i]);
        for (int oc = 0; oc < d.fused.out_ch(); ++oc)
            d.fused.bias[oc] = static_cast<float>(static_cast<double>(d.fused.bias[oc]) +
                                                  kid.bias[oc]);
    }
    d.validate();
    return d;
}

RepVGGBlock reparameterized(const RepVGGBlock& b) {
    if (b.is_deploy())
        return b;
    return RepVGGBlock(reparameterize(std::get<RepVGGBlockTrain>(b.form)));
}

RcsBlock reparameterized(const RcsBlock& b) {
    RcsBlock out = b;
    out.half_a = reparameterized(b.half_a);
    if (b.half_b)
        out.half_b = reparameterized(*b.half_b);
    return out;
}

Tensor4 repvgg_forward(const RepVGGBlockTrain& b, const Tensor4& x) {
    if (x.c != b.in_ch())
        throw DimensionError("repvgg: input channels " + std::to_string(x.c) + " != in_ch " +
                             std::to_string(b.in_ch()));

    const Tensor4 y3 = batchnorm_infer(conv2d(x, b.conv3x3), b.bn3x3);
    const Tensor4 y1 = batchnorm_infer(conv2d(x, b.conv1x1), b.bn1x1);

    Tensor4 sum(y3.n, y3.c, y3.h, y3.w);
    if (b.bn_id) {
        const Tensor4 yid = batchnorm_infer(x, *b.bn_id);
        for (std::size_t i = 0; i < sum.size(); ++i)
            sum.data[i] = static_cast<float>(static_cast<double>(y3.data[i]) + y1.data[i] +
                                             yid.data[i]);
    } else {
        for (std::size_t i = 0; i < sum.size(); ++i)
            sum.data[i] =
                static_cast<float>(static_cast<double>(y3.data[i]) + y1.data[i]);
    }
    return activation(sum, Activation::Relu);
}

Tensor4 repvgg_forward(const RepVGGBlockDeploy& b, const Tensor4& x) {
    if (x.c != b.in_ch())
        throw DimensionError("repvgg: input channels " + std::to_string(x.c) + " != in_ch " +
                             std::to_string(b.in_ch()));
    return activation(conv2d(x, b.fused), Activation::Relu);
}

Tensor4 repvgg_forward(const RepVGGBlock& b, const Tensor4& x) {
    return std::visit([&](const auto& f) { return repvgg_forward(f, x); }, b.form);
}

Tensor4 channel_shuffle(const Tensor4& x, int g) {
    if (g < 1 || x.c % g != 0)
        throw DimensionError("channel_shuffle: group count must divide channels");
    if (g == 1)
        return x;

    const int per_group = x.c / g;
    Tensor4 y(x.n, x.c, x.h, x.w);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int in = 0; in < x.n; ++in)
        for (int i = 0; i < per_group; ++i)
            for (int j = 0; j < g; ++j)
                std::copy_n(x.plane(in, j * per_group + i), plane, y.plane(in, i * g + j));
    return y;
}

Tensor4 rcs_forward(const RcsBlock& b, const Tensor4& x) {
    b.validate();
    if (x.c % 2 != 0)
        throw DimensionError("rcs: input channel count must be even, got " + std::to_string(x.c));
    if (x.c != b.in_ch())
        throw DimensionError("rcs: input channels " + std::to_string(x.c) + " != in_ch " +
                             std::to_string(b.in_ch()));

    const int sizes[2] = {x.c / 2, x.c / 2};
    const std::vector<Tensor4> halves = split_channels(x, sizes);
    const Tensor4 ya = repvgg_forward(b.half_a, halves[0]);
    const Tensor4 yb = b.half_b ? repvgg_forward(*b.half_b, halves[1]) : halves[1];
    return channel_shuffle(concat_channels(ya, yb), b.shuffle_groups);
}

RepVGGBlockTrain random_repvgg_train(int in_ch, int out_ch, int stride, int groups,
                                     bool identity_branch, Rng& rng) {
    RepVGGBlockTrain b;
    b.conv3x3 = random_conv(in_ch, out_ch, 3, stride, 1, groups, false, rng);
    b.bn3x3 = random_bn(out_ch, rng);
    b.conv1x1 = random_conv(in_ch, out_ch, 1, stride, 0, groups, false, rng);
    b.bn1x1 = random_bn(out_ch, rng);
    if (identity_branch)
        b.bn_id = random_bn(out_ch, rng);
    b.validate();
    return b;
}

} // namespace rgelan
