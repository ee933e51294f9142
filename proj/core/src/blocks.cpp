#include "rgelan/blocks.hpp"

#include <string>

namespace rgelan {

OpCount& OpCount::operator+=(const OpCount& o) {
    madds += o.madds;
    bn_elems += o.bn_elems;
    act_elems += o.act_elems;
    pool_ops += o.pool_ops;
    ew_adds += o.ew_adds;
    return *this;
}

double OpCount::flops() const {
    return 2.0 * static_cast<double>(madds) + 2.0 * static_cast<double>(bn_elems) +
           static_cast<double>(act_elems) + static_cast<double>(pool_ops) +
           static_cast<double>(ew_adds);
}

// ---- ConvUnit ----

Tensor4 ConvUnit::forward(const Tensor4& x) const {
    Tensor4 y = conv2d(x, conv);
    if (bn)
        y = batchnorm_infer(y, *bn);
    if (act != Activation::None)
        y = activation(y, act);
    return y;
}

ConvUnit ConvUnit::fused() const {
    if (!bn)
        return *this;
    ConvUnit out;
    out.conv = fuse_conv_bn(conv, *bn);
    out.act = act;
    return out;
}

Shape ConvUnit::count_ops(const Shape& in, OpCount& acc) const {
    if (in.c != conv.in_ch())
        throw DimensionError("conv unit: input channels " + std::to_string(in.c) +
                             " != in_ch " + std::to_string(conv.in_ch()));
    Shape out;
    out.c = conv.out_ch();
    out.h = conv_out_dim(in.h, conv.kh(), conv.stride, conv.padding);
    out.w = conv_out_dim(in.w, conv.kw(), conv.stride, conv.padding);
    const std::uint64_t elems = static_cast<std::uint64_t>(out.c) * out.h * out.w;
    acc.madds += conv_madds(conv, out.h, out.w);
    if (bn)
        acc.bn_elems += elems;
    if (act != Activation::None)
        acc.act_elems += elems;
    return out;
}

Shape ConvUnit::out_shape(const Shape& in) const {
    OpCount tmp;
    return count_ops(in, tmp);
}

std::uint64_t ConvUnit::param_count() const {
    std::uint64_t p = conv.weight.size() + conv.bias.size();
    if (bn)
        p += 2ull * bn->channels();
    return p;
}

// ---- RepVGG / RCS op counting (free helpers, also used by the graph) ----

Shape repvgg_count_ops(const RepVGGBlock& b, const Shape& in, OpCount& acc) {
    Shape out;
    out.c = b.out_ch();
    out.h = conv_out_dim(in.h, 3, b.stride(), 1);
    out.w = conv_out_dim(in.w, 3, b.stride(), 1);
    const std::uint64_t elems = static_cast<std::uint64_t>(out.c) * out.h * out.w;
    if (b.is_deploy()) {
        acc.madds += conv_madds(std::get<RepVGGBlockDeploy>(b.form).fused, out.h, out.w);
    } else {
        const auto& t = std::get<RepVGGBlockTrain>(b.form);
        acc.madds += conv_madds(t.conv3x3, out.h, out.w);
        acc.madds += conv_madds(t.conv1x1, out.h, out.w);
        acc.bn_elems += 2 * elems;
        acc.ew_adds += elems;
        if (t.bn_id) {
            acc.bn_elems += elems;
            acc.ew_adds += elems;
        }
    }
    acc.act_elems += elems; // ReLU
    return out;
}

Shape rcs_count_ops(const RcsBlock& b, const Shape& in, OpCount& acc) {
    const Shape half_in{in.c / 2, in.h, in.w};
    Shape half_out = repvgg_count_ops(b.half_a, half_in, acc);
    if (b.half_b)
        repvgg_count_ops(*b.half_b, half_in, acc);
    return Shape{b.out_ch(), half_out.h, half_out.w};
}

// ---- RepNcspBottleneck ----

Tensor4 RepNcspBottleneck::forward(const Tensor4& x) const {
    Tensor4 y = std::holds_alternative<RepVGGBlock>(stage1)
                    ? repvgg_forward(std::get<RepVGGBlock>(stage1), x)
                    : rcs_forward(std::get<RcsBlock>(stage1), x);
    y = stage2.forward(y);
    if (shortcut && y.same_shape(x))
        for (std::size_t i = 0; i < y.size(); ++i)
            y.data[i] = static_cast<float>(static_cast<double>(y.data[i]) + x.data[i]);
    return y;
}

RepNcspBottleneck RepNcspBottleneck::fused() const {
    RepNcspBottleneck out = *this;
    if (std::holds_alternative<RepVGGBlock>(stage1))
        out.stage1 = reparameterized(std::get<RepVGGBlock>(stage1));
    else
        out.stage1 = reparameterized(std::get<RcsBlock>(stage1));
    out.stage2 = stage2.fused();
    return out;
}

Shape RepNcspBottleneck::count_ops(const Shape& in, OpCount& acc) const {
    Shape mid = std::holds_alternative<RepVGGBlock>(stage1)
                    ? repvgg_count_ops(std::get<RepVGGBlock>(stage1), in, acc)
                    : rcs_count_ops(std::get<RcsBlock>(stage1), in, acc);
    Shape out = stage2.count_ops(mid, acc);
    if (shortcut && out == in)
        acc.ew_adds += static_cast<std::uint64_t>(out.c) * out.h * out.w;
    return out;
}

std::uint64_t RepNcspBottleneck::param_count() const {
    std::uint64_t p = stage2.param_count();
    if (std::holds_alternative<RepVGGBlock>(stage1)) {
        p += std::get<RepVGGBlock>(stage1).param_count();
    } else {
        const auto& rcs = std::get<RcsBlock>(stage1);
        p += rcs.half_a.param_count();
        if (rcs.half_b)
            p += rcs.half_b->param_count();
    }
    return p;
}

// ---- RepNcspBlock ----

Tensor4 RepNcspBlock::forward(const Tensor4& x) const {
    Tensor4 main = entry_main.forward(x);
    for (const RepNcspBottleneck& b : bottlenecks)
        main = b.forward(main);
    const Tensor4 shortcut = entry_short.forward(x);
    return exit.forward(concat_channels(main, shortcut));
}

RepNcspBlock RepNcspBlock::fused() const {
    RepNcspBlock out;
    out.entry_main = entry_main.fused();
    out.entry_short = entry_short.fused();
    out.exit = exit.fused();
    out.bottlenecks.reserve(bottlenecks.size());
    for (const RepNcspBottleneck& b : bottlenecks)
        out.bottlenecks.push_back(b.fused());
    return out;
}

Shape RepNcspBlock::count_ops(const Shape& in, OpCount& acc) const {
    Shape main = entry_main.count_ops(in, acc);
    for (const RepNcspBottleneck& b : bottlenecks)
        main = b.count_ops(main, acc);
    const Shape shortcut = entry_short.count_ops(in, acc);
    if (main.h != shortcut.h || main.w != shortcut.w)
        throw DimensionError("repncsp: path spatial dims diverged");
    return exit.count_ops(Shape{main.c + shortcut.c, main.h, main.w}, acc);
}

Shape RepNcspBlock::out_shape(const Shape& in) const {
    OpCount tmp;
    return count_ops(in, tmp);
}

std::uint64_t RepNcspBlock::param_count() const {
    std::uint64_t p = entry_main.param_count() + entry_short.param_count() + exit.param_count();
    for (const RepNcspBottleneck& b : bottlenecks)
        p += b.param_count();
    return p;
}

// ---- RepNcspElan4 ----

Tensor4 RepNcspElan4::forward(const Tensor4& x) const {
    const Tensor4 y0 = entry.forward(x);
    if (y0.c % 2 != 0)
        throw DimensionError("elan4: entry width must be even, got " + std::to_string(y0.c));
    const int sizes[2] = {y0.c / 2, y0.c / 2};
    std::vector<Tensor4> parts = split_channels(y0, sizes);
    parts.push_back(conv1.forward(ncsp1.forward(parts[1])));
    parts.push_back(conv2.forward(ncsp2.forward(parts[2])));
    return exit.forward(concat_channels(parts));
}

RepNcspElan4 RepNcspElan4::fused() const {
    RepNcspElan4 out;
    out.entry = entry.fused();
    out.ncsp1 = ncsp1.fused();
    out.conv1 = conv1.fused();
    out.ncsp2 = ncsp2.fused();
    out.conv2 = conv2.fused();
    out.exit = exit.fused();
    return out;
}

Shape RepNcspElan4::count_ops(const Shape& in, OpCount& acc) const {
    const Shape y0 = entry.count_ops(in, acc);
    if (y0.c % 2 != 0)
        throw DimensionError("elan4: entry width must be even, got " + std::to_string(y0.c));
    const Shape half{y0.c / 2, y0.h, y0.w};
    const Shape p2 = conv1.count_ops(ncsp1.count_ops(half, acc), acc);
    const Shape p3 = conv2.count_ops(ncsp2.count_ops(p2, acc), acc);
    return exit.count_ops(Shape{y0.c + p2.c + p3.c, y0.h, y0.w}, acc);
}

Shape RepNcspElan4::out_shape(const Shape& in) const {
    OpCount tmp;
    return count_ops(in, tmp);
}

std::uint64_t RepNcspElan4::param_count() const {
    return entry.param_count() + ncsp1.param_count() + conv1.param_count() +
           ncsp2.param_count() + conv2.param_count() + exit.param_count();
}

// ---- ADownBlock ----

Tensor4 ADownBlock::forward(const Tensor4& x) const {
    if (x.c % 2 != 0)
        throw DimensionError("adown: input channels must be even, got " + std::to_string(x.c));
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw DimensionError("adown: spatial dims must be even, got " + std::to_string(x.h) +
                             "x" + std::to_string(x.w));
    const int sizes[2] = {x.c / 2, x.c / 2};
    const std::vector<Tensor4> halves = split_channels(x, sizes);
    const Tensor4 a = conv_a.forward(pool2d(halves[0], PoolMode::Avg, 2, 1, 0));
    const Tensor4 b = conv_b.forward(pool2d(halves[1], PoolMode::Max, 3, 2, 1));
    return concat_channels(a, b);
}

ADownBlock ADownBlock::fused() const {
    return ADownBlock{conv_a.fused(), conv_b.fused()};
}

Shape ADownBlock::count_ops(const Shape& in, OpCount& acc) const {
    if (in.c % 2 != 0 || in.h % 2 != 0 || in.w % 2 != 0)
        throw DimensionError("adown: channels and spatial dims must be even");
    const int hc = in.c / 2;
    acc.pool_ops += static_cast<std::uint64_t>(hc) * (in.h - 1) * (in.w - 1) * 4;
    const Shape a = conv_a.count_ops(Shape{hc, in.h - 1, in.w - 1}, acc);
    acc.pool_ops += static_cast<std::uint64_t>(hc) * (in.h / 2) * (in.w / 2) * 9;
    const Shape b = conv_b.count_ops(Shape{hc, in.h / 2, in.w / 2}, acc);
    if (a.h != b.h || a.w != b.w)
        throw DimensionError("adown: branch spatial dims diverged");
    return Shape{a.c + b.c, a.h, a.w};
}

Shape ADownBlock::out_shape(const Shape& in) const {
    OpCount tmp;
    return count_ops(in, tmp);
}

std::uint64_t ADownBlock::param_count() const {
    return conv_a.param_count() + conv_b.param_count();
}

// ---- SppElanBlock ----

Tensor4 SppElanBlock::forward(const Tensor4& x) const {
    if (x.h < pool_k || x.w < pool_k)
        throw DimensionError("sppelan: input " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                             " smaller than pool window " + std::to_string(pool_k));
    std::vector<Tensor4> maps;
    maps.push_back(entry.forward(x));
    for (int i = 0; i < 3; ++i)
        maps.push_back(pool2d(maps.back(), PoolMode::Max, pool_k, 1, pool_k / 2));
    return exit.forward(concat_channels(maps));
}

SppElanBlock SppElanBlock::fused() const {
    return SppElanBlock{entry.fused(), pool_k, exit.fused()};
}

Shape SppElanBlock::count_ops(const Shape& in, OpCount& acc) const {
    if (in.h < pool_k || in.w < pool_k)
        throw DimensionError("sppelan: input smaller than pool window");
    const Shape y0 = entry.count_ops(in, acc);
    acc.pool_ops += 3ull * y0.c * y0.h * y0.w * pool_k * pool_k;
    return exit.count_ops(Shape{4 * y0.c, y0.h, y0.w}, acc);
}

Shape SppElanBlock::out_shape(const Shape& in) const {
    OpCount tmp;
    return count_ops(in, tmp);
}

std::uint64_t SppElanBlock::param_count() const {
    return entry.param_count() + exit.param_count();
}

// ---- upsample + concat ----

Tensor4 upsample_concat(const Tensor4& a, std::span<const Tensor4> skips, int factor) {
    Tensor4 up = upsample_nearest(a, factor);
    if (skips.empty())
        return up;
    std::vector<Tensor4> all;
    all.reserve(skips.size() + 1);
    all.push_back(std::move(up));
    for (const Tensor4& s : skips) {
        if (!s.same_spatial(all[0]))
            throw DimensionError("upsample_concat: skip map spatial mismatch");
        all.push_back(s);
    }
    return concat_channels(all);
}

Tensor4 upsample_concat(const Tensor4& a, const Tensor4& b, int factor) {
    return upsample_concat(a, std::span<const Tensor4>(&b, 1), factor);
}

// ---- factories ----

ConvUnit random_conv_unit(int in_ch, int out_ch, int k, int stride, int groups, Activation act,
                          Rng& rng) {
    ConvUnit u;
    u.conv = random_conv(in_ch, out_ch, k, stride, k / 2, groups, false, rng);
    u.bn = random_bn(out_ch, rng);
    u.act = act;
    return u;
}

static RepNcspBottleneck random_bottleneck(int ch, bool rcs, Rng& rng) {
    RepNcspBottleneck b;
    if (rcs) {
        if (ch % 2 != 0)
            throw DimensionError("rcs bottleneck needs an even width, got " + std::to_string(ch));
        RcsBlock r;
        r.half_a = RepVGGBlock(random_repvgg_train(ch / 2, ch / 2, 1, 1, true, rng));
        r.half_b = RepVGGBlock(random_repvgg_train(ch / 2, ch / 2, 1, 1, true, rng));
        b.stage1 = std::move(r);
    } else {
        b.stage1 = RepVGGBlock(random_repvgg_train(ch, ch, 1, 1, true, rng));
    }
    b.stage2 = random_conv_unit(ch, ch, 3, 1, 1, Activation::Silu, rng);
    b.shortcut = true;
    return b;
}

RepNcspBlock random_repncsp(int in_ch, int out_ch, int n_bottlenecks, bool rcs_stages, Rng& rng) {
    const int hidden = out_ch >= 2 ? out_ch / 2 : 1;
    RepNcspBlock b;
    b.entry_main = random_conv_unit(in_ch, hidden, 1, 1, 1, Activation::Silu, rng);
    b.entry_short = random_conv_unit(in_ch, hidden, 1, 1, 1, Activation::Silu, rng);
    b.exit = random_conv_unit(2 * hidden, out_ch, 1, 1, 1, Activation::Silu, rng);
    for (int i = 0; i < n_bottlenecks; ++i)
        b.bottlenecks.push_back(random_bottleneck(hidden, rcs_stages, rng));
    return b;
}

RepNcspElan4 random_repncspelan4(int in_ch, int out_ch, int c3, int c4, int n_bottlenecks,
                                 bool rcs_stages, Rng& rng) {
    if (c3 % 2 != 0)
        throw DimensionError("elan4: c3 must be even, got " + std::to_string(c3));
    RepNcspElan4 e;
    e.entry = random_conv_unit(in_ch, c3, 1, 1, 1, Activation::Silu, rng);
    e.ncsp1 = random_repncsp(c3 / 2, c4, n_bottlenecks, rcs_stages, rng);
    e.conv1 = random_conv_unit(c4, c4, 3, 1, 1, Activation::Silu, rng);
    e.ncsp2 = random_repncsp(c4, c4, n_bottlenecks, rcs_stages, rng);
    e.conv2 = random_conv_unit(c4, c4, 3, 1, 1, Activation::Silu, rng);
    e.exit = random_conv_unit(c3 + 2 * c4, out_ch, 1, 1, 1, Activation::Silu, rng);
    return e;
}

ADownBlock random_adown(int in_ch, int out_ch, Rng& rng) {
    if (in_ch % 2 != 0 || out_ch % 2 != 0)
        throw DimensionError("adown: channel counts must be even");
    ADownBlock a;
    a.conv_a = random_conv_unit(in_ch / 2, out_ch / 2, 3, 2, 1, Activation::Silu, rng);
    a.conv_b = random_conv_unit(in_ch / 2, out_ch / 2, 1, 1, 1, Activation::Silu, rng);
    return a;
}

SppElanBlock random_sppelan(int in_ch, int out_ch, int c3, Rng& rng) {
    SppElanBlock s;
    s.entry = random_conv_unit(in_ch, c3, 1, 1, 1, Activation::Silu, rng);
    s.pool_k = 5;
    s.exit = random_conv_unit(4 * c3, out_ch, 1, 1, 1, Activation::Silu, rng);
    return s;
}

} // namespace rgelan
