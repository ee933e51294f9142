#include "rgelan/graph.hpp"

#include <algorithm>
#include <utility>

#include "rgelan/errors.hpp"

namespace rgelan {

namespace {

template <class... Ts> struct overloaded : Ts... {
    using Ts::operator()...;
};

struct ArgView {
    std::vector<int> ints;
    std::vector<std::string> kws;
};

ArgView split_args(const LayerSpec& l) {
    ArgView v;
    for (const LayerArg& a : l.args) {
        if (const int* i = std::get_if<int>(&a))
            v.ints.push_back(*i);
        else
            v.kws.push_back(std::get<std::string>(a));
    }
    return v;
}

[[noreturn]] void fail(const LayerSpec& l, const std::string& msg) {
    throw ParseError(l.line, l.module + ": " + msg);
}

void want_ints(const LayerSpec& l, const ArgView& v, std::size_t n, const char* sig) {
    if (v.ints.size() != n)
        fail(l, std::string("wants arguments ") + sig);
}

void no_keywords(const LayerSpec& l, const ArgView& v) {
    if (!v.kws.empty())
        fail(l, "unexpected keyword '" + v.kws.front() + "'");
}

bool take_kw(ArgView& v, const char* kw) {
    auto it = std::find(v.kws.begin(), v.kws.end(), kw);
    if (it == v.kws.end())
        return false;
    v.kws.erase(it);
    return true;
}

void want_sources(const LayerSpec& l, const GraphNode& node, std::size_t n) {
    if (node.from.size() != n)
        fail(l, "wants " + std::to_string(n) + " source(s), got " +
                    std::to_string(node.from.size()));
}

void want_single_repeat(const LayerSpec& l) {
    if (l.repeats != 1)
        fail(l, "does not take repeats");
}

Shape block_count(const Block& b, const Shape& in, OpCount& acc) {
    return std::visit(
        overloaded{
            [&](const ConvUnit& u) { return u.count_ops(in, acc); },
            [&](const RepVGGBlock& r) { return repvgg_count_ops(r, in, acc); },
            [&](const RcsBlock& r) { return rcs_count_ops(r, in, acc); },
            [&](const RepNcspElan4& e) { return e.count_ops(in, acc); },
            [&](const ADownBlock& a) { return a.count_ops(in, acc); },
            [&](const SppElanBlock& s) { return s.count_ops(in, acc); },
            [&](const UpsampleOp&) -> Shape {
                throw DimensionError("wiring op has no sequential cost");
            },
            [&](const ConcatOp&) -> Shape {
                throw DimensionError("wiring op has no sequential cost");
            },
            [&](const DDetectHead&) -> Shape {
                throw DimensionError("detect head is counted per feature");
            },
        },
        b);
}

} // namespace

Tensor4 block_forward(const Block& b, const Tensor4& x) {
    return std::visit(
        overloaded{
            [&](const ConvUnit& u) { return u.forward(x); },
            [&](const RepVGGBlock& r) { return repvgg_forward(r, x); },
            [&](const RcsBlock& r) { return rcs_forward(r, x); },
            [&](const RepNcspElan4& e) { return e.forward(x); },
            [&](const ADownBlock& a) { return a.forward(x); },
            [&](const SppElanBlock& s) { return s.forward(x); },
            [&](const UpsampleOp&) -> Tensor4 {
                throw DimensionError("upsample is not a sequential block");
            },
            [&](const ConcatOp&) -> Tensor4 {
                throw DimensionError("concat is not a sequential block");
            },
            [&](const DDetectHead&) -> Tensor4 {
                throw DimensionError("detect head does not produce a single tensor");
            },
        },
        b);
}

std::uint64_t block_param_count(const Block& b) {
    return std::visit(overloaded{
                          [](const ConvUnit& u) { return u.param_count(); },
                          [](const RepVGGBlock& r) { return r.param_count(); },
                          [](const RcsBlock& r) { return r.param_count(); },
                          [](const RepNcspElan4& e) { return e.param_count(); },
                          [](const ADownBlock& a) { return a.param_count(); },
                          [](const SppElanBlock& s) { return s.param_count(); },
                          [](const UpsampleOp&) { return std::uint64_t{0}; },
                          [](const ConcatOp&) { return std::uint64_t{0}; },
                          [](const DDetectHead& h) { return h.param_count(); },
                      },
                      b);
}

ModelGraph build_graph(const ModelConfig& cfg, int image_size, std::uint32_t seed) {
    if (image_size < 1)
        throw DimensionError("build_graph: image size must be positive");
    ModelGraph g;
    g.ch = cfg.ch;
    g.nc = cfg.nc;
    g.image_size = image_size;
    g.seed = seed;
    Rng rng(seed);
    const Shape input{cfg.ch, image_size, image_size};

    for (int i = 0; i < static_cast<int>(cfg.layers.size()); ++i) {
        const LayerSpec& l = cfg.layers[i];
        if (g.detect_index >= 0)
            fail(l, "no layers may follow DDetect");

        GraphNode node;
        node.module = l.module;
        node.name = std::to_string(i) + "_" + l.module;
        for (int f : l.from) {
            int r = f < 0 ? i + f : f;
            if (r < -1 || r >= i)
                fail(l, "source " + std::to_string(f) + " is out of range");
            node.from.push_back(r);
        }
        auto src_shape = [&](int r) { return r < 0 ? input : g.nodes[r].out_shape; };

        ArgView v = split_args(l);
        try {
            if (l.module == "Conv") {
                want_sources(l, node, 1);
                want_ints(l, v, 3, "[out_ch, kernel, stride]");
                no_keywords(l, v);
                Shape cur = src_shape(node.from[0]);
                for (int rep = 0; rep < l.repeats; ++rep) {
                    ConvUnit u = random_conv_unit(cur.c, v.ints[0], v.ints[1], v.ints[2], 1,
                                                  Activation::Silu, rng);
                    cur = u.out_shape(cur);
                    node.seq.emplace_back(std::move(u));
                }
                node.out_shape = cur;
            } else if (l.module == "RepVGG") {
                want_sources(l, node, 1);
                want_ints(l, v, 2, "[out_ch, stride]");
                no_keywords(l, v);
                Shape cur = src_shape(node.from[0]);
                for (int rep = 0; rep < l.repeats; ++rep) {
                    const bool id = cur.c == v.ints[0] && v.ints[1] == 1;
                    RepVGGBlock b{random_repvgg_train(cur.c, v.ints[0], v.ints[1], 1, id, rng)};
                    OpCount tmp;
                    cur = repvgg_count_ops(b, cur, tmp);
                    node.seq.emplace_back(std::move(b));
                }
                node.out_shape = cur;
            } else if (l.module == "RCS") {
                want_sources(l, node, 1);
                want_ints(l, v, 2, "[out_ch, stride]");
                const bool one_half_id = take_kw(v, "id");
                no_keywords(l, v);
                const int out = v.ints[0], stride = v.ints[1];
                Shape cur = src_shape(node.from[0]);
                for (int rep = 0; rep < l.repeats; ++rep) {
                    if (cur.c % 2 != 0)
                        fail(l, "input channels must be even to split");
                    RcsBlock rcs;
                    if (one_half_id) {
                        if (stride != 1 || out != cur.c)
                            fail(l, "'id' variant needs stride 1 and out_ch == in_ch");
                        rcs.half_a = RepVGGBlock{
                            random_repvgg_train(cur.c / 2, cur.c / 2, 1, 1, true, rng)};
                    } else {
                        if (out % 2 != 0)
                            fail(l, "out_ch must be even to split");
                        const bool id = cur.c == out && stride == 1;
                        rcs.half_a = RepVGGBlock{
                            random_repvgg_train(cur.c / 2, out / 2, stride, 1, id, rng)};
                        rcs.half_b = RepVGGBlock{
                            random_repvgg_train(cur.c / 2, out / 2, stride, 1, id, rng)};
                    }
                    rcs.validate();
                    OpCount tmp;
                    cur = rcs_count_ops(rcs, cur, tmp);
                    node.seq.emplace_back(std::move(rcs));
                }
                node.out_shape = cur;
            } else if (l.module == "RepNCSPELAN4") {
                want_sources(l, node, 1);
                want_ints(l, v, 4, "[out_ch, mid_ch, stage_ch, bottlenecks]");
                const bool rcs_stages = take_kw(v, "rcs");
                no_keywords(l, v);
                Shape cur = src_shape(node.from[0]);
                for (int rep = 0; rep < l.repeats; ++rep) {
                    RepNcspElan4 e = random_repncspelan4(cur.c, v.ints[0], v.ints[1], v.ints[2],
                                                         v.ints[3], rcs_stages, rng);
                    cur = e.out_shape(cur);
                    node.seq.emplace_back(std::move(e));
                }
                node.out_shape = cur;
            } else if (l.module == "ADown") {
                want_sources(l, node, 1);
                want_ints(l, v, 1, "[out_ch]");
                no_keywords(l, v);
                Shape cur = src_shape(node.from[0]);
                for (int rep = 0; rep < l.repeats; ++rep) {
                    ADownBlock a = random_adown(cur.c, v.ints[0], rng);
                    cur = a.out_shape(cur);
                    node.seq.emplace_back(std::move(a));
                }
                node.out_shape = cur;
            } else if (l.module == "SPPELAN") {
                want_sources(l, node, 1);
                want_ints(l, v, 2, "[out_ch, hidden_ch]");
                no_keywords(l, v);
                Shape cur = src_shape(node.from[0]);
                for (int rep = 0; rep < l.repeats; ++rep) {
                    SppElanBlock s = random_sppelan(cur.c, v.ints[0], v.ints[1], rng);
                    cur = s.out_shape(cur);
                    node.seq.emplace_back(std::move(s));
                }
                node.out_shape = cur;
            } else if (l.module == "Upsample") {
                want_sources(l, node, 1);
                want_single_repeat(l);
                want_ints(l, v, 1, "[factor]");
                no_keywords(l, v);
                if (v.ints[0] < 1)
                    fail(l, "factor must be positive");
                Shape s = src_shape(node.from[0]);
                node.seq.emplace_back(UpsampleOp{v.ints[0]});
                node.out_shape = Shape{s.c, s.h * v.ints[0], s.w * v.ints[0]};
            } else if (l.module == "Concat") {
                if (node.from.size() < 2)
                    fail(l, "wants at least two sources");
                want_single_repeat(l);
                no_keywords(l, v);
                if (!v.ints.empty() && (v.ints.size() != 1 || v.ints[0] != 1))
                    fail(l, "only channel-axis concat (argument 1) is supported");
                Shape first = src_shape(node.from[0]);
                int channels = 0;
                for (int f : node.from) {
                    Shape s = src_shape(f);
                    if (s.h != first.h || s.w != first.w)
                        fail(l, "sources disagree on spatial size");
                    channels += s.c;
                }
                node.seq.emplace_back(ConcatOp{});
                node.out_shape = Shape{channels, first.h, first.w};
            } else if (l.module == "DDetect") {
                if (node.from.empty())
                    fail(l, "wants at least one feature source");
                want_single_repeat(l);
                no_keywords(l, v);
                if (v.ints.size() > 1)
                    fail(l, "wants at most one argument [reg_max]");
                const int reg_max = v.ints.empty() ? 16 : v.ints[0];
                if (reg_max < 2)
                    fail(l, "reg_max must be at least 2");
                std::vector<int> feat_ch, strides;
                for (int f : node.from) {
                    Shape s = src_shape(f);
                    if (s.h != s.w || s.h < 1 || image_size % s.h != 0)
                        fail(l, "feature maps must be square divisors of the input size");
                    feat_ch.push_back(s.c);
                    strides.push_back(image_size / s.h);
                }
                node.seq.emplace_back(
                    random_ddetect(feat_ch, cfg.nc, reg_max, strides, image_size, rng));
                node.out_shape = Shape{};
                g.detect_index = i;
                g.detect_strides = strides;
            } else {
                fail(l, "unknown module");
            }
        } catch (const ParseError&) {
            throw;
        } catch (const DimensionError& e) {
            fail(l, e.what());
        }
        g.nodes.push_back(std::move(node));
    }
    return g;
}

void fuse_graph(ModelGraph& g) {
    for (GraphNode& node : g.nodes)
        for (Block& b : node.seq)
            std::visit(overloaded{
                           [&](ConvUnit& u) { b = u.fused(); },
                           [&](RepVGGBlock& r) { b = reparameterized(r); },
                           [&](RcsBlock& r) { b = reparameterized(r); },
                           [&](RepNcspElan4& e) { b = e.fused(); },
                           [&](ADownBlock& a) { b = a.fused(); },
                           [&](SppElanBlock& s) { b = s.fused(); },
                           [&](UpsampleOp&) {},
                           [&](ConcatOp&) {},
                           [&](DDetectHead& h) { b = h.fused(); },
                       },
                       b);
    g.fused = true;
}

AccountingReport count_graph(const ModelGraph& g) {
    AccountingReport r;
    r.image_size = g.image_size;
    r.fused = g.fused;
    const Shape input{g.ch, g.image_size, g.image_size};
    std::vector<Shape> shapes(g.nodes.size());

    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const GraphNode& node = g.nodes[i];
        auto src = [&](int f) { return f < 0 ? input : shapes[f]; };
        NodeCost cost;
        cost.name = node.name;

        if (node.module == "Upsample") {
            int factor = std::get<UpsampleOp>(node.seq[0]).factor;
            Shape s = src(node.from[0]);
            shapes[i] = Shape{s.c, s.h * factor, s.w * factor};
        } else if (node.module == "Concat") {
            Shape first = src(node.from[0]);
            int channels = 0;
            for (int f : node.from)
                channels += src(f).c;
            shapes[i] = Shape{channels, first.h, first.w};
        } else if (node.module == "DDetect") {
            const auto& head = std::get<DDetectHead>(node.seq[0]);
            for (std::size_t k = 0; k < node.from.size(); ++k) {
                Shape s = src(node.from[static_cast<int>(k)]);
                head.box_branch[k].count_ops(s, cost.ops);
                head.cls_branch[k].count_ops(s, cost.ops);
            }
            cost.params = head.param_count();
            shapes[i] = Shape{};
        } else {
            Shape cur = src(node.from[0]);
            for (const Block& b : node.seq) {
                cur = block_count(b, cur, cost.ops);
                cost.params += block_param_count(b);
            }
            shapes[i] = cur;
        }
        cost.out_shape = shapes[i];
        r.total_params += cost.params;
        r.total_ops += cost.ops;
        r.nodes.push_back(std::move(cost));
    }
    return r;
}

ForwardResult model_forward(const ModelGraph& g, const Tensor4& image) {
    if (g.detect_index < 0)
        throw DimensionError("model_forward: graph has no DDetect layer");
    if (image.n != 1 || image.c != g.ch)
        throw DimensionError("model_forward: image must be (1, " + std::to_string(g.ch) +
                             ", h, w)");

    std::vector<Tensor4> outs(g.nodes.size());
    auto src = [&](int f) -> const Tensor4& { return f < 0 ? image : outs[f]; };

    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const GraphNode& node = g.nodes[i];
        if (node.module == "Upsample") {
            outs[i] = upsample_nearest(src(node.from[0]),
                                       std::get<UpsampleOp>(node.seq[0]).factor);
        } else if (node.module == "Concat") {
            std::vector<Tensor4> parts;
            parts.reserve(node.from.size());
            for (int f : node.from)
                parts.push_back(src(f));
            outs[i] = concat_channels(parts);
        } else if (node.module == "DDetect") {
            const auto& head = std::get<DDetectHead>(node.seq[0]);
            ForwardResult result;
            std::vector<std::pair<int, int>> hw;
            std::vector<int> strides;
            for (int f : node.from) {
                const Tensor4& feat = src(f);
                if (image.h % feat.h != 0 || image.w % feat.w != 0 ||
                    image.h / feat.h != image.w / feat.w)
                    throw DimensionError("model_forward: feature stride is not uniform");
                hw.emplace_back(feat.h, feat.w);
                strides.push_back(image.h / feat.h);
                result.features.push_back(feat);
            }
            result.raw = ddetect_forward(head, result.features);
            result.anchors = make_anchors(hw, strides, 0.5f);
            return result;
        } else {
            Tensor4 x = src(node.from[0]);
            for (const Block& b : node.seq)
                x = block_forward(b, x);
            outs[i] = std::move(x);
        }
    }
    throw DimensionError("model_forward: DDetect layer was never reached");
}

} // namespace rgelan
