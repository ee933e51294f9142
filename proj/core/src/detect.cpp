#include "rgelan/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rgelan/errors.hpp"

namespace rgelan {

std::uint64_t RawPrediction::point_count() const {
    std::uint64_t n = 0;
    for (const Tensor4& t : layers)
        n += static_cast<std::uint64_t>(t.h) * t.w;
    return n;
}

Tensor4 DDetectStack::forward(const Tensor4& x) const {
    return conv2d(c2.forward(c1.forward(x)), out);
}

DDetectStack DDetectStack::fused() const {
    return DDetectStack{c1.fused(), c2.fused(), out};
}

Shape DDetectStack::count_ops(const Shape& in, OpCount& acc) const {
    Shape s = c2.count_ops(c1.count_ops(in, acc), acc);
    int oh = conv_out_dim(s.h, out.kh(), out.stride, out.padding);
    int ow = conv_out_dim(s.w, out.kw(), out.stride, out.padding);
    acc.madds += conv_madds(out, oh, ow);
    return Shape{out.out_ch(), oh, ow};
}

std::uint64_t DDetectStack::param_count() const {
    return c1.param_count() + c2.param_count() + out.weight.size() + out.bias.size();
}

DDetectHead DDetectHead::fused() const {
    DDetectHead f = *this;
    for (DDetectStack& s : f.box_branch)
        s = s.fused();
    for (DDetectStack& s : f.cls_branch)
        s = s.fused();
    return f;
}

std::uint64_t DDetectHead::param_count() const {
    std::uint64_t n = 0;
    for (const DDetectStack& s : box_branch)
        n += s.param_count();
    for (const DDetectStack& s : cls_branch)
        n += s.param_count();
    return n;
}

AnchorGrid make_anchors(std::span<const std::pair<int, int>> layer_hw,
                        std::span<const int> strides, float offset) {
    if (layer_hw.size() != strides.size())
        throw DimensionError("make_anchors: layer/stride count mismatch");
    if (layer_hw.empty())
        throw DimensionError("make_anchors: no layers");
    AnchorGrid grid;
    for (std::size_t k = 0; k < layer_hw.size(); ++k) {
        auto [h, w] = layer_hw[k];
        if (h < 1 || w < 1 || strides[k] < 1)
            throw DimensionError("make_anchors: non-positive layer dims or stride");
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                grid.points.push_back({static_cast<float>(j) + offset,
                                       static_cast<float>(i) + offset});
                grid.strides.push_back(static_cast<float>(strides[k]));
            }
    }
    return grid;
}

Box dfl_decode(std::span<const float> dist_logits, AnchorPoint anchor, float stride) {
    if (dist_logits.size() < 8 || dist_logits.size() % 4 != 0)
        throw DimensionError("dfl_decode: logits must hold 4 sides of >=2 bins");
    const int reg_max = static_cast<int>(dist_logits.size()) / 4;
    double side[4];
    for (int s = 0; s < 4; ++s) {
        std::span<const float> bins = dist_logits.subspan(s * reg_max, reg_max);
        double mx = bins[0];
        for (float v : bins)
            mx = std::max(mx, static_cast<double>(v));
        double denom = 0.0, expect = 0.0;
        for (int i = 0; i < reg_max; ++i) {
            double e = std::exp(static_cast<double>(bins[i]) - mx);
            denom += e;
            expect += e * i;
        }
        side[s] = expect / denom;
    }
    Box b;
    b.x1 = static_cast<float>((anchor.x - side[0]) * stride);
    b.y1 = static_cast<float>((anchor.y - side[1]) * stride);
    b.x2 = static_cast<float>((anchor.x + side[2]) * stride);
    b.y2 = static_cast<float>((anchor.y + side[3]) * stride);
    return b;
}

RawPrediction ddetect_forward(const DDetectHead& head, std::span<const Tensor4> features) {
    if (head.box_branch.size() != head.cls_branch.size())
        throw DimensionError("ddetect_forward: branch count mismatch");
    if (features.size() != head.box_branch.size())
        throw DimensionError("ddetect_forward: feature count mismatch");
    RawPrediction raw;
    raw.reg_max = head.reg_max;
    raw.nc = head.nc;
    for (std::size_t k = 0; k < features.size(); ++k) {
        Tensor4 box = head.box_branch[k].forward(features[k]);
        Tensor4 cls = head.cls_branch[k].forward(features[k]);
        if (box.c != 4 * head.reg_max)
            throw DimensionError("ddetect_forward: box branch channel mismatch");
        if (cls.c != head.nc)
            throw DimensionError("ddetect_forward: class branch channel mismatch");
        raw.layers.push_back(concat_channels(box, cls));
    }
    return raw;
}

std::vector<DetectBias> init_detect_bias(int nc, std::span<const int> strides, int image_size) {
    if (nc < 1 || image_size < 1)
        throw DimensionError("init_detect_bias: nc and image_size must be positive");
    std::vector<DetectBias> out;
    for (int s : strides) {
        if (s < 1 || image_size % s != 0)
            throw DimensionError("init_detect_bias: stride must divide image size");
        double cells = static_cast<double>(image_size) / s;
        DetectBias b;
        b.box = 1.0f;
        b.cls = static_cast<float>(std::log(5.0 / nc / (cells * cells)));
        out.push_back(b);
    }
    return out;
}

void apply_bias_init(DDetectHead& head, int image_size) {
    std::vector<DetectBias> biases = init_detect_bias(head.nc, head.strides, image_size);
    if (biases.size() != head.box_branch.size())
        throw DimensionError("apply_bias_init: stride count mismatch");
    for (std::size_t k = 0; k < biases.size(); ++k) {
        if (!head.box_branch[k].out.has_bias() || !head.cls_branch[k].out.has_bias())
            throw DimensionError("apply_bias_init: final projections need bias");
        std::fill(head.box_branch[k].out.bias.begin(), head.box_branch[k].out.bias.end(),
                  biases[k].box);
        std::fill(head.cls_branch[k].out.bias.begin(), head.cls_branch[k].out.bias.end(),
                  biases[k].cls);
    }
}

static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<Detection> decode_predictions(const RawPrediction& raw, const AnchorGrid& anchors,
                                          float conf_thresh) {
    if (anchors.points.size() != raw.point_count())
        throw DimensionError("decode_predictions: anchor count mismatch");
    const int dist_ch = 4 * raw.reg_max;
    std::vector<Detection> dets;
    std::vector<float> logits(dist_ch);
    std::size_t p = 0;
    for (const Tensor4& t : raw.layers) {
        if (t.c != raw.channels())
            throw DimensionError("decode_predictions: layer channel mismatch");
        for (int i = 0; i < t.h; ++i)
            for (int j = 0; j < t.w; ++j, ++p) {
                int best = 0;
                double best_score = -1.0;
                for (int c = 0; c < raw.nc; ++c) {
                    double s = sigmoid(t.at(0, dist_ch + c, i, j));
                    if (s > best_score) {
                        best_score = s;
                        best = c;
                    }
                }
                if (best_score < conf_thresh)
                    continue;
                for (int c = 0; c < dist_ch; ++c)
                    logits[c] = t.at(0, c, i, j);
                Detection d;
                d.box = dfl_decode(logits, anchors.points[p], anchors.strides[p]);
                d.score = static_cast<float>(best_score);
                d.class_id = best;
                dets.push_back(d);
            }
    }
    return dets;
}

double box_iou(const Box& a, const Box& b) {
    double iw = std::min<double>(a.x2, b.x2) - std::max<double>(a.x1, b.x1);
    double ih = std::min<double>(a.y2, b.y2) - std::max<double>(a.y1, b.y1);
    double inter = std::max(iw, 0.0) * std::max(ih, 0.0);
    double area_a = static_cast<double>(a.x2 - a.x1) * (a.y2 - a.y1);
    double area_b = static_cast<double>(b.x2 - b.x1) * (b.y2 - b.y1);
    double uni = area_a + area_b - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Detection> nms(std::vector<Detection> dets, float iou_thresh) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<bool> removed(dets.size(), false);
    std::vector<Detection> kept;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (removed[i])
            continue;
        kept.push_back(dets[i]);
        for (std::size_t j = i + 1; j < dets.size(); ++j) {
            if (removed[j] || dets[j].class_id != dets[i].class_id)
                continue;
            if (box_iou(dets[i].box, dets[j].box) > iou_thresh)
                removed[j] = true;
        }
    }
    return kept;
}

DDetectHead random_ddetect(std::span<const int> feature_ch, int nc, int reg_max,
                           std::span<const int> strides, int image_size, Rng& rng) {
    if (feature_ch.empty() || feature_ch.size() != strides.size())
        throw DimensionError("random_ddetect: feature/stride count mismatch");
    if (nc < 1 || reg_max < 2)
        throw DimensionError("random_ddetect: need nc >= 1 and reg_max >= 2");
    DDetectHead head;
    head.nc = nc;
    head.reg_max = reg_max;
    head.strides.assign(strides.begin(), strides.end());
    const int c2 = std::max({16, feature_ch[0] / 4, 4 * reg_max});
    const int c3 = std::max(feature_ch[0], std::min(2 * nc, 128));
    for (int ch : feature_ch) {
        DDetectStack box;
        box.c1 = random_conv_unit(ch, c2, 3, 1, 1, Activation::Silu, rng);
        box.c2 = random_conv_unit(c2, c2, 3, 1, 1, Activation::Silu, rng);
        box.out = random_conv(c2, 4 * reg_max, 1, 1, 0, 1, true, rng);
        head.box_branch.push_back(std::move(box));
        DDetectStack cls;
        cls.c1 = random_conv_unit(ch, c3, 3, 1, 1, Activation::Silu, rng);
        cls.c2 = random_conv_unit(c3, c3, 3, 1, 1, Activation::Silu, rng);
        cls.out = random_conv(c3, nc, 1, 1, 0, 1, true, rng);
        head.cls_branch.push_back(std::move(cls));
    }
    apply_bias_init(head, image_size);
    return head;
}

} // namespace rgelan
