#ifndef RGELAN_DETECT_HPP
#define RGELAN_DETECT_HPP

#include <span>
#include <utility>
#include <vector>

#include "rgelan/blocks.hpp"

namespace rgelan {

struct AnchorPoint {
    float x = 0.0f, y = 0.0f;
};

// One grid-unit center per feature cell across all detection layers, with
// the pixel stride that maps it back to image coordinates.
struct AnchorGrid {
    std::vector<AnchorPoint> points;
    std::vector<float> strides;
};

struct Box {
    float x1 = 0.0f, y1 = 0.0f, x2 = 0.0f, y2 = 0.0f;
    float width() const { return x2 - x1; }
    float height() const { return y2 - y1; }
    float area() const { return width() * height(); }
};

struct Detection {
    Box box;
    float score = 0.0f;
    int class_id = 0;
};

// Per-layer head output: 4*reg_max box-distribution channels followed by nc
// class channels.
struct RawPrediction {
    std::vector<Tensor4> layers;
    int reg_max = 16;
    int nc = 1;

    int channels() const { return 4 * reg_max + nc; }
    std::uint64_t point_count() const;
};

// Per-layer prediction stack: two conv units and a plain 1x1 projection.
struct DDetectStack {
    ConvUnit c1;
    ConvUnit c2;
    ConvParams out; // biased, no BN, no activation

    Tensor4 forward(const Tensor4& x) const;
    DDetectStack fused() const;
    Shape count_ops(const Shape& in, OpCount& acc) const;
    std::uint64_t param_count() const;
};

struct DDetectHead {
    int nc = 1;
    int reg_max = 16;
    std::vector<DDetectStack> box_branch; // one stack per detection layer
    std::vector<DDetectStack> cls_branch;
    std::vector<int> strides; // nominal, recorded at build time

    int layer_count() const { return static_cast<int>(box_branch.size()); }
    DDetectHead fused() const;
    std::uint64_t param_count() const;
};

AnchorGrid make_anchors(std::span<const std::pair<int, int>> layer_hw,
                        std::span<const int> strides, float offset);

// Expectation of the per-side softmax over bins 0..reg_max-1; the box is the
// anchor center minus (l,t) and plus (r,b), scaled by the stride to pixels.
Box dfl_decode(std::span<const float> dist_logits, AnchorPoint anchor, float stride);

RawPrediction ddetect_forward(const DDetectHead& head, std::span<const Tensor4> features);

struct DetectBias {
    float box = 1.0f;
    float cls = 0.0f;
};

// Box projections start at 1.0; class projections at
// ln(5 / nc / (image_size / stride)^2), one value per layer.
std::vector<DetectBias> init_detect_bias(int nc, std::span<const int> strides, int image_size);
void apply_bias_init(DDetectHead& head, int image_size);

std::vector<Detection> decode_predictions(const RawPrediction& raw, const AnchorGrid& anchors,
                                          float conf_thresh);

// Greedy same-class suppression, descending score, stable on ties.
std::vector<Detection> nms(std::vector<Detection> dets, float iou_thresh);

// IoU that tolerates zero-area boxes (returns 0 on empty union).
double box_iou(const Box& a, const Box& b);

DDetectHead random_ddetect(std::span<const int> feature_ch, int nc, int reg_max,
                           std::span<const int> strides, int image_size, Rng& rng);

} // namespace rgelan

#endif
