#include <doctest.h>

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "helpers.hpp"
#include "rgelan/detect.hpp"

using namespace rgelan;
using testing::max_diff;

TEST_CASE("make_anchors walks layers in order, cells row-major") {
    const std::pair<int, int> hw[] = {{2, 3}, {1, 2}};
    const int strides[] = {8, 16};
    AnchorGrid g = make_anchors(hw, strides, 0.5f);
    REQUIRE(g.points.size() == 8);
    REQUIRE(g.strides.size() == 8);
    const float want[][2] = {{0.5f, 0.5f}, {1.5f, 0.5f}, {2.5f, 0.5f},
                             {0.5f, 1.5f}, {1.5f, 1.5f}, {2.5f, 1.5f},
                             {0.5f, 0.5f}, {1.5f, 0.5f}};
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(g.points[i].x == want[i][0]);
        CHECK(g.points[i].y == want[i][1]);
        CHECK(g.strides[i] == (i < 6 ? 8.0f : 16.0f));
    }

    AnchorGrid g0 = make_anchors(hw, strides, 0.0f);
    CHECK(g0.points[1].x == 1.0f);
    CHECK(g0.points[1].y == 0.0f);

    const int one_stride[] = {8};
    CHECK_THROWS_AS(make_anchors(hw, one_stride, 0.5f), DimensionError);
    CHECK_THROWS_AS(make_anchors({}, {}, 0.5f), DimensionError);
    const std::pair<int, int> bad_hw[] = {{0, 3}};
    CHECK_THROWS_AS(make_anchors(bad_hw, one_stride, 0.5f), DimensionError);
}

TEST_CASE("dfl_decode turns one-hot bin logits into exact distances") {
    // reg_max = 4; sides ordered left, top, right, bottom with bins 1, 0, 2, 3.
    std::vector<float> logits(16, 0.0f);
    logits[0 * 4 + 1] = 50.0f;
    logits[1 * 4 + 0] = 50.0f;
    logits[2 * 4 + 2] = 50.0f;
    logits[3 * 4 + 3] = 50.0f;
    Box b = dfl_decode(logits, AnchorPoint{3.5f, 2.5f}, 8.0f);
    CHECK(b.x1 == doctest::Approx((3.5 - 1) * 8).epsilon(1e-6));
    CHECK(b.y1 == doctest::Approx((2.5 - 0) * 8).epsilon(1e-6));
    CHECK(b.x2 == doctest::Approx((3.5 + 2) * 8).epsilon(1e-6));
    CHECK(b.y2 == doctest::Approx((2.5 + 3) * 8).epsilon(1e-6));
}

TEST_CASE("dfl_decode expectation properties") {
    // Flat logits put the expectation at the middle bin (reg_max-1)/2.
    std::vector<float> flat(4 * 6, 0.25f);
    Box b = dfl_decode(flat, AnchorPoint{10.0f, 10.0f}, 1.0f);
    CHECK(b.x1 == doctest::Approx(10.0 - 2.5).epsilon(1e-7));
    CHECK(b.x2 == doctest::Approx(10.0 + 2.5).epsilon(1e-7));

    // Softmax is shift invariant, so adding a constant changes nothing (up
    // to float rounding of the exponentials).
    Rng rng(70);
    std::vector<float> raw(4 * 16), shifted(4 * 16);
    fill_uniform(raw, rng, 3.0f);
    for (std::size_t i = 0; i < raw.size(); ++i)
        shifted[i] = raw[i] + 7.0f;
    Box b1 = dfl_decode(raw, AnchorPoint{4.5f, 4.5f}, 16.0f);
    Box b2 = dfl_decode(shifted, AnchorPoint{4.5f, 4.5f}, 16.0f);
    CHECK(b1.x1 == doctest::Approx(b2.x1).epsilon(1e-4));
    CHECK(b1.y1 == doctest::Approx(b2.y1).epsilon(1e-4));
    CHECK(b1.x2 == doctest::Approx(b2.x2).epsilon(1e-4));
    CHECK(b1.y2 == doctest::Approx(b2.y2).epsilon(1e-4));

    std::vector<float> four(4, 0.0f);
    CHECK_THROWS_AS(dfl_decode(four, AnchorPoint{}, 8.0f), DimensionError);
    std::vector<float> ten(10, 0.0f);
    CHECK_THROWS_AS(dfl_decode(ten, AnchorPoint{}, 8.0f), DimensionError);
}

TEST_CASE("init_detect_bias matches the closed-form priors") {
    const int strides[] = {8, 16, 32};
    std::vector<DetectBias> b = init_detect_bias(1, strides, 640);
    REQUIRE(b.size() == 3);
    for (const DetectBias& x : b)
        CHECK(x.box == 1.0f);
    CHECK(b[0].cls == doctest::Approx(std::log(5.0 / 1 / (80.0 * 80.0))).epsilon(1e-6));
    CHECK(b[1].cls == doctest::Approx(std::log(5.0 / 1 / (40.0 * 40.0))).epsilon(1e-6));
    CHECK(b[2].cls == doctest::Approx(std::log(5.0 / 1 / (20.0 * 20.0))).epsilon(1e-6));

    std::vector<DetectBias> many = init_detect_bias(80, strides, 640);
    CHECK(many[0].cls == doctest::Approx(std::log(5.0 / 80 / 6400.0)).epsilon(1e-6));

    const int bad[] = {7};
    CHECK_THROWS_AS(init_detect_bias(1, bad, 640), DimensionError);
    CHECK_THROWS_AS(init_detect_bias(0, strides, 640), DimensionError);
}

TEST_CASE("random_ddetect applies widths and bias priors") {
    Rng rng(71);
    const int ch[] = {64, 128};
    const int strides[] = {8, 16};
    DDetectHead head = random_ddetect(ch, 2, 16, strides, 64, rng);
    REQUIRE(head.layer_count() == 2);
    // Branch widths follow max(16, ch0/4, 4*reg_max) and max(ch0, min(2nc, 128)).
    CHECK(head.box_branch[0].c1.out_ch() == 64);
    CHECK(head.box_branch[0].out.out_ch() == 64); // 4 * reg_max
    CHECK(head.cls_branch[0].c1.out_ch() == 64);
    CHECK(head.cls_branch[0].out.out_ch() == 2);
    for (float v : head.box_branch[0].out.bias)
        CHECK(v == 1.0f);
    const float want_cls = static_cast<float>(std::log(5.0 / 2 / (8.0 * 8.0)));
    for (float v : head.cls_branch[0].out.bias)
        CHECK(v == want_cls);

    CHECK_THROWS_AS(random_ddetect(ch, 0, 16, strides, 64, rng), DimensionError);
    CHECK_THROWS_AS(random_ddetect(ch, 2, 1, strides, 64, rng), DimensionError);
    const int one[] = {8};
    CHECK_THROWS_AS(random_ddetect(ch, 2, 16, one, 64, rng), DimensionError);
}

TEST_CASE("ddetect_forward emits distribution plus class channels per layer") {
    Rng rng(72);
    const int ch[] = {16, 24};
    const int strides[] = {8, 16};
    DDetectHead head = random_ddetect(ch, 3, 4, strides, 64, rng);
    std::vector<Tensor4> feats;
    feats.emplace_back(1, 16, 8, 8);
    feats.emplace_back(1, 24, 4, 4);
    fill_uniform(feats[0].data, rng, 1.0f);
    fill_uniform(feats[1].data, rng, 1.0f);
    RawPrediction raw = ddetect_forward(head, feats);
    REQUIRE(raw.layers.size() == 2);
    CHECK(raw.channels() == 4 * 4 + 3);
    CHECK(raw.layers[0].c == raw.channels());
    CHECK(raw.layers[0].h == 8);
    CHECK(raw.layers[1].h == 4);
    CHECK(raw.point_count() == 64 + 16);

    // A fused head keeps the prediction within the block-fusion tolerance.
    RawPrediction fused = ddetect_forward(head.fused(), feats);
    for (int k = 0; k < 2; ++k)
        CHECK(max_diff(raw.layers[k], fused.layers[k]) <= 1e-4);
    CHECK(head.fused().param_count() < head.param_count());

    std::vector<Tensor4> short_feats;
    short_feats.emplace_back(1, 16, 8, 8);
    CHECK_THROWS_AS(ddetect_forward(head, short_feats), DimensionError);
}

TEST_CASE("decode_predictions recovers a planted cell") {
    // One 2x2 layer, stride 8, nc = 2, reg_max = 4. Only cell (i=1, j=0)
    // carries a confident class-1 logit; its box bins are one-hot at
    // l=1, t=1, r=2, b=2.
    RawPrediction raw;
    raw.reg_max = 4;
    raw.nc = 2;
    Tensor4 t(1, 18, 2, 2);
    t.at(0, 16 + 1, 1, 0) = 4.0f;
    t.at(0, 0 * 4 + 1, 1, 0) = 50.0f;
    t.at(0, 1 * 4 + 1, 1, 0) = 50.0f;
    t.at(0, 2 * 4 + 2, 1, 0) = 50.0f;
    t.at(0, 3 * 4 + 2, 1, 0) = 50.0f;
    raw.layers.push_back(t);

    const std::pair<int, int> hw[] = {{2, 2}};
    const int strides[] = {8};
    AnchorGrid anchors = make_anchors(hw, strides, 0.5f);

    std::vector<Detection> dets = decode_predictions(raw, anchors, 0.9f);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].class_id == 1);
    CHECK(dets[0].score == doctest::Approx(1.0 / (1.0 + std::exp(-4.0))).epsilon(1e-6));
    // Anchor for cell (1, 0) is (0.5, 1.5); distances (1, 1, 2, 2) at stride 8.
    CHECK(dets[0].box.x1 == doctest::Approx(-4.0).epsilon(1e-4));
    CHECK(dets[0].box.y1 == doctest::Approx(4.0).epsilon(1e-4));
    CHECK(dets[0].box.x2 == doctest::Approx(20.0).epsilon(1e-4));
    CHECK(dets[0].box.y2 == doctest::Approx(28.0).epsilon(1e-4));

    // Every other cell sits at sigmoid(0) = 0.5, so a 0.4 threshold keeps all.
    CHECK(decode_predictions(raw, anchors, 0.4f).size() == 4);
    CHECK(decode_predictions(raw, anchors, 1.0f).empty());

    AnchorGrid wrong = make_anchors(hw, strides, 0.5f);
    wrong.points.pop_back();
    wrong.strides.pop_back();
    CHECK_THROWS_AS(decode_predictions(raw, wrong, 0.5f), DimensionError);
}

TEST_CASE("decode_predictions keeps every point at zero threshold") {
    Rng rng(73);
    const int ch[] = {12};
    const int strides[] = {8};
    DDetectHead head = random_ddetect(ch, 3, 4, strides, 32, rng);
    std::vector<Tensor4> feats;
    feats.emplace_back(1, 12, 4, 4);
    fill_uniform(feats[0].data, rng, 1.0f);
    RawPrediction raw = ddetect_forward(head, feats);
    const std::pair<int, int> hw[] = {{4, 4}};
    AnchorGrid anchors = make_anchors(hw, strides, 0.5f);
    std::vector<Detection> dets = decode_predictions(raw, anchors, 0.0f);
    CHECK(dets.size() == 16);
    for (const Detection& d : dets) {
        CHECK(d.score > 0.0f);
        CHECK(d.score < 1.0f);
        CHECK(d.class_id >= 0);
        CHECK(d.class_id < 3);
        CHECK(std::isfinite(d.box.x1));
        CHECK(std::isfinite(d.box.y2));
    }
}

TEST_CASE("box_iou handles overlap, disjoint and degenerate boxes") {
    Box a{0, 0, 4, 4};
    Box b{2, 0, 6, 4};
    CHECK(box_iou(a, a) == 1.0);
    CHECK(box_iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(box_iou(b, a) == box_iou(a, b));
    CHECK(box_iou(a, Box{10, 10, 12, 12}) == 0.0);
    CHECK(box_iou(a, Box{4, 0, 8, 4}) == 0.0); // boxes only touching
    CHECK(box_iou(Box{1, 1, 1, 1}, Box{1, 1, 1, 1}) == 0.0);
}

TEST_CASE("nms keeps the strongest box per overlapping same-class group") {
    std::vector<Detection> dets;
    dets.push_back({Box{0, 0, 10, 10}, 0.9f, 0});
    dets.push_back({Box{1, 1, 11, 11}, 0.8f, 0});  // heavy overlap, same class
    dets.push_back({Box{1, 1, 11, 11}, 0.85f, 1}); // same spot, other class
    dets.push_back({Box{50, 50, 60, 60}, 0.7f, 0});
    std::vector<Detection> kept = nms(dets, 0.45f);
    REQUIRE(kept.size() == 3);
    CHECK(kept[0].score == 0.9f);
    CHECK(kept[1].score == 0.85f);
    CHECK(kept[2].score == 0.7f);
    for (std::size_t i = 1; i < kept.size(); ++i)
        CHECK(kept[i - 1].score >= kept[i].score);
}

TEST_CASE("nms suppresses strictly above the threshold") {
    // These two boxes overlap at exactly IoU 0.5.
    std::vector<Detection> dets;
    dets.push_back({Box{0, 0, 3, 2}, 0.9f, 0});
    dets.push_back({Box{1, 0, 4, 2}, 0.8f, 0});
    CHECK(nms(dets, 0.5f).size() == 2);
    CHECK(nms(dets, 0.49f).size() == 1);
}

TEST_CASE("nms breaks score ties by input order") {
    std::vector<Detection> dets;
    dets.push_back({Box{0, 0, 10, 10}, 0.8f, 0});
    dets.push_back({Box{0.5f, 0, 10.5f, 10}, 0.8f, 0});
    std::vector<Detection> kept = nms(dets, 0.45f);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].box.x1 == 0.0f);
}
