#include <doctest.h>

#include <string>
#include <vector>

#include "helpers.hpp"
#include "rgelan/graph.hpp"

using namespace rgelan;
using testing::max_diff;

namespace {

// Backbone with a skip connection, two detection scales and every module kind.
const char* kFullCfg = R"(# comment line
ch: 3
nc: 2

layers:
  - [-1, 1, Conv, [8, 3, 2]]                  # 0: /2
  - [-1, 2, RepVGG, [8, 1]]                   # 1: two identity-capable blocks
  - [-1, 1, RCS, [16, 2]]                     # 2: /4
  - [-1, 1, RepNCSPELAN4, [24, 12, 6, 1]]     # 3
  - [-1, 1, ADown, [24]]                      # 4: /8
  - [-1, 1, SPPELAN, [24, 8]]                 # 5
  - [-1, 1, Upsample, [2]]                    # 6: back to /4
  - [[-1, 3], 1, Concat, [1]]                 # 7: 24 + 24 channels
  - [-1, 1, RepNCSPELAN4, [32, 16, 8, 1, rcs]] # 8
  - [[8, 5], 1, DDetect, [8]]                 # 9: strides 4 and 8
)";

const char* kTinyCfg = R"(ch: 1
nc: 3
layers:
  - [-1, 1, Conv, [4, 3, 2]]
  - [-1, 1, RepVGG, [8, 2]]
  - [-1, 1, DDetect, [4]]
)";

std::string wrap_layers(const std::string& body) {
    return "ch: 3\nnc: 2\nlayers:\n" + body;
}

int error_line(const std::string& text) {
    try {
        build_graph(parse_config(text), 64, 1);
    } catch (const ParseError& e) {
        return e.line;
    }
    return -1;
}

} // namespace

TEST_CASE("module registry lists every buildable module") {
    const auto& reg = module_registry();
    CHECK(reg.size() == 9);
    for (const char* name :
         {"ADown", "Concat", "Conv", "DDetect", "RCS", "RepNCSPELAN4", "RepVGG", "SPPELAN",
          "Upsample"})
        CHECK(known_module(name));
    CHECK_FALSE(known_module("BatchNorm"));
}

TEST_CASE("parse_config reads headers, layers, comments and keywords") {
    ModelConfig cfg = parse_config(kFullCfg);
    CHECK(cfg.ch == 3);
    CHECK(cfg.nc == 2);
    REQUIRE(cfg.layers.size() == 10);

    CHECK(cfg.layers[0].from == std::vector<int>{-1});
    CHECK(cfg.layers[0].repeats == 1);
    CHECK(cfg.layers[0].module == "Conv");
    REQUIRE(cfg.layers[0].args.size() == 3);
    CHECK(std::get<int>(cfg.layers[0].args[0]) == 8);
    CHECK(cfg.layers[0].line == 6);

    CHECK(cfg.layers[1].repeats == 2);
    CHECK(cfg.layers[7].from == std::vector<int>{-1, 3});
    CHECK(std::get<std::string>(cfg.layers[8].args[4]) == "rcs");
    CHECK(cfg.layers[9].from == std::vector<int>{8, 5});
}

TEST_CASE("parse_config rejects malformed input with line numbers") {
    auto line_of = [](const std::string& text) {
        try {
            parse_config(text);
        } catch (const ParseError& e) {
            return e.line;
        }
        return -1;
    };

    CHECK(line_of("nc: 1\nlayers:\n  - [-1, 1, Conv, [4, 1, 1]]\n") > 0); // no ch
    CHECK(line_of("ch: 1\nlayers:\n  - [-1, 1, Conv, [4, 1, 1]]\n") > 0); // no nc
    CHECK(line_of("ch: 0\nnc: 1\nlayers:\n  - [-1, 1, Conv, [4, 1, 1]]\n") > 0);
    CHECK(line_of("ch: x\nnc: 1\nlayers:\n") == 1);
    CHECK(line_of("speed: 9\nch: 1\nnc: 1\nlayers:\n") == 1); // unknown key
    CHECK(line_of("ch: 1\nnc: 1\nlayers: now\n") == 3);       // inline value
    CHECK(line_of("ch: 1\nnc: 1\n") > 0);                     // no layers at all

    const std::string head = "ch: 1\nnc: 1\nlayers:\n";
    CHECK(line_of(head + "  [-1, 1, Conv, [4]]\n") == 4);          // missing dash
    CHECK(line_of(head + "  - [-1, 1, Conv, [4]] tail\n") == 4);   // trailing text
    CHECK(line_of(head + "  - [-1, 1, Conv]\n") == 4);             // 3 fields
    CHECK(line_of(head + "  - [-1, 0, Conv, [4]]\n") == 4);        // repeats < 1
    CHECK(line_of(head + "  - [-1, 1, Wat, [4]]\n") == 4);         // unknown module
    CHECK(line_of(head + "  - [-1, 1, Conv, [4.5]]\n") == 4);      // float arg
    CHECK(line_of(head + "  - [-1, 1, Conv, [[4]]]\n") == 4);      // nested arg
    CHECK(line_of(head + "  - [[], 1, Conv, [4]]\n") == 4);        // empty from list
    CHECK(line_of(head + "  - [[x], 1, Conv, [4]]\n") == 4);       // non-int from
    CHECK(line_of(head + "  - [-1, 1, 7, [4]]\n") == 4);           // module not a name
    CHECK(line_of(head + "  - [-1, 1, Conv, [4, 1, 1]\n") == 4);   // unclosed bracket
}

TEST_CASE("build_graph infers shapes along the full topology") {
    ModelGraph g = build_graph(parse_config(kFullCfg), 64, 7);
    REQUIRE(g.nodes.size() == 10);

    CHECK(g.nodes[0].name == "0_Conv");
    CHECK(g.nodes[0].from == std::vector<int>{-1});
    CHECK(g.nodes[0].out_shape == Shape{8, 32, 32});
    CHECK(g.nodes[1].out_shape == Shape{8, 32, 32});
    CHECK(g.nodes[1].seq.size() == 2); // repeats build sequential blocks
    CHECK(g.nodes[2].out_shape == Shape{16, 16, 16});
    CHECK(g.nodes[3].out_shape == Shape{24, 16, 16});
    CHECK(g.nodes[4].out_shape == Shape{24, 8, 8});
    CHECK(g.nodes[5].out_shape == Shape{24, 8, 8});
    CHECK(g.nodes[6].out_shape == Shape{24, 16, 16});
    CHECK(g.nodes[7].from == std::vector<int>{6, 3}); // -1 resolved
    CHECK(g.nodes[7].out_shape == Shape{48, 16, 16});
    CHECK(g.nodes[8].out_shape == Shape{32, 16, 16});

    CHECK(g.detect_index == 9);
    CHECK(g.detect_strides == std::vector<int>{4, 8});
    const auto& head = std::get<DDetectHead>(g.nodes[9].seq[0]);
    CHECK(head.nc == 2);
    CHECK(head.reg_max == 8);

    // RepVGG at matching width and stride 1 carries the identity branch.
    const auto& rep = std::get<RepVGGBlock>(g.nodes[1].seq[0]);
    CHECK(std::get<RepVGGBlockTrain>(rep.form).bn_id.has_value());
    // RCS growing 8 -> 16 cannot, and uses two trained halves.
    const auto& rcs = std::get<RcsBlock>(g.nodes[2].seq[0]);
    CHECK(rcs.half_b.has_value());
}

TEST_CASE("build_graph seeds weights deterministically") {
    ModelConfig cfg = parse_config(kTinyCfg);
    ModelGraph a = build_graph(cfg, 32, 11);
    ModelGraph b = build_graph(cfg, 32, 11);
    ModelGraph c = build_graph(cfg, 32, 12);

    Tensor4 x(1, 1, 32, 32);
    Rng rng(99);
    fill_uniform(x.data, rng, 1.0f);
    RawPrediction ra = model_forward(a, x).raw;
    RawPrediction rb = model_forward(b, x).raw;
    RawPrediction rc = model_forward(c, x).raw;
    CHECK(max_diff(ra.layers[0], rb.layers[0]) == 0.0);
    CHECK(max_diff(ra.layers[0], rc.layers[0]) > 0.0);
}

TEST_CASE("build_graph validates wiring and placement") {
    // Forward and out-of-range references.
    CHECK(error_line(wrap_layers("  - [2, 1, Conv, [4, 1, 1]]\n")) == 4);
    CHECK(error_line(wrap_layers("  - [-2, 1, Conv, [4, 1, 1]]\n")) == 4);
    CHECK(error_line(wrap_layers("  - [-1, 1, Conv, [4, 1, 1]]\n"
                                 "  - [-3, 1, Conv, [4, 1, 1]]\n")) == 5);

    // Nothing may follow the detection head.
    CHECK(error_line(wrap_layers("  - [-1, 1, Conv, [4, 3, 2]]\n"
                                 "  - [-1, 1, DDetect, []]\n"
                                 "  - [-1, 1, Conv, [4, 1, 1]]\n")) == 6);

    // A graph without DDetect builds but cannot run detection.
    ModelGraph g = build_graph(parse_config(wrap_layers("  - [-1, 1, Conv, [4, 3, 2]]\n")), 64, 1);
    CHECK(g.detect_index == -1);
    Tensor4 x(1, 3, 64, 64);
    CHECK_THROWS_AS(model_forward(g, x), DimensionError);
}

TEST_CASE("build_graph validates module arguments") {
    CHECK(error_line(wrap_layers("  - [-1, 1, Conv, [4, 3]]\n")) == 4);         // arity
    CHECK(error_line(wrap_layers("  - [-1, 1, Conv, [4, 3, 2, rcs]]\n")) == 4); // keyword
    CHECK(error_line(wrap_layers("  - [[-1, -1], 1, Conv, [4, 3, 2]]\n")) == 4); // sources
    CHECK(error_line(wrap_layers("  - [-1, 1, RCS, [7, 1]]\n")) == 4);       // odd out_ch
    CHECK(error_line(wrap_layers("  - [-1, 1, RCS, [4, 1]]\n")) == 4);       // odd in (3)
    CHECK(error_line(wrap_layers("  - [-1, 1, Conv, [8, 3, 2]]\n"
                                 "  - [-1, 1, RCS, [16, 2, id]]\n")) == 5);  // id needs s=1
    CHECK(error_line(wrap_layers("  - [-1, 1, Upsample, [0]]\n")) == 4);
    CHECK(error_line(wrap_layers("  - [-1, 2, Upsample, [2]]\n")) == 4);     // repeats
    CHECK(error_line(wrap_layers("  - [-1, 1, Concat, [1]]\n")) == 4);       // one source
    CHECK(error_line(wrap_layers("  - [-1, 1, Conv, [4, 3, 2]]\n"
                                 "  - [[-1, 0], 1, Concat, [0]]\n")) == 5);  // bad axis
    CHECK(error_line(wrap_layers("  - [-1, 1, Conv, [4, 3, 2]]\n"
                                 "  - [-1, 1, DDetect, [1]]\n")) == 5);      // reg_max < 2
    CHECK(error_line(wrap_layers("  - [-1, 1, Conv, [4, 3, 2]]\n"
                                 "  - [-1, 1, Upsample, [3]]\n"
                                 "  - [-1, 1, DDetect, []]\n")) == 6); // 96 not a divisor

    // Concat sources must agree on spatial size.
    CHECK(error_line(wrap_layers("  - [-1, 1, Conv, [4, 3, 2]]\n"
                                 "  - [-1, 1, Conv, [4, 3, 2]]\n"
                                 "  - [[-1, 0], 1, Concat, []]\n")) == 6);

    // Shape failures inside a block surface as ParseError at the layer line.
    CHECK(error_line(wrap_layers("  - [-1, 1, Conv, [8, 3, 1]]\n"
                                 "  - [-1, 1, SPPELAN, [8, 4]]\n")) == -1); // 64 >= 5 fine
    CHECK(error_line("ch: 3\nnc: 2\nlayers:\n"
                     "  - [-1, 1, ADown, [4]]\n") == 4); // 3 input channels are odd
}

TEST_CASE("RCS id variant keeps one half untouched") {
    ModelGraph g = build_graph(parse_config(wrap_layers("  - [-1, 1, Conv, [8, 3, 2]]\n"
                                                        "  - [-1, 1, RCS, [8, 1, id]]\n")),
                               32, 3);
    const auto& rcs = std::get<RcsBlock>(g.nodes[1].seq[0]);
    CHECK_FALSE(rcs.half_b.has_value());
    CHECK(g.nodes[1].out_shape == Shape{8, 16, 16});
}

TEST_CASE("count_graph totals the per-node costs and skips wiring") {
    ModelGraph g = build_graph(parse_config(kFullCfg), 64, 5);
    AccountingReport r = count_graph(g);
    REQUIRE(r.nodes.size() == 10);
    CHECK(r.image_size == 64);
    CHECK_FALSE(r.fused);

    std::uint64_t params = 0;
    OpCount ops;
    for (const NodeCost& n : r.nodes) {
        params += n.params;
        ops += n.ops;
    }
    CHECK(params == r.total_params);
    CHECK(ops.madds == r.total_ops.madds);
    CHECK(ops.flops() == r.total_flops());

    // Wiring nodes cost nothing; their shapes still flow through.
    CHECK(r.nodes[6].params == 0);
    CHECK(r.nodes[6].ops.flops() == 0.0);
    CHECK(r.nodes[7].params == 0);
    CHECK(r.nodes[7].out_shape == Shape{48, 16, 16});
    for (std::size_t i = 0; i < r.nodes.size(); ++i)
        CHECK(r.nodes[i].out_shape == g.nodes[i].out_shape);

    // Fusing shrinks both parameters and raw work.
    fuse_graph(g);
    AccountingReport f = count_graph(g);
    CHECK(f.fused);
    CHECK(f.total_params < r.total_params);
    CHECK(f.total_flops() < r.total_flops());
}

TEST_CASE("fuse_graph preserves predictions and is idempotent") {
    ModelGraph g = build_graph(parse_config(kFullCfg), 64, 9);
    Tensor4 x(1, 3, 64, 64);
    Rng rng(42);
    fill_uniform(x.data, rng, 1.0f);
    ForwardResult before = model_forward(g, x);

    fuse_graph(g);
    CHECK(g.fused);
    ForwardResult after = model_forward(g, x);
    REQUIRE(before.raw.layers.size() == after.raw.layers.size());
    for (std::size_t k = 0; k < before.raw.layers.size(); ++k)
        CHECK(max_diff(before.raw.layers[k], after.raw.layers[k]) <= 1e-4);

    // A second fusion pass must leave the numbers untouched.
    fuse_graph(g);
    ForwardResult again = model_forward(g, x);
    for (std::size_t k = 0; k < after.raw.layers.size(); ++k)
        CHECK(max_diff(after.raw.layers[k], again.raw.layers[k]) == 0.0);
}

TEST_CASE("model_forward wires anchors and features from actual shapes") {
    ModelGraph g = build_graph(parse_config(kFullCfg), 64, 21);
    Tensor4 x(1, 3, 64, 64);
    ForwardResult r = model_forward(g, x);
    REQUIRE(r.features.size() == 2);
    CHECK(r.features[0].c == 32);
    CHECK(r.features[0].h == 16);
    CHECK(r.features[1].c == 24);
    CHECK(r.features[1].h == 8);
    CHECK(r.raw.point_count() == 16 * 16 + 8 * 8);
    REQUIRE(r.anchors.points.size() == r.raw.point_count());
    CHECK(r.anchors.strides.front() == 4.0f);
    CHECK(r.anchors.strides.back() == 8.0f);
    CHECK(r.anchors.points.front().x == 0.5f);

    // Anchors follow the input size, not the build-time nominal size.
    Tensor4 big(1, 3, 128, 128);
    ForwardResult rb = model_forward(g, big);
    CHECK(rb.raw.point_count() == 32 * 32 + 16 * 16);
    CHECK(rb.anchors.strides.front() == 4.0f);

    Tensor4 wrong(1, 2, 64, 64);
    CHECK_THROWS_AS(model_forward(g, wrong), DimensionError);
}

TEST_CASE("build_graph rejects a non-positive image size") {
    CHECK_THROWS_AS(build_graph(parse_config(kTinyCfg), 0, 1), DimensionError);
}
