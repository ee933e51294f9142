#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rgelan/eval.hpp"
#include "rgelan/graph.hpp"
#include "rgelan/weights.hpp"

using namespace rgelan;

namespace {

struct GraphFlags {
    std::string cfg_path;
    int size = 640;
    std::uint32_t seed = 0;
    std::string weights;
    bool fused = false;
    bool load_fused = false;
};

void add_graph_flags(CLI::App* cmd, GraphFlags& f, bool positional_cfg = true) {
    if (positional_cfg)
        cmd->add_option("cfg", f.cfg_path, "model config file")->required();
    cmd->add_option("--size", f.size, "build-time input edge length")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--seed", f.seed, "weight init seed");
    cmd->add_option("--weights", f.weights, "RGW1 weights file to load");
    cmd->add_flag("--fused", f.fused, "fold BN and reparameterize before running");
    cmd->add_flag("--load-fused", f.load_fused,
                  "weights file holds fused-form state (implies --fused)");
}

ModelGraph make_graph(const GraphFlags& f) {
    ModelGraph g = build_graph(load_config(f.cfg_path), f.size, f.seed);
    if (f.load_fused) {
        fuse_graph(g);
        if (!f.weights.empty())
            load_weights(g, f.weights);
    } else {
        if (!f.weights.empty())
            load_weights(g, f.weights);
        if (f.fused)
            fuse_graph(g);
    }
    return g;
}

std::string shape_str(const Shape& s) {
    if (s == Shape{})
        return "-";
    return std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

std::string join_from(const std::vector<int>& from) {
    std::string out;
    for (std::size_t i = 0; i < from.size(); ++i) {
        if (i)
            out += ",";
        out += from[i] < 0 ? "img" : std::to_string(from[i]);
    }
    return out;
}

void print_build_table(const ModelGraph& g) {
    const AccountingReport r = count_graph(g);
    std::printf("%-4s %-20s %-10s %-4s %-13s %12s\n", "idx", "node", "from", "rep", "out",
                "params");
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const GraphNode& n = g.nodes[i];
        std::printf("%-4zu %-20s %-10s %-4zu %-13s %12llu\n", i, n.name.c_str(),
                    join_from(n.from).c_str(), n.seq.size(), shape_str(n.out_shape).c_str(),
                    static_cast<unsigned long long>(r.nodes[i].params));
    }
    std::printf("total params: %llu (%.2f M)\n",
                static_cast<unsigned long long>(r.total_params), r.total_params / 1e6);
}

void print_cost_table(const ModelGraph& g) {
    const AccountingReport r = count_graph(g);
    std::printf("input %dx%d, %s weights\n", r.image_size, r.image_size,
                r.fused ? "fused" : "unfused");
    std::printf("%-20s %-13s %12s %16s %16s\n", "node", "out", "params", "madds", "flops");
    for (const NodeCost& c : r.nodes)
        std::printf("%-20s %-13s %12llu %16llu %16.0f\n", c.name.c_str(),
                    shape_str(c.out_shape).c_str(), static_cast<unsigned long long>(c.params),
                    static_cast<unsigned long long>(c.ops.madds), c.ops.flops());
    std::printf("total params: %llu (%.2f M)\n",
                static_cast<unsigned long long>(r.total_params), r.total_params / 1e6);
    std::printf("total flops:  %.0f (%.1f GFLOPs)\n", r.total_flops(), r.total_flops() / 1e9);
}

int run_fuse_check(const GraphFlags& f) {
    ModelGraph train = build_graph(load_config(f.cfg_path), f.size, f.seed);
    if (!f.weights.empty())
        load_weights(train, f.weights);
    Rng rng(f.seed + 1);
    Tensor4 image(1, train.ch, f.size, f.size);
    fill_uniform(image.data, rng, 1.0f);

    ForwardResult before = model_forward(train, image);
    ModelGraph fused = train;
    fuse_graph(fused);
    ForwardResult after = model_forward(fused, image);

    double max_diff = 0.0;
    for (std::size_t k = 0; k < before.raw.layers.size(); ++k)
        for (std::size_t i = 0; i < before.raw.layers[k].size(); ++i)
            max_diff = std::max(max_diff,
                                std::abs(static_cast<double>(before.raw.layers[k].data[i]) -
                                         after.raw.layers[k].data[i]));

    ModelGraph twice = fused;
    fuse_graph(twice);
    bool idempotent = true;
    for (std::size_t n = 0; n < fused.nodes.size() && idempotent; ++n) {
        auto a = node_state(fused.nodes[n]);
        auto b = node_state(twice.nodes[n]);
        if (a.size() != b.size()) {
            idempotent = false;
            break;
        }
        for (std::size_t s = 0; s < a.size() && idempotent; ++s) {
            if (a[s].size() != b[s].size()) {
                idempotent = false;
                break;
            }
            for (std::size_t i = 0; i < a[s].size(); ++i)
                if (a[s][i] != b[s][i]) {
                    idempotent = false;
                    break;
                }
        }
    }

    const AccountingReport rt = count_graph(train);
    const AccountingReport rf = count_graph(fused);
    std::printf("pre-fusion:  %llu params, %.0f flops\n",
                static_cast<unsigned long long>(rt.total_params), rt.total_flops());
    std::printf("post-fusion: %llu params, %.0f flops\n",
                static_cast<unsigned long long>(rf.total_params), rf.total_flops());
    std::printf("max output delta: %.3g (tolerance 1e-4)\n", max_diff);
    std::printf("second fusion is a no-op: %s\n", idempotent ? "yes" : "NO");
    const bool ok = max_diff <= 1e-4 && idempotent;
    std::printf("fuse check: %s\n", ok ? "PASS" : "FAIL");
    return ok ? 0 : 1;
}

// ---- selfcheck: quick offline oracle checks over the numeric kernels ----

int checks_failed = 0;

void check(bool ok, const std::string& name) {
    std::printf("%s - %s\n", ok ? "ok  " : "FAIL", name.c_str());
    if (!ok)
        ++checks_failed;
}

void selfcheck_conv() {
    // 1x1 identity kernel must reproduce its input.
    Tensor4 x(1, 2, 3, 3);
    for (std::size_t i = 0; i < x.size(); ++i)
        x.data[i] = static_cast<float>(i) * 0.25f - 1.0f;
    ConvParams id;
    id.weight = Tensor4(2, 2, 1, 1);
    id.weight.at(0, 0, 0, 0) = 1.0f;
    id.weight.at(1, 1, 0, 0) = 1.0f;
    Tensor4 y = conv2d(x, id);
    bool ok = y.same_shape(x);
    for (std::size_t i = 0; ok && i < x.size(); ++i)
        ok = y.data[i] == x.data[i];
    check(ok, "conv2d reproduces input through an identity kernel");

    // Hand-computed 2x2/3x3 window.
    Tensor4 x2(1, 1, 2, 2);
    x2.data = {1.0f, 2.0f, 3.0f, 4.0f};
    ConvParams sum;
    sum.weight = Tensor4(1, 1, 2, 2, 1.0f);
    Tensor4 y2 = conv2d(x2, sum);
    check(y2.h == 1 && y2.w == 1 && y2.data[0] == 10.0f, "conv2d sums a 2x2 window to 10");
}

void selfcheck_fusion() {
    Rng rng(7);
    ConvParams conv = random_conv(3, 4, 3, 1, 1, 1, false, rng);
    BnParams bn = random_bn(4, rng);
    Tensor4 x(1, 3, 5, 5);
    fill_uniform(x.data, rng, 1.0f);
    Tensor4 ref = batchnorm_infer(conv2d(x, conv), bn);
    Tensor4 got = conv2d(x, fuse_conv_bn(conv, bn));
    double diff = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i)
        diff = std::max(diff, std::abs(static_cast<double>(ref.data[i]) - got.data[i]));
    check(diff <= 1e-5, "conv+BN fold matches the unfused pair");

    RepVGGBlockTrain block = random_repvgg_train(4, 4, 1, 1, true, rng);
    RepVGGBlockDeploy deploy = reparameterize(block);
    Tensor4 x2(1, 4, 6, 6);
    fill_uniform(x2.data, rng, 1.0f);
    Tensor4 a = repvgg_forward(block, x2);
    Tensor4 b = repvgg_forward(deploy, x2);
    diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        diff = std::max(diff, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    check(diff <= 1e-5, "reparameterized RepVGG matches its three-branch form");
}

void selfcheck_shuffle() {
    Tensor4 x(1, 6, 1, 1);
    for (int c = 0; c < 6; ++c)
        x.at(0, c, 0, 0) = static_cast<float>(c);
    Tensor4 y = channel_shuffle(x, 2);
    const float want[6] = {0, 3, 1, 4, 2, 5};
    bool ok = true;
    for (int c = 0; c < 6; ++c)
        ok = ok && y.at(0, c, 0, 0) == want[c];
    check(ok, "channel shuffle interleaves the two groups");
}

void selfcheck_decode() {
    // One-hot bin logits make the softmax expectation exact.
    const int reg_max = 4;
    std::vector<float> logits(4 * reg_max, -30.0f);
    logits[0 * reg_max + 1] = 30.0f;  // l = 1
    logits[1 * reg_max + 2] = 30.0f;  // t = 2
    logits[2 * reg_max + 3] = 30.0f;  // r = 3
    logits[3 * reg_max + 0] = 30.0f;  // b = 0
    Box b = dfl_decode(logits, AnchorPoint{4.5f, 4.5f}, 2.0f);
    bool ok = std::abs(b.x1 - 7.0f) < 1e-4 && std::abs(b.y1 - 5.0f) < 1e-4 &&
              std::abs(b.x2 - 15.0f) < 1e-4 && std::abs(b.y2 - 9.0f) < 1e-4;
    check(ok, "dfl decode recovers one-hot side distances");

    Box p{0, 0, 4, 4}, q{2, 0, 6, 4};
    check(std::abs(iou_xyxy(p, q) - 1.0 / 3.0) < 1e-12, "iou of half-overlapping squares is 1/3");

    std::vector<Detection> dets{{{0, 0, 4, 4}, 0.9f, 0}, {{0.5f, 0, 4.5f, 4}, 0.8f, 0},
                                {{0, 0, 4, 4}, 0.7f, 1}};
    std::vector<Detection> kept = nms(dets, 0.45f);
    check(kept.size() == 2 && kept[0].score == 0.9f && kept[1].class_id == 1,
          "nms suppresses same-class duplicates only");
}

void selfcheck_metrics() {
    // Planted fixture: 4 matched detections and one disjoint extra over 5
    // ground-truth boxes -> P = R = 0.8 and AP = 0.8.
    std::vector<LabeledBox> gts;
    for (int i = 0; i < 5; ++i)
        gts.push_back({0, Box{static_cast<float>(10 * i), 0, static_cast<float>(10 * i + 8), 8}});
    std::vector<Detection> dets;
    for (int i = 0; i < 4; ++i)
        dets.push_back({gts[i].box, 0.9f - 0.05f * i, 0});
    dets.push_back({Box{80, 80, 88, 88}, 0.7f, 0});
    std::vector<char> tp = match_detections(dets, gts, 0.5);
    std::uint64_t tp_count = 0;
    for (char t : tp)
        tp_count += t;
    PrMetrics pr = pr_metrics(tp_count, dets.size() - tp_count, gts.size());
    check(std::abs(pr.precision - 0.8) < 1e-12 && std::abs(pr.recall - 0.8) < 1e-12,
          "precision and recall on the planted fixture are 0.8");
    std::vector<std::pair<float, char>> scored;
    for (std::size_t i = 0; i < dets.size(); ++i)
        scored.emplace_back(dets[i].score, tp[i]);
    check(std::abs(average_precision(scored, gts.size()) - 0.8) < 1e-12,
          "average precision on the planted fixture is 0.8");
}

void selfcheck_graph() {
    const std::string cfg_text = "ch: 1\n"
                                 "nc: 2\n"
                                 "layers:\n"
                                 "  - [-1, 1, Conv, [8, 3, 2]]\n"
                                 "  - [-1, 1, RepVGG, [8, 1]]\n"
                                 "  - [-1, 1, ADown, [16]]\n"
                                 "  - [-1, 1, SPPELAN, [16, 8]]\n"
                                 "  - [[1, 3], 1, DDetect, [4]]\n";
    ModelGraph g = build_graph(parse_config(cfg_text), 32, 5);
    Rng rng(11);
    Tensor4 img(1, 1, 32, 32);
    fill_uniform(img.data, rng, 0.5f);
    ForwardResult a = model_forward(g, img);
    ModelGraph f = g;
    fuse_graph(f);
    ForwardResult b = model_forward(f, img);
    double diff = 0.0;
    for (std::size_t k = 0; k < a.raw.layers.size(); ++k)
        for (std::size_t i = 0; i < a.raw.layers[k].size(); ++i)
            diff = std::max(diff, std::abs(static_cast<double>(a.raw.layers[k].data[i]) -
                                           b.raw.layers[k].data[i]));
    check(diff <= 1e-4, "toy graph forward agrees before and after fusion");

    const std::string tmp = "/tmp/rgelan_selfcheck.rgw";
    save_weights(g, tmp);
    ModelGraph h = build_graph(parse_config(cfg_text), 32, 999);
    load_weights(h, tmp);
    ForwardResult c = model_forward(h, img);
    bool same = true;
    for (std::size_t k = 0; k < a.raw.layers.size() && same; ++k)
        for (std::size_t i = 0; i < a.raw.layers[k].size(); ++i)
            if (a.raw.layers[k].data[i] != c.raw.layers[k].data[i]) {
                same = false;
                break;
            }
    std::remove(tmp.c_str());
    check(same, "weights round-trip reproduces the forward pass exactly");
}

int run_selfcheck() {
    selfcheck_conv();
    selfcheck_fusion();
    selfcheck_shuffle();
    selfcheck_decode();
    selfcheck_metrics();
    selfcheck_graph();
    if (checks_failed == 0) {
        std::printf("selfcheck: all checks passed\n");
        return 0;
    }
    std::printf("selfcheck: %d check(s) FAILED\n", checks_failed);
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"build, profile, fuse and evaluate RepVGG/GELAN-style detection graphs"};
    app.require_subcommand(1);

    GraphFlags build_f, flops_f, fuse_f, detect_f, eval_f;
    std::string save_weights_path;
    bool fuse_check = false;
    std::string image_path;
    float conf = 0.25f, iou = 0.45f;
    EvalOptions eopt;
    std::string eval_out;

    CLI::App* cmd_build = app.add_subcommand("build", "construct a graph and print its layout");
    add_graph_flags(cmd_build, build_f);
    cmd_build->add_option("--save-weights", save_weights_path, "write RGW1 weights here");

    CLI::App* cmd_flops = app.add_subcommand("flops", "per-node parameter and FLOP breakdown");
    add_graph_flags(cmd_flops, flops_f);

    CLI::App* cmd_fuse = app.add_subcommand("fuse", "reparameterize a graph");
    add_graph_flags(cmd_fuse, fuse_f);
    cmd_fuse->add_flag("--check", fuse_check,
                       "verify fused outputs match and fusion is idempotent");
    cmd_fuse->add_option("--save-weights", save_weights_path,
                         "write fused RGW1 weights here");

    CLI::App* cmd_detect = app.add_subcommand("detect", "run detection on one PGM image");
    add_graph_flags(cmd_detect, detect_f);
    cmd_detect->add_option("image", image_path, "input image (binary PGM)")->required();
    cmd_detect->add_option("--conf", conf, "score threshold");
    cmd_detect->add_option("--iou", iou, "NMS IoU threshold");

    CLI::App* cmd_self = app.add_subcommand("selfcheck", "run built-in numeric oracle checks");

    CLI::App* cmd_eval = app.add_subcommand("eval", "score detections against a dataset split");
    cmd_eval->add_option("--data", eopt.data_dir, "split directory with images/ and labels/")
        ->required();
    add_graph_flags(cmd_eval, eval_f, false);
    cmd_eval->add_option("--cfg", eval_f.cfg_path, "model config file");
    cmd_eval->add_option("--pred", eopt.pred_dir,
                         "directory of precomputed '<stem>.txt' detections");
    cmd_eval->add_option("--conf", eopt.conf, "score threshold");
    cmd_eval->add_option("--iou-nms", eopt.iou_nms, "NMS IoU threshold");
    cmd_eval->add_option("--iou-match", eopt.iou_match, "matching IoU for TP/AP50");
    cmd_eval->add_option("--out", eval_out, "write the JSON report here");

    try {
        app.parse(argc, argv);

        if (cmd_build->parsed()) {
            ModelGraph g = make_graph(build_f);
            print_build_table(g);
            if (!save_weights_path.empty()) {
                save_weights(g, save_weights_path);
                std::printf("weights written to %s\n", save_weights_path.c_str());
            }
        } else if (cmd_flops->parsed()) {
            print_cost_table(make_graph(flops_f));
        } else if (cmd_fuse->parsed()) {
            if (fuse_check)
                return run_fuse_check(fuse_f);
            fuse_f.fused = true;
            ModelGraph g = make_graph(fuse_f);
            print_cost_table(g);
            if (!save_weights_path.empty()) {
                save_weights(g, save_weights_path);
                std::printf("fused weights written to %s\n", save_weights_path.c_str());
            }
        } else if (cmd_detect->parsed()) {
            Tensor4 img = load_pgm(image_path);
            ModelGraph g = make_graph(detect_f);
            ForwardResult fr = model_forward(g, img);
            std::vector<Detection> dets =
                nms(decode_predictions(fr.raw, fr.anchors, conf), iou);
            for (const Detection& d : dets)
                std::printf("%s\n", format_detection_line(d).c_str());
        } else if (cmd_self->parsed()) {
            return run_selfcheck();
        } else if (cmd_eval->parsed()) {
            ModelGraph g;
            const ModelGraph* gp = nullptr;
            if (!eval_f.cfg_path.empty()) {
                g = make_graph(eval_f);
                gp = &g;
            }
            EvalReport report = run_eval(gp, eopt);
            std::fputs(report_table(report).c_str(), stdout);
            if (!eval_out.empty()) {
                std::ofstream out(eval_out, std::ios::binary);
                if (!out)
                    throw FormatError("cannot open report file: " + eval_out);
                out << report_json(report);
                std::printf("report written to %s\n", eval_out.c_str());
            }
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
