#include "rgelan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rgelan/errors.hpp"

namespace fs = std::filesystem;

namespace rgelan {

Box denormalize_box(double cx, double cy, double w, double h, int img_w, int img_h) {
    Box b;
    b.x1 = static_cast<float>((cx - w / 2.0) * img_w);
    b.y1 = static_cast<float>((cy - h / 2.0) * img_h);
    b.x2 = static_cast<float>((cx + w / 2.0) * img_w);
    b.y2 = static_cast<float>((cy + h / 2.0) * img_h);
    return b;
}

namespace {

std::vector<std::string> tokenize(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    std::string tok;
    while (in >> tok)
        out.push_back(tok);
    return out;
}

int parse_int_tok(const std::string& tok, int line, const char* what) {
    std::size_t pos = 0;
    int v = 0;
    try {
        v = std::stoi(tok, &pos);
    } catch (const std::exception&) {
        throw ParseError(line, std::string(what) + " is not an integer: '" + tok + "'");
    }
    if (pos != tok.size())
        throw ParseError(line, std::string(what) + " is not an integer: '" + tok + "'");
    return v;
}

double parse_num_tok(const std::string& tok, int line, const char* what) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &pos);
    } catch (const std::exception&) {
        throw ParseError(line, std::string(what) + " is not a number: '" + tok + "'");
    }
    if (pos != tok.size() || !std::isfinite(v))
        throw ParseError(line, std::string(what) + " is not a finite number: '" + tok + "'");
    return v;
}

} // namespace

std::vector<LabeledBox> parse_labels(const std::string& text, int img_w, int img_h) {
    if (img_w < 1 || img_h < 1)
        throw DimensionError("parse_labels: image size must be positive");
    std::vector<LabeledBox> out;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::vector<std::string> tok = tokenize(raw);
        if (tok.empty())
            continue;
        if (tok.size() != 5)
            throw ParseError(line, "label wants 'class_id cx cy w h', got " +
                                       std::to_string(tok.size()) + " fields");
        LabeledBox lb;
        lb.class_id = parse_int_tok(tok[0], line, "class_id");
        if (lb.class_id < 0)
            throw ParseError(line, "class_id must be non-negative");
        double v[4];
        static const char* names[4] = {"cx", "cy", "w", "h"};
        for (int i = 0; i < 4; ++i) {
            v[i] = parse_num_tok(tok[i + 1], line, names[i]);
            if (v[i] < 0.0 || v[i] > 1.0)
                throw ParseError(line, std::string(names[i]) + " must lie in [0, 1]");
        }
        if (v[2] <= 0.0 || v[3] <= 0.0)
            throw ParseError(line, "box width and height must be positive");
        lb.box = denormalize_box(v[0], v[1], v[2], v[3], img_w, img_h);
        out.push_back(lb);
    }
    return out;
}

std::vector<LabeledBox> load_label_file(const std::string& path, int img_w, int img_h) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        return {}; // no label file: image without objects
    std::ostringstream buf;
    buf << f.rdbuf();
    try {
        return parse_labels(buf.str(), img_w, img_h);
    } catch (const ParseError& e) {
        throw ParseError(e.line, path + ": " + e.what());
    }
}

namespace {

// Reads the next PGM header token, skipping whitespace and '#' comments.
int pgm_header_int(std::istream& in, const std::string& path) {
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
        } else if (!std::isspace(c)) {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c))
        throw FormatError(path + ": malformed PGM header");
    long v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        if (v > 1 << 24)
            throw FormatError(path + ": PGM header value out of range");
        c = in.get();
    }
    if (c != EOF)
        in.unget();
    return static_cast<int>(v);
}

} // namespace

Tensor4 load_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw FormatError("cannot open image: " + path);
    char magic[2];
    if (!f.read(magic, 2) || magic[0] != 'P' || magic[1] != '5')
        throw FormatError(path + ": not a binary (P5) PGM file");
    const int w = pgm_header_int(f, path);
    const int h = pgm_header_int(f, path);
    const int maxval = pgm_header_int(f, path);
    if (w < 1 || h < 1)
        throw FormatError(path + ": non-positive PGM dimensions");
    if (maxval != 255)
        throw FormatError(path + ": only maxval 255 is supported, got " +
                          std::to_string(maxval));
    int sep = f.get();
    if (sep == EOF || !std::isspace(sep))
        throw FormatError(path + ": missing whitespace after PGM header");
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
    if (!f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw FormatError(path + ": truncated PGM pixel data");
    Tensor4 img(1, 1, h, w);
    for (std::size_t i = 0; i < raw.size(); ++i)
        img.data[i] = static_cast<float>(raw[i]) / 255.0f;
    return img;
}

void save_pgm(const Tensor4& image, const std::string& path) {
    if (image.n != 1 || image.c != 1)
        throw DimensionError("save_pgm: image must be (1, 1, h, w)");
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw FormatError("cannot open image for writing: " + path);
    f << "P5\n" << image.w << " " << image.h << "\n255\n";
    std::vector<unsigned char> raw(image.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        float v = std::clamp(image.data[i], 0.0f, 1.0f);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f)
        throw FormatError("failed writing image: " + path);
}

double iou_xyxy(const Box& a, const Box& b) {
    if (a.x2 <= a.x1 || a.y2 <= a.y1 || b.x2 <= b.x1 || b.y2 <= b.y1)
        throw DimensionError("iou_xyxy: degenerate box");
    return box_iou(a, b);
}

std::string format_detection_line(const Detection& d) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d %.6g %.6g %.6g %.6g %.6g", d.class_id, d.score,
                  d.box.x1, d.box.y1, d.box.x2, d.box.y2);
    return buf;
}

Detection parse_detection_line(const std::string& line) {
    std::vector<std::string> tok = tokenize(line);
    if (tok.size() != 6)
        throw ParseError("detection wants 'class_id score x1 y1 x2 y2', got " +
                         std::to_string(tok.size()) + " fields");
    Detection d;
    d.class_id = parse_int_tok(tok[0], 0, "class_id");
    if (d.class_id < 0)
        throw ParseError("class_id must be non-negative");
    d.score = static_cast<float>(parse_num_tok(tok[1], 0, "score"));
    d.box.x1 = static_cast<float>(parse_num_tok(tok[2], 0, "x1"));
    d.box.y1 = static_cast<float>(parse_num_tok(tok[3], 0, "y1"));
    d.box.x2 = static_cast<float>(parse_num_tok(tok[4], 0, "x2"));
    d.box.y2 = static_cast<float>(parse_num_tok(tok[5], 0, "y2"));
    return d;
}

std::vector<Detection> parse_detections(const std::string& text) {
    std::vector<Detection> out;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (tokenize(raw).empty())
            continue;
        try {
            out.push_back(parse_detection_line(raw));
        } catch (const ParseError& e) {
            throw ParseError(line, e.what());
        }
    }
    return out;
}

std::vector<Detection> load_detection_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        return {};
    std::ostringstream buf;
    buf << f.rdbuf();
    try {
        return parse_detections(buf.str());
    } catch (const ParseError& e) {
        throw ParseError(e.line, path + ": " + e.what());
    }
}

std::vector<char> match_detections(std::span<const Detection> dets,
                                   std::span<const LabeledBox> gts, double iou_thresh) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets[a].score > dets[b].score;
    });
    std::vector<char> claimed(gts.size(), 0);
    std::vector<char> tp(dets.size(), 0);
    for (std::size_t oi : order) {
        const Detection& d = dets[oi];
        if (d.box.x2 <= d.box.x1 || d.box.y2 <= d.box.y1)
            continue; // degenerate prediction can never match
        double best_iou = 0.0;
        std::size_t best_gt = gts.size();
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (claimed[gi] || gts[gi].class_id != d.class_id)
                continue;
            double iou = iou_xyxy(d.box, gts[gi].box);
            if (iou >= iou_thresh && iou > best_iou) {
                best_iou = iou;
                best_gt = gi;
            }
        }
        if (best_gt < gts.size()) {
            claimed[best_gt] = 1;
            tp[oi] = 1;
        }
    }
    return tp;
}

PrMetrics pr_metrics(std::uint64_t tp, std::uint64_t fp, std::uint64_t num_gt) {
    PrMetrics m;
    if (tp + fp > 0)
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    else
        m.precision_defined = false;
    if (num_gt > 0)
        m.recall = static_cast<double>(tp) / static_cast<double>(num_gt);
    else
        m.recall_defined = false;
    return m;
}

double average_precision(std::vector<std::pair<float, char>> scored_tp, std::uint64_t num_gt) {
    if (num_gt == 0 || scored_tp.empty())
        return 0.0;
    std::stable_sort(scored_tp.begin(), scored_tp.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    const std::size_t n = scored_tp.size();
    std::vector<double> precision(n);
    std::uint64_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (scored_tp[i].second)
            ++tp;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    // Monotone envelope: precision at each rank becomes the best achieved at
    // any equal-or-higher recall.
    for (std::size_t i = n - 1; i-- > 0;)
        precision[i] = std::max(precision[i], precision[i + 1]);
    // Recall climbs by exactly 1/num_gt at each true positive, so the
    // all-point interpolated area is the envelope summed at those ranks.
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (scored_tp[i].second)
            sum += precision[i];
    return sum / static_cast<double>(num_gt);
}

namespace {

std::vector<std::pair<int, double>> per_class_ap(std::span<const ImageSample> samples,
                                                double iou_thresh) {
    std::map<int, std::vector<std::pair<float, char>>> pools;
    std::map<int, std::uint64_t> gt_counts;
    for (const ImageSample& s : samples) {
        for (const LabeledBox& g : s.gts)
            ++gt_counts[g.class_id];
        std::vector<char> tp = match_detections(s.dets, s.gts, iou_thresh);
        for (std::size_t i = 0; i < s.dets.size(); ++i)
            pools[s.dets[i].class_id].emplace_back(s.dets[i].score, tp[i]);
    }
    std::vector<std::pair<int, double>> out;
    for (const auto& [cls, count] : gt_counts)
        out.emplace_back(cls, average_precision(pools.count(cls) ? pools.at(cls)
                                                                 : std::vector<std::pair<float, char>>{},
                                                count));
    return out;
}

double mean_ap(const std::vector<std::pair<int, double>>& per_class) {
    if (per_class.empty())
        return 0.0;
    double sum = 0.0;
    for (const auto& [cls, ap] : per_class)
        sum += ap;
    return sum / static_cast<double>(per_class.size());
}

} // namespace

double map_at(std::span<const ImageSample> samples, double iou_thresh) {
    return mean_ap(per_class_ap(samples, iou_thresh));
}

double map_range(std::span<const ImageSample> samples, double lo, double hi, double step) {
    if (lo > hi || step <= 0.0)
        throw DimensionError("map_range: wants lo <= hi and a positive step");
    double sum = 0.0;
    int n = 0;
    for (double t = lo; t <= hi + 1e-9; t += step, ++n)
        sum += map_at(samples, t);
    return sum / n;
}

EvalReport run_eval(const ModelGraph* graph, const EvalOptions& options) {
    if (options.pred_dir.empty() && graph == nullptr)
        throw FormatError("run_eval: needs a model or a prediction directory");
    const fs::path images = fs::path(options.data_dir) / "images";
    const fs::path labels = fs::path(options.data_dir) / "labels";
    if (!fs::is_directory(images))
        throw FormatError("missing image directory: " + images.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(images))
        if (entry.is_regular_file() && entry.path().extension() == ".pgm")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    EvalReport report;
    report.options = options;
    std::vector<ImageSample> samples;
    for (const fs::path& file : files) {
        const std::string stem = file.stem().string();
        const fs::path label_path = labels / (stem + ".txt");
        if (!fs::is_regular_file(label_path)) {
            std::fprintf(stderr, "warning: no label file for %s, skipping\n",
                         file.filename().string().c_str());
            ++report.skipped;
            continue;
        }
        Tensor4 img = load_pgm(file.string());
        ImageSample sample;
        sample.gts = load_label_file(label_path.string(), img.w, img.h);
        if (!options.pred_dir.empty()) {
            sample.dets =
                load_detection_file((fs::path(options.pred_dir) / (stem + ".txt")).string());
        } else {
            ForwardResult fr = model_forward(*graph, img);
            sample.dets = nms(decode_predictions(fr.raw, fr.anchors, options.conf),
                              options.iou_nms);
        }
        report.gt_total += sample.gts.size();
        report.det_total += sample.dets.size();
        std::vector<char> tp = match_detections(sample.dets, sample.gts, options.iou_match);
        for (char t : tp)
            if (t)
                ++report.tp;
        samples.push_back(std::move(sample));
    }
    report.images = static_cast<int>(samples.size());
    report.fp = report.det_total - report.tp;
    report.pr = pr_metrics(report.tp, report.fp, report.gt_total);
    report.ap50_by_class = per_class_ap(samples, options.iou_match);
    report.map50 = mean_ap(report.ap50_by_class);
    report.map50_95 = map_range(samples);
    return report;
}

std::string report_json(const EvalReport& r) {
    nlohmann::json j;
    j["images"] = r.images;
    j["skipped"] = r.skipped;
    j["ground_truth"] = r.gt_total;
    j["detections"] = r.det_total;
    j["true_positives"] = r.tp;
    j["false_positives"] = r.fp;
    j["false_negatives"] = r.gt_total - r.tp;
    j["precision"] = r.pr.precision;
    j["recall"] = r.pr.recall;
    j["precision_defined"] = r.pr.precision_defined;
    j["recall_defined"] = r.pr.recall_defined;
    j["map50"] = r.map50;
    j["map50_95"] = r.map50_95;
    nlohmann::json ap = nlohmann::json::object();
    for (const auto& [cls, v] : r.ap50_by_class)
        ap[std::to_string(cls)] = v;
    j["ap50_by_class"] = ap;
    j["options"] = {{"conf", r.options.conf},
                    {"iou_nms", r.options.iou_nms},
                    {"iou_match", r.options.iou_match},
                    {"data", r.options.data_dir},
                    {"pred", r.options.pred_dir}};
    return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& r) {
    char buf[256];
    std::string out;
    auto row = [&](const char* k, const std::string& v) {
        std::snprintf(buf, sizeof(buf), "  %-16s %s\n", k, v.c_str());
        out += buf;
    };
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.4f", v);
        return std::string(buf);
    };
    out += "evaluation summary\n";
    row("images", std::to_string(r.images));
    if (r.skipped > 0)
        row("skipped", std::to_string(r.skipped));
    row("ground truth", std::to_string(r.gt_total));
    row("detections", std::to_string(r.det_total));
    row("tp / fp / fn", std::to_string(r.tp) + " / " + std::to_string(r.fp) + " / " +
                            std::to_string(r.gt_total - r.tp));
    row("precision", r.pr.precision_defined ? num(r.pr.precision) : "0.0000 (no detections)");
    row("recall", r.pr.recall_defined ? num(r.pr.recall) : "0.0000 (no ground truth)");
    row("mAP@0.5", num(r.map50));
    row("mAP@0.5:0.95", num(r.map50_95));
    for (const auto& [cls, ap] : r.ap50_by_class)
        row(("  AP50 class " + std::to_string(cls)).c_str(), num(ap));
    return out;
}

} // namespace rgelan
