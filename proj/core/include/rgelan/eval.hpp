#ifndef RGELAN_EVAL_HPP
#define RGELAN_EVAL_HPP

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rgelan/detect.hpp"
#include "rgelan/graph.hpp"

namespace rgelan {

// Ground-truth annotation in absolute pixel coordinates.
struct LabeledBox {
    int class_id = 0;
    Box box;
};

// Converts a normalized center-size box to absolute corner coordinates.
Box denormalize_box(double cx, double cy, double w, double h, int img_w, int img_h);

// Label text: one "class_id cx cy w h" line per object, all normalized to
// [0, 1]. Errors carry 1-based line numbers.
std::vector<LabeledBox> parse_labels(const std::string& text, int img_w, int img_h);

// Missing file means an image with no objects.
std::vector<LabeledBox> load_label_file(const std::string& path, int img_w, int img_h);

// Binary (P5) PGM; maxval must be 255. Pixels land in [0, 1] as (1,1,h,w).
Tensor4 load_pgm(const std::string& path);
void save_pgm(const Tensor4& image, const std::string& path);

// Intersection-over-union of two corner-form boxes, in double precision.
// Degenerate inputs (x2 <= x1 or y2 <= y1) are an error.
double iou_xyxy(const Box& a, const Box& b);

// "class_id score x1 y1 x2 y2", six significant digits.
std::string format_detection_line(const Detection& d);
Detection parse_detection_line(const std::string& line);
std::vector<Detection> parse_detections(const std::string& text);
std::vector<Detection> load_detection_file(const std::string& path);

// Greedy matcher: detections claim ground truth in descending score order,
// each taking the highest-IoU unclaimed same-class box at or above the
// threshold. Returns a true-positive flag per detection, input order.
std::vector<char> match_detections(std::span<const Detection> dets,
                                   std::span<const LabeledBox> gts, double iou_thresh);

struct PrMetrics {
    double precision = 0.0;
    double recall = 0.0;
    bool precision_defined = true; // false when there are no detections
    bool recall_defined = true;    // false when there is no ground truth
};

PrMetrics pr_metrics(std::uint64_t tp, std::uint64_t fp, std::uint64_t num_gt);

// All-point interpolated AP: precision is replaced by its running maximum
// from the right, then integrated over recall. scored_tp pairs a confidence
// with the matcher's verdict; order does not matter. Zero ground truth
// yields zero.
double average_precision(std::vector<std::pair<float, char>> scored_tp, std::uint64_t num_gt);

struct ImageSample {
    std::vector<Detection> dets;
    std::vector<LabeledBox> gts;
};

// Mean AP over the classes present in the ground truth, matching per image
// at the given IoU threshold and pooling detections per class.
double map_at(std::span<const ImageSample> samples, double iou_thresh);

// Mean of map_at over IoU lo, lo+step, ..., hi (0.50:0.05:0.95 by default,
// ten thresholds).
double map_range(std::span<const ImageSample> samples, double lo = 0.5, double hi = 0.95,
                 double step = 0.05);

struct EvalOptions {
    std::string data_dir;       // holds images/ and labels/
    std::string pred_dir;       // read "<stem>.txt" detections instead of running the model
    float conf = 0.25f;
    float iou_nms = 0.45f;
    double iou_match = 0.5;     // IoU for TP/FP counting and AP50
};

struct EvalReport {
    int images = 0;
    int skipped = 0; // images without a label file (warned and left out)
    std::uint64_t gt_total = 0;
    std::uint64_t det_total = 0;
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    PrMetrics pr;
    double map50 = 0.0;
    double map50_95 = 0.0;
    std::vector<std::pair<int, double>> ap50_by_class; // classes present in GT
    EvalOptions options;
};

// Walks data_dir/images/*.pgm; graph may be null when options.pred_dir is
// set.
EvalReport run_eval(const ModelGraph* graph, const EvalOptions& options);

std::string report_json(const EvalReport& r);
std::string report_table(const EvalReport& r);

} // namespace rgelan

#endif
