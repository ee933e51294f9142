#ifndef RGELAN_GRAPH_HPP
#define RGELAN_GRAPH_HPP

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "rgelan/blocks.hpp"
#include "rgelan/config.hpp"
#include "rgelan/detect.hpp"

namespace rgelan {

struct UpsampleOp {
    int factor = 2;
};

struct ConcatOp {};

using Block = std::variant<ConvUnit, RepVGGBlock, RcsBlock, RepNcspElan4, ADownBlock,
                           SppElanBlock, UpsampleOp, ConcatOp, DDetectHead>;

struct GraphNode {
    std::string name;     // "<index>_<Module>"
    std::string module;   // registry name
    std::vector<int> from; // resolved absolute node indices; -1 is the input image
    std::vector<Block> seq; // `repeats` sequential blocks (1 for wiring modules)
    Shape out_shape;        // at the build-time input size; zeroed for DDetect
};

struct ModelGraph {
    int ch = 1;
    int nc = 1;
    int image_size = 0; // nominal square input edge used at build time
    std::uint32_t seed = 0;
    bool fused = false;
    std::vector<GraphNode> nodes;
    int detect_index = -1; // -1 when the config has no DDetect layer
    std::vector<int> detect_strides;
};

// Materializes a parsed config: resolves wiring, infers shapes at
// image_size x image_size, draws weights from mt19937(seed) in layer order
// and applies the detection-head bias policy.
ModelGraph build_graph(const ModelConfig& cfg, int image_size, std::uint32_t seed);

// Folds every block into its inference form in place. Idempotent.
void fuse_graph(ModelGraph& g);

struct NodeCost {
    std::string name;
    std::uint64_t params = 0;
    OpCount ops;
    Shape out_shape;
};

struct AccountingReport {
    int image_size = 0;
    bool fused = false;
    std::vector<NodeCost> nodes;
    std::uint64_t total_params = 0;
    OpCount total_ops;

    double total_flops() const { return total_ops.flops(); }
};

// Parameter and op tallies per node at the graph's build size. Wiring
// modules (Upsample, Concat) count as zero-cost; head decode is not counted.
AccountingReport count_graph(const ModelGraph& g);

struct ForwardResult {
    RawPrediction raw;
    AnchorGrid anchors;
    std::vector<Tensor4> features; // detection-head inputs
};

// Runs the graph on one image (n=1, c=ch). Any input size the blocks accept
// works; anchors and strides are derived from the actual feature shapes.
ForwardResult model_forward(const ModelGraph& g, const Tensor4& image);

// Forward through one block of a node sequence (wiring ops excluded).
Tensor4 block_forward(const Block& b, const Tensor4& x);

std::uint64_t block_param_count(const Block& b);

} // namespace rgelan

#endif
