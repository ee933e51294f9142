#ifndef RGELAN_WEIGHTS_HPP
#define RGELAN_WEIGHTS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rgelan/graph.hpp"

namespace rgelan {

// Every float held by a node's blocks, in a fixed traversal order: conv
// weights then bias, BN gamma/beta/mean/var/eps. Used by serialization.
std::vector<std::span<float>> node_state(GraphNode& node);

std::uint64_t state_float_count(const ModelGraph& g);

// RGW1 container: "RGW1" magic, u32 blob count (one blob per graph node, in
// order), then per blob a u32 name length, the name bytes, a u64 float count
// and that many raw little-endian floats. Loading demands the same node
// names and float counts the graph currently has, so a file saved from a
// fused graph only loads into a fused graph (and vice versa).
void save_weights(const ModelGraph& g, const std::string& path);
void load_weights(ModelGraph& g, const std::string& path);

} // namespace rgelan

#endif
