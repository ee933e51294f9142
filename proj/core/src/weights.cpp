#include "rgelan/weights.hpp"

#include <fstream>

#include "rgelan/errors.hpp"

namespace rgelan {

namespace {

template <class... Ts> struct overloaded : Ts... {
    using Ts::operator()...;
};

using SpanList = std::vector<std::span<float>>;

void collect(ConvParams& c, SpanList& out) {
    out.push_back({c.weight.data.data(), c.weight.data.size()});
    if (!c.bias.empty())
        out.push_back({c.bias.data(), c.bias.size()});
}

void collect(BnParams& b, SpanList& out) {
    out.push_back({b.gamma.data(), b.gamma.size()});
    out.push_back({b.beta.data(), b.beta.size()});
    out.push_back({b.running_mean.data(), b.running_mean.size()});
    out.push_back({b.running_var.data(), b.running_var.size()});
    out.push_back({&b.eps, 1});
}

void collect(ConvUnit& u, SpanList& out) {
    collect(u.conv, out);
    if (u.bn)
        collect(*u.bn, out);
}

void collect(RepVGGBlock& b, SpanList& out) {
    if (auto* t = std::get_if<RepVGGBlockTrain>(&b.form)) {
        collect(t->conv3x3, out);
        collect(t->bn3x3, out);
        collect(t->conv1x1, out);
        collect(t->bn1x1, out);
        if (t->bn_id)
            collect(*t->bn_id, out);
    } else {
        collect(std::get<RepVGGBlockDeploy>(b.form).fused, out);
    }
}

void collect(RcsBlock& b, SpanList& out) {
    collect(b.half_a, out);
    if (b.half_b)
        collect(*b.half_b, out);
}

void collect(RepNcspBottleneck& b, SpanList& out) {
    if (auto* r = std::get_if<RepVGGBlock>(&b.stage1))
        collect(*r, out);
    else
        collect(std::get<RcsBlock>(b.stage1), out);
    collect(b.stage2, out);
}

void collect(RepNcspBlock& b, SpanList& out) {
    collect(b.entry_main, out);
    collect(b.entry_short, out);
    collect(b.exit, out);
    for (RepNcspBottleneck& bt : b.bottlenecks)
        collect(bt, out);
}

void collect(RepNcspElan4& e, SpanList& out) {
    collect(e.entry, out);
    collect(e.ncsp1, out);
    collect(e.conv1, out);
    collect(e.ncsp2, out);
    collect(e.conv2, out);
    collect(e.exit, out);
}

void collect(ADownBlock& a, SpanList& out) {
    collect(a.conv_a, out);
    collect(a.conv_b, out);
}

void collect(SppElanBlock& s, SpanList& out) {
    collect(s.entry, out);
    collect(s.exit, out);
}

void collect(DDetectStack& s, SpanList& out) {
    collect(s.c1, out);
    collect(s.c2, out);
    collect(s.out, out);
}

void collect(DDetectHead& h, SpanList& out) {
    for (DDetectStack& s : h.box_branch)
        collect(s, out);
    for (DDetectStack& s : h.cls_branch)
        collect(s, out);
}

void put_u32(std::ostream& o, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    o.write(b, 4);
}

void put_u64(std::ostream& o, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    o.write(b, 8);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(std::string("weights file truncated reading ") + what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& in, const char* what) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw FormatError(std::string("weights file truncated reading ") + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

} // namespace

std::vector<std::span<float>> node_state(GraphNode& node) {
    SpanList out;
    for (Block& b : node.seq)
        std::visit(overloaded{
                       [&](ConvUnit& u) { collect(u, out); },
                       [&](RepVGGBlock& r) { collect(r, out); },
                       [&](RcsBlock& r) { collect(r, out); },
                       [&](RepNcspElan4& e) { collect(e, out); },
                       [&](ADownBlock& a) { collect(a, out); },
                       [&](SppElanBlock& s) { collect(s, out); },
                       [&](UpsampleOp&) {},
                       [&](ConcatOp&) {},
                       [&](DDetectHead& h) { collect(h, out); },
                   },
                   b);
    return out;
}

std::uint64_t state_float_count(const ModelGraph& g) {
    std::uint64_t n = 0;
    for (const GraphNode& node : g.nodes)
        for (std::span<float> s : node_state(const_cast<GraphNode&>(node)))
            n += s.size();
    return n;
}

void save_weights(const ModelGraph& g, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw FormatError("cannot open weights file for writing: " + path);
    f.write("RGW1", 4);
    put_u32(f, static_cast<std::uint32_t>(g.nodes.size()));
    for (const GraphNode& node : g.nodes) {
        SpanList spans = node_state(const_cast<GraphNode&>(node));
        std::uint64_t total = 0;
        for (std::span<float> s : spans)
            total += s.size();
        put_u32(f, static_cast<std::uint32_t>(node.name.size()));
        f.write(node.name.data(), static_cast<std::streamsize>(node.name.size()));
        put_u64(f, total);
        for (std::span<float> s : spans)
            f.write(reinterpret_cast<const char*>(s.data()),
                    static_cast<std::streamsize>(s.size() * sizeof(float)));
    }
    if (!f)
        throw FormatError("failed writing weights file: " + path);
}

void load_weights(ModelGraph& g, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw FormatError("cannot open weights file: " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::string(magic, 4) != "RGW1")
        throw FormatError(path + " is not an RGW1 weights file");
    std::uint32_t count = get_u32(f, "blob count");
    if (count != g.nodes.size())
        throw FormatError("weights file holds " + std::to_string(count) + " blobs, graph has " +
                          std::to_string(g.nodes.size()) + " nodes");
    for (GraphNode& node : g.nodes) {
        std::uint32_t name_len = get_u32(f, "name length");
        if (name_len > 4096)
            throw FormatError("weights file blob name is implausibly long");
        std::string name(name_len, '\0');
        if (!f.read(name.data(), name_len))
            throw FormatError("weights file truncated reading a blob name");
        if (name != node.name)
            throw FormatError("weights blob '" + name + "' does not match node '" + node.name +
                              "'");
        std::uint64_t total = get_u64(f, "float count");
        SpanList spans = node_state(node);
        std::uint64_t expect = 0;
        for (std::span<float> s : spans)
            expect += s.size();
        if (total != expect)
            throw FormatError("node '" + node.name + "' expects " + std::to_string(expect) +
                              " floats, file holds " + std::to_string(total));
        for (std::span<float> s : spans)
            if (!f.read(reinterpret_cast<char*>(s.data()),
                        static_cast<std::streamsize>(s.size() * sizeof(float))))
                throw FormatError("weights file truncated in node '" + node.name + "'");
    }
    if (f.peek() != std::ifstream::traits_type::eof())
        throw FormatError("weights file has trailing data");
}

} // namespace rgelan
