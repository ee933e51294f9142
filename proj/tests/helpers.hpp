#ifndef RGELAN_TEST_HELPERS_HPP
#define RGELAN_TEST_HELPERS_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "rgelan/detect.hpp"
#include "rgelan/tensor.hpp"

namespace rgelan::testing {

// Scratch directory under the system temp root, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag)
        : path(std::filesystem::temp_directory_path() / ("rgelan_test_" + tag)) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline double max_diff(const Tensor4& a, const Tensor4& b) {
    if (!a.same_shape(b))
        return 1e30;
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        d = std::max(d, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return d;
}

// Independent convolution oracle: explicit zero-padded copy, then per-output
// inner products gathered into a patch vector (im2col style).
inline Tensor4 conv_oracle(const Tensor4& x, const ConvParams& p) {
    const int per_group_in = p.weight.c;
    const int per_group_out = p.out_ch() / p.groups;
    const int ph = x.h + 2 * p.padding, pw = x.w + 2 * p.padding;
    Tensor4 padded(x.n, x.c, ph, pw, 0.0f);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j)
                    padded.at(n, c, i + p.padding, j + p.padding) = x.at(n, c, i, j);
    const int oh = (ph - p.kh()) / p.stride + 1;
    const int ow = (pw - p.kw()) / p.stride + 1;
    Tensor4 y(x.n, p.out_ch(), oh, ow);
    std::vector<double> patch(static_cast<std::size_t>(per_group_in) * p.kh() * p.kw());
    for (int n = 0; n < x.n; ++n)
        for (int oc = 0; oc < p.out_ch(); ++oc) {
            const int g = oc / per_group_out;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    std::size_t t = 0;
                    for (int ic = 0; ic < per_group_in; ++ic)
                        for (int ky = 0; ky < p.kh(); ++ky)
                            for (int kx = 0; kx < p.kw(); ++kx)
                                patch[t++] = padded.at(n, g * per_group_in + ic,
                                                       oy * p.stride + ky, ox * p.stride + kx);
                    double acc = 0.0;
                    t = 0;
                    for (int ic = 0; ic < per_group_in; ++ic)
                        for (int ky = 0; ky < p.kh(); ++ky)
                            for (int kx = 0; kx < p.kw(); ++kx)
                                acc += patch[t++] * p.weight.at(oc, ic, ky, kx);
                    if (p.has_bias())
                        acc += p.bias[oc];
                    y.at(n, oc, oy, ox) = static_cast<float>(acc);
                }
        }
    return y;
}

// Rasterization IoU oracle for integer-coordinate boxes: counts unit cells
// covered by each box on a grid.
inline double raster_iou(int ax1, int ay1, int ax2, int ay2, int bx1, int by1, int bx2, int by2,
                         int grid) {
    long inter = 0, in_a = 0, in_b = 0;
    for (int y = 0; y < grid; ++y)
        for (int x = 0; x < grid; ++x) {
            const bool a = x >= ax1 && x < ax2 && y >= ay1 && y < ay2;
            const bool b = x >= bx1 && x < bx2 && y >= by1 && y < by2;
            inter += a && b;
            in_a += a;
            in_b += b;
        }
    const long uni = in_a + in_b - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// Rank-sweep AP oracle: for every true-positive rank, take the best
// precision at that rank or later, sum, and divide by the ground-truth
// count. Equals all-point interpolation.
inline double oracle_ap(std::vector<std::pair<float, char>> scored, std::uint64_t num_gt) {
    if (num_gt == 0 || scored.empty())
        return 0.0;
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    const std::size_t n = scored.size();
    std::vector<std::uint64_t> tp_at(n);
    std::uint64_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (scored[i].second)
            ++tp;
        tp_at[i] = tp;
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (!scored[k].second)
            continue;
        double best = 0.0;
        for (std::size_t j = k; j < n; ++j)
            best = std::max(best, static_cast<double>(tp_at[j]) / static_cast<double>(j + 1));
        sum += best;
    }
    return sum / static_cast<double>(num_gt);
}

} // namespace rgelan::testing

#endif
