#include "graspmamba/grasp_head.hpp"

#include <algorithm>
#include <cmath>

#include "graspmamba/error.hpp"

namespace graspmamba::head {

void HeadParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    hidden.visit(prefix + ".hidden", fn);
    out.visit(prefix + ".out", fn);
}

HeadParams make_head(std::size_t fused_width, std::size_t hidden, Rng& rng) {
    return {make_conv(fused_width, hidden, 1, 1, rng), make_conv(hidden, 4, 1, 1, rng, 1.0)};
}

GraspMaps stack_maps(const std::vector<GraspMaps>& maps) {
    if (maps.empty()) throw ShapeError("stack_maps: no maps");
    auto cat = [&](Tensor GraspMaps::*field) {
        std::vector<double> data;
        Shape shape = (maps[0].*field).shape();
        shape[0] = 0;
        for (const auto& m : maps) {
            const Tensor& t = m.*field;
            if (t.rank() != 3 || t.dim(1) != shape[1] || t.dim(2) != shape[2]) {
                throw ShapeError("stack_maps: inconsistent map shapes");
            }
            shape[0] += t.dim(0);
            auto d = t.data();
            data.insert(data.end(), d.begin(), d.end());
        }
        return Tensor::from_data(shape, std::move(data));
    };
    return {cat(&GraspMaps::quality), cat(&GraspMaps::cos2t), cat(&GraspMaps::sin2t),
            cat(&GraspMaps::width)};
}

GraspMaps predict_maps(const Tensor& fused, const HeadParams& p, std::size_t out_height,
                       std::size_t out_width) {
    if (fused.rank() != 4) {
        throw ShapeError("predict_maps: expected [B, C, H, W], got " +
                         shape_str(fused.shape()));
    }
    const std::size_t b = fused.dim(0), h = fused.dim(2), w = fused.dim(3);
    if (h == 0 || w == 0 || out_height % h != 0 || out_width % w != 0 ||
        out_height / h != out_width / w) {
        throw ShapeError("predict_maps: output " + std::to_string(out_height) + "x" +
                         std::to_string(out_width) +
                         " is not an integer multiple of " + shape_str(fused.shape()));
    }
    const int factor = static_cast<int>(out_height / h);
    Tensor raw = p.out(silu(p.hidden(fused)));
    Tensor maps = concat_channels({sigmoid(slice_channels(raw, 0, 1)),
                                   tanh(slice_channels(raw, 1, 2)),
                                   sigmoid(slice_channels(raw, 3, 1))});
    if (factor > 1) maps = bilinear_upsample(maps, factor);
    auto channel = [&](std::size_t c) {
        return reshape(slice_channels(maps, c, 1), {b, out_height, out_width});
    };
    return {channel(0), channel(1), channel(2), channel(3)};
}

GraspMaps encode_targets(const std::vector<GraspRect>& grasps, std::size_t height,
                         std::size_t width, double w_max) {
    if (!(w_max > 0.0)) throw ArgumentError("encode_targets: w_max must be positive");
    const std::size_t n = height * width;
    std::vector<double> q(n, 0.0), c(n, 0.0), s(n, 0.0), wd(n, 0.0);
    for (const auto& g : grasps) {
        if (!(g.w > 0.0) || !(g.h > 0.0)) {
            throw ArgumentError("encode_targets: grasp with non-positive size");
        }
        const double ct = std::cos(g.theta), st = std::sin(g.theta);
        const double c2 = std::cos(2 * g.theta), s2 = std::sin(2 * g.theta);
        const double wn = std::min(g.w, w_max) / w_max;
        const double half_u = g.w / 6.0, half_v = g.h / 2.0;
        // Bounding box of the painted region.
        const double ext = std::abs(ct) * half_u + std::abs(st) * half_v;
        const double eyt = std::abs(st) * half_u + std::abs(ct) * half_v;
        const long x0 = std::max(0L, static_cast<long>(std::floor(g.x - ext)));
        const long x1 = std::min(static_cast<long>(width) - 1,
                                 static_cast<long>(std::ceil(g.x + ext)));
        const long y0 = std::max(0L, static_cast<long>(std::floor(g.y - eyt)));
        const long y1 = std::min(static_cast<long>(height) - 1,
                                 static_cast<long>(std::ceil(g.y + eyt)));
        for (long y = y0; y <= y1; ++y) {
            for (long x = x0; x <= x1; ++x) {
                const double dx = static_cast<double>(x) - g.x;
                const double dy = static_cast<double>(y) - g.y;
                const double u = dx * ct + dy * st, v = -dx * st + dy * ct;
                if (std::abs(u) > half_u || std::abs(v) > half_v) continue;
                const std::size_t i = static_cast<std::size_t>(y) * width + x;
                q[i] = 1.0;
                c[i] = c2;
                s[i] = s2;
                wd[i] = wn;
            }
        }
    }
    const Shape shape{1, height, width};
    return {Tensor::from_data(shape, std::move(q)), Tensor::from_data(shape, std::move(c)),
            Tensor::from_data(shape, std::move(s)), Tensor::from_data(shape, std::move(wd))};
}

std::vector<double> gaussian_blur(std::span<const double> image, std::size_t height,
                                  std::size_t width, double sigma) {
    std::vector<double> out(image.begin(), image.end());
    if (!(sigma > 0.0)) return out;
    const long radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    for (long i = -radius; i <= radius; ++i)
        kernel[i + radius] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));

    auto pass = [&](const std::vector<double>& src, bool horizontal) {
        std::vector<double> dst(src.size());
        const long h = static_cast<long>(height), w = static_cast<long>(width);
        for (long y = 0; y < h; ++y) {
            for (long x = 0; x < w; ++x) {
                double acc = 0.0, norm = 0.0;
                for (long k = -radius; k <= radius; ++k) {
                    const long yy = horizontal ? y : y + k;
                    const long xx = horizontal ? x + k : x;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    acc += kernel[k + radius] * src[yy * w + xx];
                    norm += kernel[k + radius];
                }
                dst[y * w + x] = acc / norm;
            }
        }
        return dst;
    };
    return pass(pass(out, true), false);
}

namespace {

constexpr double kPlateauTol = 1e-9;
// Relative depth of the cap around a peak used to locate its centre.
constexpr double kCapDepth = 0.02;

// Pixel of the 8-connected cap (values within kCapDepth of the peak) around
// `seed` closest to the cap's centroid, so flat or ridge-shaped tops decode to
// their middle rather than to their first pixel.
std::size_t cap_centre(const std::vector<double>& q, std::size_t h, std::size_t w,
                           std::size_t seed) {
    std::vector<std::size_t> region{seed};
    std::vector<char> seen(q.size(), 0);
    seen[seed] = 1;
    double cx = 0.0, cy = 0.0;
    for (std::size_t n = 0; n < region.size(); ++n) {
        const std::size_t i = region[n];
        const long y = static_cast<long>(i / w), x = static_cast<long>(i % w);
        cx += static_cast<double>(x);
        cy += static_cast<double>(y);
        for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
            const long yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w))
                continue;
            const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
            if (seen[j] || q[j] < (1.0 - kCapDepth) * q[seed]) continue;
            seen[j] = 1;
            region.push_back(j);
            }
    }
    cx /= static_cast<double>(region.size());
    cy /= static_cast<double>(region.size());
    std::size_t best = seed;
    double best_d = 1e300;
    for (std::size_t i : region) {
        const double dx = static_cast<double>(i % w) - cx, dy = static_cast<double>(i / w) - cy;
        const double d = dx * dx + dy * dy;
        if (d < best_d || (d == best_d && i < best)) best = i, best_d = d;
    }
    return best;
}

}  // namespace

std::vector<ScoredGrasp> decode_grasps(const GraspMaps& maps, int k, double w_max,
                                       const DecodeOptions& options,
                                       std::size_t batch_index) {
    if (k < 1) throw ArgumentError("decode_grasps: k must be >= 1");
    if (!(w_max > 0.0)) throw ArgumentError("decode_grasps: w_max must be positive");
    if (maps.quality.rank() != 3 || batch_index >= maps.batch()) {
        throw ShapeError("decode_grasps: maps must be [B, H, W] with batch index in range");
    }
    const std::size_t h = maps.height(), w = maps.width_px(), plane = h * w;
    auto slice = [&](const Tensor& t) {
        return t.data().subspan(batch_index * plane, plane);
    };
    const auto q = gaussian_blur(slice(maps.quality), h, w, options.smoothing_sigma);
    const auto cos2 = slice(maps.cos2t), sin2 = slice(maps.sin2t), wid = slice(maps.width);

    std::vector<std::size_t> peaks;
    const long r = std::max(options.peak_radius, 1);
    for (long y = 0; y < static_cast<long>(h); ++y) {
        for (long x = 0; x < static_cast<long>(w); ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (!(q[i] > options.quality_threshold)) continue;
            bool is_peak = true;
            for (long dy = -r; dy <= r && is_peak; ++dy) {
                for (long dx = -r; dx <= r; ++dx) {
                    const long yy = y + dy, xx = x + dx;
                    if ((dy == 0 && dx == 0) || yy < 0 || xx < 0 ||
                        yy >= static_cast<long>(h) || xx >= static_cast<long>(w))
                        continue;
                    const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
                    // A plateau yields one candidate, its first pixel in row-major order.
                    if (q[j] > q[i] + kPlateauTol ||
                        (std::abs(q[j] - q[i]) <= kPlateauTol && j < i)) {
                        is_peak = false;
                        break;
                    }
                }
            }
            if (is_peak) peaks.push_back(i);
        }
    }
    std::stable_sort(peaks.begin(), peaks.end(),
                     [&](std::size_t a, std::size_t b) { return q[a] > q[b]; });

    std::vector<ScoredGrasp> out;
    std::vector<std::size_t> used;
    for (std::size_t peak : peaks) {
        if (out.size() == static_cast<std::size_t>(k)) break;
        const std::size_t i = cap_centre(q, h, w, peak);
        // Peaks sharing one cap collapse to the same centre.
        if (std::find(used.begin(), used.end(), i) != used.end()) continue;
        used.push_back(i);
        GraspRect g;
        g.x = static_cast<double>(i % w);
        g.y = static_cast<double>(i / w);
        g.theta = normalize_angle(0.5 * std::atan2(sin2[i], cos2[i]));
        g.w = std::clamp(wid[i], 1e-3, 1.0) * w_max;
        g.h = g.w / 2.0;
        out.push_back({g, q[peak]});
    }
    return out;
}

}  // namespace graspmamba::head
