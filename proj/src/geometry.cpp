#include "graspmamba/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>

#include "json.hpp"

#include "graspmamba/error.hpp"

namespace graspmamba {

double normalize_angle(double theta) {
    constexpr double pi = std::numbers::pi;
    double t = std::fmod(theta, pi);
    if (t <= -pi / 2) t += pi;
    if (t > pi / 2) t -= pi;
    return t;
}

}  // namespace graspmamba

namespace graspmamba::geometry {

namespace {

double cross(const Point2& o, const Point2& a, const Point2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::array<Point2, 4> rect_corners(const GraspRect& g) {
    if (!(g.w > 0.0) || !(g.h > 0.0)) {
        throw ArgumentError("rect_corners: width and height must be positive");
    }
    const double c = std::cos(g.theta), s = std::sin(g.theta);
    const double ux = c * g.w / 2, uy = s * g.w / 2;
    const double vx = -s * g.h / 2, vy = c * g.h / 2;
    return {Point2{g.x - ux - vx, g.y - uy - vy}, Point2{g.x + ux - vx, g.y + uy - vy},
            Point2{g.x + ux + vx, g.y + uy + vy}, Point2{g.x - ux + vx, g.y - uy + vy}};
}

double polygon_area(const std::vector<Point2>& poly) {
    double twice = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Point2& a = poly[i];
        const Point2& b = poly[(i + 1) % poly.size()];
        twice += a.x * b.y - b.x * a.y;
    }
    return std::abs(twice) / 2.0;
}

std::vector<Point2> clip_convex(const std::vector<Point2>& subject,
                                const std::vector<Point2>& clip) {
    std::vector<Point2> output = subject;
    for (std::size_t e = 0; e < clip.size() && !output.empty(); ++e) {
        const Point2& a = clip[e];
        const Point2& b = clip[(e + 1) % clip.size()];
        std::vector<Point2> input;
        input.swap(output);
        for (std::size_t i = 0; i < input.size(); ++i) {
            const Point2& cur = input[i];
            const Point2& prev = input[(i + input.size() - 1) % input.size()];
            const double dc = cross(a, b, cur), dp = cross(a, b, prev);
            if (dc >= 0.0) {
                if (dp < 0.0) {
                    const double t = dp / (dp - dc);
                    output.push_back({prev.x + t * (cur.x - prev.x),
                                      prev.y + t * (cur.y - prev.y)});
                }
                output.push_back(cur);
            } else if (dp >= 0.0) {
                const double t = dp / (dp - dc);
                output.push_back(
                    {prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
            }
        }
    }
    return output;
}

double rotated_iou(const GraspRect& a, const GraspRect& b) {
    // Clip in a canonical order so the result is exactly symmetric.
    auto key = [](const GraspRect& g) { return std::tie(g.x, g.y, g.w, g.h, g.theta); };
    const GraspRect& first = key(a) <= key(b) ? a : b;
    const GraspRect& second = key(a) <= key(b) ? b : a;
    const auto ca = rect_corners(first), cb = rect_corners(second);
    const std::vector<Point2> pa(ca.begin(), ca.end()), pb(cb.begin(), cb.end());
    const double inter = polygon_area(clip_convex(pa, pb));
    const double uni = a.w * a.h + b.w * b.h - inter;
    if (!(uni > 0.0)) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

double angle_offset_deg(double t1, double t2) {
    double d = std::fmod(std::abs(t1 - t2) * (180.0 / std::numbers::pi), 180.0);
    d = std::min(d, 180.0 - d);
    // Snap to 1e-9 degrees so offsets given in whole degrees compare exactly
    // against the thresholds despite the radian round trip.
    return std::round(d * 1e9) / 1e9;
}

bool is_success(const GraspRect& pred, const std::vector<GraspRect>& gts) {
    if (gts.empty()) throw ArgumentError("is_success: no ground-truth grasps");
    return std::any_of(gts.begin(), gts.end(), [&](const GraspRect& gt) {
        return rotated_iou(pred, gt) > kIouThreshold &&
               angle_offset_deg(pred.theta, gt.theta) < kAngleThresholdDeg;
    });
}

double harmonic_mean(double seen, double unseen) {
    if (!(seen >= 0.0 && seen <= 1.0) || !(unseen >= 0.0 && unseen <= 1.0)) {
        throw ArgumentError("harmonic_mean: rates must lie in [0, 1]");
    }
    if (seen + unseen == 0.0) return 0.0;
    return 2.0 * seen * unseen / (seen + unseen);
}

EvalReport evaluate(const std::vector<EvalItem>& items, const TopPrediction& predict) {
    if (items.empty()) throw ArgumentError("evaluate: no samples to evaluate");
    std::size_t hits[2] = {0, 0}, counts[2] = {0, 0};
    for (std::size_t i = 0; i < items.size(); ++i) {
        const int s = items[i].split == Split::seen ? 0 : 1;
        ++counts[s];
        const auto pred = predict(i);
        if (pred && is_success(*pred, items[i].ground_truth)) ++hits[s];
    }
    EvalReport r;
    r.n_seen = counts[0];
    r.n_unseen = counts[1];
    r.seen_rate = counts[0] ? static_cast<double>(hits[0]) / counts[0] : 0.0;
    r.unseen_rate = counts[1] ? static_cast<double>(hits[1]) / counts[1] : 0.0;
    r.h = harmonic_mean(r.seen_rate, r.unseen_rate);
    return r;
}

std::string report_json(const EvalReport& report) {
    nlohmann::json j;
    j["seen"] = report.seen_rate;
    j["unseen"] = report.unseen_rate;
    j["h"] = report.h;
    j["n_seen"] = report.n_seen;
    j["n_unseen"] = report.n_unseen;
    return j.dump();
}

}  // namespace graspmamba::geometry
