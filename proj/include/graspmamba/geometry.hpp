#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace graspmamba {

/// Oriented grasp rectangle in pixel coordinates (x right, y down). `w` is the
/// gripper opening measured along direction theta, `h` the jaw size measured
/// perpendicular to it. theta is in radians, representative range
/// (-pi/2, pi/2].
struct GraspRect {
    double x = 0.0;
    double y = 0.0;
    double w = 1.0;
    double h = 1.0;
    double theta = 0.0;

    bool operator==(const GraspRect&) const = default;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// Maps theta into (-pi/2, pi/2]; rectangles are symmetric under theta + pi.
double normalize_angle(double theta);

}  // namespace graspmamba

namespace graspmamba::geometry {

/// Corners c -/+ (w/2) u -/+ (h/2) v with u = (cos t, sin t), v = (-sin t, cos t),
/// in positive (counter-clockwise in x/y axes) orientation.
std::array<Point2, 4> rect_corners(const GraspRect& g);

double polygon_area(const std::vector<Point2>& poly);

/// Sutherland-Hodgman clip of a polygon against a convex, counter-clockwise clip
/// polygon.
std::vector<Point2> clip_convex(const std::vector<Point2>& subject,
                                const std::vector<Point2>& clip);

double rotated_iou(const GraspRect& a, const GraspRect& b);

/// Smallest angle between two grasp orientations in degrees, in [0, 90].
double angle_offset_deg(double t1, double t2);

inline constexpr double kIouThreshold = 0.25;
inline constexpr double kAngleThresholdDeg = 30.0;

/// True iff some ground truth has IoU > 0.25 and angle offset < 30 degrees.
bool is_success(const GraspRect& pred, const std::vector<GraspRect>& gts);

double harmonic_mean(double seen, double unseen);

struct EvalReport {
    double seen_rate = 0.0;
    double unseen_rate = 0.0;
    double h = 0.0;
    std::size_t n_seen = 0;
    std::size_t n_unseen = 0;
};

enum class Split { seen, unseen };

struct EvalItem {
    Split split;
    std::vector<GraspRect> ground_truth;
};

// Top-1 prediction for item i; nullopt counts as a failure.
using TopPrediction = std::function<std::optional<GraspRect>(std::size_t index)>;

/// Aggregates top-1 success per split. A split without samples has rate 0.
EvalReport evaluate(const std::vector<EvalItem>& items, const TopPrediction& predict);

std::string report_json(const EvalReport& report);

}  // namespace graspmamba::geometry
