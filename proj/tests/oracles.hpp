#pragma once

#include <cmath>
#include <unsupported/Eigen/MatrixFunctions>

#include "graspmamba/geometry.hpp"

namespace oracles {

// Dense zero-order hold through the augmented matrix
// expm([[dt A, dt B], [0, 0]]) = [[A-bar, B-bar], [0, 1]] with A = diag(a).
inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> zoh_dense(const Eigen::VectorXd& a,
                                                             const Eigen::VectorXd& b,
                                                             double dt) {
    const long n = a.size();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n + 1, n + 1);
    m.topLeftCorner(n, n) = dt * Eigen::MatrixXd(a.asDiagonal());
    m.topRightCorner(n, 1) = dt * b;
    const Eigen::MatrixXd e = m.exp();
    return {e.topLeftCorner(n, n), e.topRightCorner(n, 1)};
}

inline bool inside(const graspmamba::GraspRect& g, double px, double py) {
    const double dx = px - g.x, dy = py - g.y;
    const double u = dx * std::cos(g.theta) + dy * std::sin(g.theta);
    const double v = -dx * std::sin(g.theta) + dy * std::cos(g.theta);
    return std::abs(u) <= g.w / 2 && std::abs(v) <= g.h / 2;
}

// IoU by sampling a res x res grid of cell centres over the union bounding box.
inline double raster_iou(const graspmamba::GraspRect& a, const graspmamba::GraspRect& b,
                         int res = 512) {
    double lo_x = 1e300, lo_y = 1e300, hi_x = -1e300, hi_y = -1e300;
    for (const auto& g : {a, b})
        for (const auto& p : graspmamba::geometry::rect_corners(g)) {
            lo_x = std::min(lo_x, p.x), hi_x = std::max(hi_x, p.x);
            lo_y = std::min(lo_y, p.y), hi_y = std::max(hi_y, p.y);
        }
    const double sx = (hi_x - lo_x) / res, sy = (hi_y - lo_y) / res;
    long inter = 0, uni = 0;
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
            const double px = lo_x + (j + 0.5) * sx, py = lo_y + (i + 0.5) * sy;
            const bool ia = inside(a, px, py), ib = inside(b, px, py);
            inter += ia && ib;
            uni += ia || ib;
        }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace oracles
