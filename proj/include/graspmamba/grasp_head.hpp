#pragma once

#include <cstddef>
#include <vector>

#include "graspmamba/geometry.hpp"
#include "graspmamba/layers.hpp"
#include "graspmamba/tensor.hpp"

namespace graspmamba::head {

/// Dense grasp maps, each [B, H, W]: quality in [0, 1], cos 2t and sin 2t in
/// [-1, 1], width in [0, 1] as a fraction of the maximum gripper opening.
struct GraspMaps {
    Tensor quality;
    Tensor cos2t;
    Tensor sin2t;
    Tensor width;

    std::size_t batch() const { return quality.dim(0); }
    std::size_t height() const { return quality.dim(1); }
    std::size_t width_px() const { return quality.dim(2); }
};

// Concatenates single-image maps into a batch.
GraspMaps stack_maps(const std::vector<GraspMaps>& maps);

struct HeadParams {
    Conv2dParams hidden;  // 1x1, C_f -> hidden
    Conv2dParams out;     // 1x1, hidden -> 4
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

HeadParams make_head(std::size_t fused_width, std::size_t hidden, Rng& rng);

/// Per-position two-layer MLP on F_1, output activations (sigmoid, tanh, tanh,
/// sigmoid), then bilinear upsampling to out_height x out_width, which must be
/// the same integer multiple of F_1's dims.
GraspMaps predict_maps(const Tensor& fused, const HeadParams& p,
                       std::size_t out_height, std::size_t out_width);

/// Paints quality 1 on the centre third (along w) of every rectangle, with
/// cos 2t, sin 2t and min(w, w_max) / w_max on the same support. Later
/// rectangles overwrite earlier ones. Pixel (col, row) sits at (x, y) =
/// (col, row). Returns a batch of one.
GraspMaps encode_targets(const std::vector<GraspRect>& grasps, std::size_t height,
                         std::size_t width, double w_max);

struct DecodeOptions {
    double quality_threshold = 0.3;  // tau_q, applied to the smoothed quality
    double smoothing_sigma = 1.0;    // Gaussian blur of quality; 0 disables
    int peak_radius = 2;             // local-maximum window half size
};

struct ScoredGrasp {
    GraspRect rect;
    double quality = 0.0;
};

/// Local maxima of the (smoothed) quality map above the threshold, sorted by
/// descending quality then row-major position, at most k. Each grasp sits at
/// the pixel nearest the centroid of its peak's cap (connected values within 2%
/// of the peak) and reports the peak quality; peaks sharing a cap yield one grasp. Angle from
/// atan2(sin 2t, cos 2t) / 2, width = width map * w_max, h = w / 2.
std::vector<ScoredGrasp> decode_grasps(const GraspMaps& maps, int k, double w_max,
                                       const DecodeOptions& options = {},
                                       std::size_t batch_index = 0);

// Separable Gaussian blur of a row-major H x W image, renormalized at borders.
std::vector<double> gaussian_blur(std::span<const double> image, std::size_t height,
                                  std::size_t width, double sigma);

}  // namespace graspmamba::head
