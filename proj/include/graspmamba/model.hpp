#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "graspmamba/backbone.hpp"
#include "graspmamba/fusion.hpp"
#include "graspmamba/grasp_head.hpp"
#include "graspmamba/text_encoder.hpp"

namespace graspmamba {

struct ModelConfig {
    std::size_t width = 8;         // C
    std::size_t fused_width = 8;   // C_f
    std::size_t text_dim = 64;     // C_T
    std::size_t vocab_size = 4096;
    std::size_t state_size = 8;    // N
    std::array<std::size_t, 4> depths{1, 1, 2, 2};
    std::size_t heads = 2;
    std::size_t mlp_ratio = 2;
    std::size_t head_hidden = 16;
    bool fusion = true;            // false: image-only pyramid (text path removed)
    double w_max = 150.0;          // maximum gripper opening in pixels
    double quality_threshold = 0.3;
    double smoothing_sigma = 1.0;
    std::uint64_t seed = 1;        // parameter initialization
    std::uint64_t text_seed = 0x7e57;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
    bool operator==(const ModelConfig&) const = default;
};

/// Backbone, fusion, head and the frozen text encoder.
struct GraspModel {
    ModelConfig config;
    backbone::BackboneParams backbone;
    fusion::FusionParams fusion;
    head::HeadParams head;
    text::TextEncoder text;

    /// Every trainable tensor, in a fixed order with stable names.
    void visit(const ParamVisitor& fn);
    std::vector<std::pair<std::string, Tensor>> parameters();
    std::size_t parameter_count();

    /// images: [B, 3, H, W] with H, W multiples of 32.
    head::GraspMaps forward(const Tensor& images, const std::vector<std::string>& prompts,
                            backbone::SsmMode mode = backbone::SsmMode::scan) const;
    head::DecodeOptions decode_options() const;
};

/// Weights are drawn from Rng(config.seed) and rounded to 32-bit floats so a
/// checkpoint reproduces them exactly.
GraspModel make_model(const ModelConfig& config);

// Rounds every parameter to the nearest 32-bit float in place.
void round_parameters_to_float(GraspModel& model);

}  // namespace graspmamba
