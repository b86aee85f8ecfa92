#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "graspmamba/layers.hpp"
#include "graspmamba/ssm.hpp"
#include "graspmamba/tensor.hpp"

namespace graspmamba::backbone {

struct BackboneConfig {
    std::size_t width = 8;  // C; stage l has C * 2^(l-1) channels
    std::array<std::size_t, 4> depths{1, 1, 2, 2};
    std::size_t state_size = 8;  // N
    std::size_t heads = 2;
    std::size_t mlp_ratio = 2;
    std::size_t conv1d_width = 3;
    ssm::SSMInit ssm_init{};
};

/// Per-stage feature maps X_1..X_4 at H/4 .. H/32 with C, 2C, 4C, 8C channels.
struct FeaturePyramid {
    std::vector<Tensor> levels;
};

// Whether the SSM branch runs the recurrence or the equivalent causal
// convolution with the materialized kernel.
enum class SsmMode { scan, convolution };

/// Token mixer with an SSM branch and a symmetric branch without SSM, each on
/// half of the channels, followed by an MLP. Both parts are pre-norm residual.
struct MambaVisionParams {
    LayerNormParams norm1;
    LinearParams in_proj;  // D -> D, split into the two branch halves
    Tensor ssm_conv_weight, ssm_conv_bias;  // [D/2, K], [D/2]
    Tensor sym_conv_weight, sym_conv_bias;  // [D/2, K], [D/2]
    Tensor a_log;                           // a_diag = -exp(a_log), [D/2, N]
    Tensor b, c;                            // [D/2, N]
    Tensor log_delta;                       // [D/2]
    LinearParams out_proj;                  // D -> D
    LayerNormParams norm2;
    LinearParams mlp_in, mlp_out;

    ssm::SSMParams ssm_params() const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct MhsaParams {
    std::size_t heads = 1;
    LayerNormParams norm1;
    LinearParams qkv;   // D -> 3D
    LinearParams proj;  // D -> D
    LayerNormParams norm2;
    LinearParams mlp_in, mlp_out;

    void visit(const std::string& prefix, const ParamVisitor& fn);
};

// x + conv(silu(conv(x))), shape preserving.
struct ConvBlockParams {
    Conv2dParams conv1, conv2;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct StageParams {
    std::vector<Conv2dParams> downsample;  // stride-2 3x3 convolutions
    std::vector<ConvBlockParams> conv_blocks;
    std::vector<MambaVisionParams> mamba_blocks;
    std::vector<MhsaParams> attention_blocks;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct BackboneParams {
    BackboneConfig config;
    std::array<StageParams, 4> stages;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

MambaVisionParams make_mambavision(std::size_t dim, const BackboneConfig& cfg,
                                   Rng& rng);
MhsaParams make_mhsa(std::size_t dim, const BackboneConfig& cfg, Rng& rng);

/// Stages 1-2: convolutional (stem of two stride-2 convolutions, then a stride-2
/// convolution into stage 2). Stages 3-4: stride-2 convolution, then
/// ceil(depth/2) MambaVision blocks followed by MHSA blocks.
BackboneParams make_backbone(const BackboneConfig& cfg, Rng& rng);

/// SSM branch of the mixer on already-convolved, activated input u: [B, L, D/2].
Tensor ssm_branch(const Tensor& u, const MambaVisionParams& p,
                  SsmMode mode = SsmMode::scan);

Tensor mambavision_block(const Tensor& tokens, const MambaVisionParams& p,
                         SsmMode mode = SsmMode::scan);

Tensor mhsa_block(const Tensor& tokens, const MhsaParams& p);

// Softmax attention probabilities per head, each [B, L, L].
std::vector<Tensor> attention_weights(const Tensor& tokens, const MhsaParams& p);

FeaturePyramid extract_pyramid(const Tensor& image, const BackboneParams& p,
                               SsmMode mode = SsmMode::scan);

// Closed-form (H, W, C) of every pyramid level.
std::array<std::array<std::size_t, 3>, 4> pyramid_shapes(std::size_t height,
                                                         std::size_t width,
                                                         std::size_t channels);

}  // namespace graspmamba::backbone
