#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "graspmamba/backbone.hpp"
#include "graspmamba/layers.hpp"
#include "graspmamba/tensor.hpp"

namespace graspmamba::fusion {

/// Parameters of one pyramid level.
///
/// With text enabled:  Z = concat(image_proj(X), text_proj(T_exp)),
///                     Phi = mix(Z)                        (3x3 conv)
/// Without text (ablation): the text projection is replaced by a second 1x1
/// projection of X, so mix still sees 2 * C_f channels.
/// `up` is the 3x3 convolution of the upscaling operator that carries this
/// level's fused output to the next shallower level; level 1 has none.
struct LevelParams {
    Conv2dParams image_proj;  // 1x1, C_l -> C_f
    Conv2dParams text_proj;   // 1x1, C_T -> C_f (or C_l -> C_f without text)
    Conv2dParams mix;         // 3x3, 2 C_f -> C_f
    std::optional<Conv2dParams> up;  // 3x3, C_f -> C_f

    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct FusionParams {
    bool use_text = true;
    std::size_t fused_width = 0;  // C_f
    std::vector<LevelParams> levels;

    void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// level_widths: C_l per level, text_dim: C_T.
FusionParams make_fusion(const std::vector<std::size_t>& level_widths,
                         std::size_t fused_width, std::size_t text_dim,
                         bool use_text, Rng& rng);

/// Phi_l(X_l, T). x: [B, C_l, H_l, W_l], text: [B, C_T] (ignored without text).
Tensor fuse_level(const Tensor& x, const Tensor& text, const LevelParams& p,
                  bool use_text = true);

/// U(F) = BilinearUpsample(Conv3x3(F)), doubling both spatial dims.
Tensor upscale(const Tensor& f, const Conv2dParams& conv);

/// Intermediates of the top-down recursion, ordered from level 1.
struct FusionTrace {
    std::vector<Tensor> phi;       // Phi_l
    std::vector<Tensor> upscaled;  // U_{l+1}(F_{l+1}) for l < L, undefined at L
    std::vector<Tensor> fused;     // F_l
};

/// F_L = Phi_L; F_l = Phi_l + U_{l+1}(F_{l+1}). Returns F_1.
Tensor fuse_hierarchy(const backbone::FeaturePyramid& pyramid, const Tensor& text,
                      const FusionParams& p, FusionTrace* trace = nullptr);

}  // namespace graspmamba::fusion
