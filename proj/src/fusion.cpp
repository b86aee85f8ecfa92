#include "graspmamba/fusion.hpp"

#include <string>

#include "graspmamba/error.hpp"

namespace graspmamba::fusion {

void LevelParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    image_proj.visit(prefix + ".image_proj", fn);
    text_proj.visit(prefix + ".text_proj", fn);
    mix.visit(prefix + ".mix", fn);
    if (up) up->visit(prefix + ".up", fn);
}

void FusionParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t l = 0; l < levels.size(); ++l)
        levels[l].visit(prefix + ".level" + std::to_string(l + 1), fn);
}

FusionParams make_fusion(const std::vector<std::size_t>& level_widths,
                         std::size_t fused_width, std::size_t text_dim,
                         bool use_text, Rng& rng) {
    if (level_widths.empty() || fused_width == 0) {
        throw ArgumentError("make_fusion: need >= 1 level and C_f >= 1");
    }
    FusionParams p;
    p.use_text = use_text;
    p.fused_width = fused_width;
    for (std::size_t l = 0; l < level_widths.size(); ++l) {
        const std::size_t width = level_widths[l];
        LevelParams lp;
        lp.image_proj = make_conv(width, fused_width, 1, 1, rng, 1.0);
        lp.text_proj =
            make_conv(use_text ? text_dim : width, fused_width, 1, 1, rng, 1.0);
        lp.mix = make_conv(2 * fused_width, fused_width, 3, 1, rng, 1.0);
        if (l > 0) lp.up = make_conv(fused_width, fused_width, 3, 1, rng, 1.0);
        p.levels.push_back(std::move(lp));
    }
    return p;
}

Tensor fuse_level(const Tensor& x, const Tensor& text, const LevelParams& p,
                  bool use_text) {
    if (x.rank() != 4) {
        throw ShapeError("fuse_level: expected [B, C, H, W], got " +
                         shape_str(x.shape()));
    }
    Tensor image_part = p.image_proj(x);
    Tensor second;
    if (use_text) {
        if (text.rank() != 2 || text.dim(0) != x.dim(0)) {
            throw ShapeError("fuse_level: text features " + shape_str(text.shape()) +
                             " do not match batch of " + shape_str(x.shape()));
        }
        const std::size_t cf = p.text_proj.weight.dim(0);
        const std::size_t ct = p.text_proj.weight.dim(1);
        if (text.dim(1) != ct) {
            throw ShapeError("fuse_level: text width " + std::to_string(text.dim(1)) +
                             ", projection expects " + std::to_string(ct));
        }
        // A 1x1 convolution of the spatially expanded text equals expanding the
        // per-sample linear projection; the latter avoids H*W redundant products.
        Tensor projected =
            linear(text, reshape(p.text_proj.weight, {cf, ct}), p.text_proj.bias);
        second = broadcast_spatial(projected, x.dim(2), x.dim(3));
    } else {
        second = p.text_proj(x);
    }
    return p.mix(concat_channels({image_part, second}));
}

Tensor upscale(const Tensor& f, const Conv2dParams& conv) {
    return bilinear_upsample(conv(f), 2);
}

Tensor fuse_hierarchy(const backbone::FeaturePyramid& pyramid, const Tensor& text,
                      const FusionParams& p, FusionTrace* trace) {
    const std::size_t n = pyramid.levels.size();
    if (n == 0 || n > p.levels.size()) {
        throw ShapeError("fuse_hierarchy: pyramid has " + std::to_string(n) +
                         " levels, fusion has " + std::to_string(p.levels.size()));
    }
    for (std::size_t l = 0; l + 1 < n; ++l) {
        const auto& a = pyramid.levels[l].shape();
        const auto& b = pyramid.levels[l + 1].shape();
        if (a.size() != 4 || b.size() != 4 || a[2] != 2 * b[2] || a[3] != 2 * b[3]) {
            throw ShapeError("fuse_hierarchy: levels " + std::to_string(l + 1) +
                             " and " + std::to_string(l + 2) + " are not dyadic (" +
                             shape_str(a) + " vs " + shape_str(b) + ")");
        }
    }
    if (trace) {
        trace->phi.assign(n, Tensor());
        trace->upscaled.assign(n, Tensor());
        trace->fused.assign(n, Tensor());
    }
    Tensor f = fuse_level(pyramid.levels[n - 1], text, p.levels[n - 1], p.use_text);
    if (trace) trace->phi[n - 1] = trace->fused[n - 1] = f;
    for (std::size_t l = n - 1; l-- > 0;) {
        Tensor phi = fuse_level(pyramid.levels[l], text, p.levels[l], p.use_text);
        Tensor up = upscale(f, *p.levels[l + 1].up);
        f = add(phi, up);
        if (trace) {
            trace->phi[l] = phi;
            trace->upscaled[l] = up;
            trace->fused[l] = f;
        }
    }
    return f;
}

}  // namespace graspmamba::fusion
