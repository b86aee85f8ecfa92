#include "graspmamba/backbone.hpp"

#include <cmath>
#include <string>

#include "graspmamba/error.hpp"

namespace graspmamba::backbone {

ssm::SSMParams MambaVisionParams::ssm_params() const {
    return {scale(exp(a_log), -1.0), b, c, log_delta};
}

void MambaVisionParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    norm1.visit(prefix + ".norm1", fn);
    in_proj.visit(prefix + ".in_proj", fn);
    fn(prefix + ".ssm_conv.weight", ssm_conv_weight);
    fn(prefix + ".ssm_conv.bias", ssm_conv_bias);
    fn(prefix + ".sym_conv.weight", sym_conv_weight);
    fn(prefix + ".sym_conv.bias", sym_conv_bias);
    fn(prefix + ".ssm.a_log", a_log);
    fn(prefix + ".ssm.b", b);
    fn(prefix + ".ssm.c", c);
    fn(prefix + ".ssm.log_delta", log_delta);
    out_proj.visit(prefix + ".out_proj", fn);
    norm2.visit(prefix + ".norm2", fn);
    mlp_in.visit(prefix + ".mlp_in", fn);
    mlp_out.visit(prefix + ".mlp_out", fn);
}

void MhsaParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    norm1.visit(prefix + ".norm1", fn);
    qkv.visit(prefix + ".qkv", fn);
    proj.visit(prefix + ".proj", fn);
    norm2.visit(prefix + ".norm2", fn);
    mlp_in.visit(prefix + ".mlp_in", fn);
    mlp_out.visit(prefix + ".mlp_out", fn);
}

void ConvBlockParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    conv1.visit(prefix + ".conv1", fn);
    conv2.visit(prefix + ".conv2", fn);
}

void StageParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t i = 0; i < downsample.size(); ++i)
        downsample[i].visit(prefix + ".down" + std::to_string(i), fn);
    for (std::size_t i = 0; i < conv_blocks.size(); ++i)
        conv_blocks[i].visit(prefix + ".conv" + std::to_string(i), fn);
    for (std::size_t i = 0; i < mamba_blocks.size(); ++i)
        mamba_blocks[i].visit(prefix + ".mamba" + std::to_string(i), fn);
    for (std::size_t i = 0; i < attention_blocks.size(); ++i)
        attention_blocks[i].visit(prefix + ".attn" + std::to_string(i), fn);
}

void BackboneParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t i = 0; i < stages.size(); ++i)
        stages[i].visit(prefix + ".stage" + std::to_string(i + 1), fn);
}

MambaVisionParams make_mambavision(std::size_t dim, const BackboneConfig& cfg,
                                   Rng& rng) {
    if (dim % 2 != 0) {
        throw ShapeError("mambavision: channel count must be even, got " +
                         std::to_string(dim));
    }
    const std::size_t half = dim / 2, k = cfg.conv1d_width;
    MambaVisionParams p;
    p.norm1 = make_layer_norm(dim);
    p.in_proj = make_linear(dim, dim, rng);
    const double conv_std = 1.0 / std::sqrt(static_cast<double>(k));
    p.ssm_conv_weight = random_normal({half, k}, conv_std, rng);
    p.ssm_conv_bias = Tensor::zeros({half}, true);
    p.sym_conv_weight = random_normal({half, k}, conv_std, rng);
    p.sym_conv_bias = Tensor::zeros({half}, true);

    auto sp = ssm::init_params(half, cfg.state_size, rng, cfg.ssm_init);
    std::vector<double> a_log(sp.a_diag.numel());
    for (std::size_t i = 0; i < a_log.size(); ++i)
        a_log[i] = std::log(-sp.a_diag.data()[i]);
    p.a_log = Tensor::from_data(sp.a_diag.shape(), std::move(a_log), true);
    p.b = sp.b;
    p.c = sp.c;
    p.log_delta = sp.log_delta;

    p.out_proj = make_linear(dim, dim, rng);
    p.norm2 = make_layer_norm(dim);
    p.mlp_in = make_linear(dim, dim * cfg.mlp_ratio, rng, 2.0);
    p.mlp_out = make_linear(dim * cfg.mlp_ratio, dim, rng);
    return p;
}

MhsaParams make_mhsa(std::size_t dim, const BackboneConfig& cfg, Rng& rng) {
    if (cfg.heads == 0 || dim % cfg.heads != 0) {
        throw ShapeError("mhsa: channel count " + std::to_string(dim) +
                         " not divisible by " + std::to_string(cfg.heads) +
                         " heads");
    }
    MhsaParams p;
    p.heads = cfg.heads;
    p.norm1 = make_layer_norm(dim);
    p.qkv = make_linear(dim, 3 * dim, rng);
    p.proj = make_linear(dim, dim, rng);
    p.norm2 = make_layer_norm(dim);
    p.mlp_in = make_linear(dim, dim * cfg.mlp_ratio, rng, 2.0);
    p.mlp_out = make_linear(dim * cfg.mlp_ratio, dim, rng);
    return p;
}

BackboneParams make_backbone(const BackboneConfig& cfg, Rng& rng) {
    if (cfg.width == 0) throw ArgumentError("backbone width must be >= 1");
    BackboneParams p;
    p.config = cfg;
    const std::size_t c = cfg.width;
    const std::array<std::size_t, 4> widths{c, 2 * c, 4 * c, 8 * c};

    p.stages[0].downsample.push_back(make_conv(3, c, 3, 2, rng));
    p.stages[0].downsample.push_back(make_conv(c, c, 3, 2, rng));
    for (std::size_t s = 1; s < 4; ++s)
        p.stages[s].downsample.push_back(
            make_conv(widths[s - 1], widths[s], 3, 2, rng));

    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t i = 0; i < cfg.depths[s]; ++i)
            p.stages[s].conv_blocks.push_back(
                {make_conv(widths[s], widths[s], 3, 1, rng),
                 make_conv(widths[s], widths[s], 3, 1, rng, 1.0)});

    for (std::size_t s = 2; s < 4; ++s) {
        const std::size_t n_mamba = (cfg.depths[s] + 1) / 2;
        for (std::size_t i = 0; i < cfg.depths[s]; ++i) {
            if (i < n_mamba)
                p.stages[s].mamba_blocks.push_back(
                    make_mambavision(widths[s], cfg, rng));
            else
                p.stages[s].attention_blocks.push_back(
                    make_mhsa(widths[s], cfg, rng));
        }
    }
    return p;
}

Tensor ssm_branch(const Tensor& u, const MambaVisionParams& p, SsmMode mode) {
    const auto d = ssm::discretize(p.ssm_params());
    if (mode == SsmMode::scan) return ssm::scan(d, p.c, u);
    const long len = static_cast<long>(u.dim(u.rank() - 2));
    return ssm::conv_apply(u, ssm::ssm_kernel(d, p.c, len));
}

Tensor mambavision_block(const Tensor& tokens, const MambaVisionParams& p,
                         SsmMode mode) {
    if (tokens.rank() != 3) {
        throw ShapeError("mambavision_block: expected [B, L, D], got " +
                         shape_str(tokens.shape()));
    }
    const std::size_t dim = tokens.dim(2);
    if (dim % 2 != 0) {
        throw ShapeError("mambavision_block: odd channel count " +
                         std::to_string(dim));
    }
    if (p.in_proj.weight.dim(1) != dim) {
        throw ShapeError("mambavision_block: block built for " +
                         std::to_string(p.in_proj.weight.dim(1)) +
                         " channels, input has " + std::to_string(dim));
    }
    const std::size_t half = dim / 2;
    Tensor z = p.in_proj(p.norm1(tokens));
    Tensor u_ssm = silu(causal_depthwise_conv1d(slice_last(z, 0, half),
                                                p.ssm_conv_weight, p.ssm_conv_bias));
    Tensor u_sym = silu(causal_depthwise_conv1d(slice_last(z, half, half),
                                                p.sym_conv_weight, p.sym_conv_bias));
    Tensor mixed = p.out_proj(concat_last({ssm_branch(u_ssm, p, mode), u_sym}));
    Tensor x = add(tokens, mixed);
    return add(x, p.mlp_out(silu(p.mlp_in(p.norm2(x)))));
}

namespace {

void check_mhsa_input(const Tensor& tokens, const MhsaParams& p) {
    if (tokens.rank() != 3) {
        throw ShapeError("mhsa_block: expected [B, L, D], got " +
                         shape_str(tokens.shape()));
    }
    const std::size_t dim = tokens.dim(2);
    if (p.heads == 0 || dim % p.heads != 0) {
        throw ShapeError("mhsa_block: " + std::to_string(dim) +
                         " channels not divisible by " +
                         std::to_string(p.heads) + " heads");
    }
}

// Attention output (before the output projection) and per-head weights.
Tensor attend(const Tensor& tokens, const MhsaParams& p,
              std::vector<Tensor>* weights) {
    check_mhsa_input(tokens, p);
    const std::size_t dim = tokens.dim(2), head_dim = dim / p.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    Tensor qkv = p.qkv(p.norm1(tokens));
    std::vector<Tensor> outs;
    for (std::size_t h = 0; h < p.heads; ++h) {
        Tensor q = slice_last(qkv, h * head_dim, head_dim);
        Tensor k = slice_last(qkv, dim + h * head_dim, head_dim);
        Tensor v = slice_last(qkv, 2 * dim + h * head_dim, head_dim);
        Tensor att = softmax_last(scale(matmul(q, transpose_last2(k)), inv_sqrt));
        if (weights) weights->push_back(att);
        outs.push_back(matmul(att, v));
    }
    return outs.size() == 1 ? outs[0] : concat_last(outs);
}

}  // namespace

Tensor mhsa_block(const Tensor& tokens, const MhsaParams& p) {
    Tensor x = add(tokens, p.proj(attend(tokens, p, nullptr)));
    return add(x, p.mlp_out(silu(p.mlp_in(p.norm2(x)))));
}

std::vector<Tensor> attention_weights(const Tensor& tokens, const MhsaParams& p) {
    std::vector<Tensor> weights;
    attend(tokens, p, &weights);
    return weights;
}

std::array<std::array<std::size_t, 3>, 4> pyramid_shapes(std::size_t height,
                                                         std::size_t width,
                                                         std::size_t channels) {
    if (height < 32 || width < 32 || height % 32 != 0 || width % 32 != 0) {
        throw ShapeError("image dimensions " + std::to_string(height) + "x" +
                         std::to_string(width) +
                         " must be positive multiples of 32");
    }
    std::array<std::array<std::size_t, 3>, 4> out{};
    for (std::size_t l = 0; l < 4; ++l) {
        const std::size_t f = std::size_t{4} << l;
        out[l] = {height / f, width / f, channels << l};
    }
    return out;
}

FeaturePyramid extract_pyramid(const Tensor& image, const BackboneParams& p,
                               SsmMode mode) {
    if (image.rank() != 4 || image.dim(1) != 3) {
        throw ShapeError("extract_pyramid: expected [B, 3, H, W], got " +
                         shape_str(image.shape()));
    }
    pyramid_shapes(image.dim(2), image.dim(3), p.config.width);

    FeaturePyramid pyramid;
    Tensor x = image;
    for (std::size_t s = 0; s < 4; ++s) {
        const StageParams& stage = p.stages[s];
        for (const auto& down : stage.downsample) {
            x = down(x);
            if (s < 2) x = silu(x);
        }
        for (const auto& block : stage.conv_blocks)
            x = add(x, block.conv2(silu(block.conv1(x))));
        if (!stage.mamba_blocks.empty() || !stage.attention_blocks.empty()) {
            const std::size_t h = x.dim(2), w = x.dim(3);
            Tensor tokens = to_tokens(x);
            for (const auto& block : stage.mamba_blocks)
                tokens = mambavision_block(tokens, block, mode);
            for (const auto& block : stage.attention_blocks)
                tokens = mhsa_block(tokens, block);
            x = from_tokens(tokens, h, w);
        }
        pyramid.levels.push_back(x);
    }
    return pyramid;
}

}  // namespace graspmamba::backbone
