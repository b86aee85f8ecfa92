#include "graspmamba/model.hpp"

#include "json.hpp"

#include "graspmamba/error.hpp"

namespace graspmamba {

std::string ModelConfig::to_json() const {
    nlohmann::json j{{"width", width},
                     {"fused_width", fused_width},
                     {"text_dim", text_dim},
                     {"vocab_size", vocab_size},
                     {"state_size", state_size},
                     {"depths", depths},
                     {"heads", heads},
                     {"mlp_ratio", mlp_ratio},
                     {"head_hidden", head_hidden},
                     {"fusion", fusion},
                     {"w_max", w_max},
                     {"quality_threshold", quality_threshold},
                     {"smoothing_sigma", smoothing_sigma},
                     {"seed", seed},
                     {"text_seed", text_seed}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    ModelConfig c;
    try {
        const auto j = nlohmann::json::parse(text);
        c.width = j.value("width", c.width);
        c.fused_width = j.value("fused_width", c.fused_width);
        c.text_dim = j.value("text_dim", c.text_dim);
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.state_size = j.value("state_size", c.state_size);
        c.depths = j.value("depths", c.depths);
        c.heads = j.value("heads", c.heads);
        c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
        c.head_hidden = j.value("head_hidden", c.head_hidden);
        c.fusion = j.value("fusion", c.fusion);
        c.w_max = j.value("w_max", c.w_max);
        c.quality_threshold = j.value("quality_threshold", c.quality_threshold);
        c.smoothing_sigma = j.value("smoothing_sigma", c.smoothing_sigma);
        c.seed = j.value("seed", c.seed);
        c.text_seed = j.value("text_seed", c.text_seed);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    for (std::size_t v : {c.width, c.fused_width, c.text_dim, c.vocab_size, c.state_size,
                          c.heads, c.mlp_ratio, c.head_hidden}) {
        if (v == 0) throw ArgumentError("model config: sizes must be positive");
    }
    if (!(c.w_max > 0.0)) throw ArgumentError("model config: w_max must be positive");
    return c;
}

void GraspModel::visit(const ParamVisitor& fn) {
    backbone.visit("backbone", fn);
    fusion.visit("fusion", fn);
    head.visit("head", fn);
}

std::vector<std::pair<std::string, Tensor>> GraspModel::parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
}

std::size_t GraspModel::parameter_count() {
    std::size_t n = 0;
    visit([&](const std::string&, Tensor& t) { n += t.numel(); });
    return n;
}

head::GraspMaps GraspModel::forward(const Tensor& images,
                                    const std::vector<std::string>& prompts,
                                    backbone::SsmMode mode) const {
    if (images.rank() != 4 || images.dim(0) != prompts.size()) {
        throw ShapeError("forward: expected [B, 3, H, W] images with B prompts, got " +
                         shape_str(images.shape()) + " and " + std::to_string(prompts.size()) +
                         " prompts");
    }
    // Fixed input standardization: [0, 1] -> roughly zero mean, unit spread.
    const Tensor x = scale(add(images, Tensor::full(images.shape(), -0.5)), 4.0);
    const auto pyramid = backbone::extract_pyramid(x, backbone, mode);
    const Tensor t = text.encode_batch(prompts);
    const Tensor fused = fusion::fuse_hierarchy(pyramid, t, fusion);
    return head::predict_maps(fused, head, images.dim(2), images.dim(3));
}

head::DecodeOptions GraspModel::decode_options() const {
    head::DecodeOptions o;
    o.quality_threshold = config.quality_threshold;
    o.smoothing_sigma = config.smoothing_sigma;
    return o;
}

void round_parameters_to_float(GraspModel& model) {
    model.visit([](const std::string&, Tensor& t) {
        for (double& v : t.mutable_data()) v = static_cast<double>(static_cast<float>(v));
    });
}

GraspModel make_model(const ModelConfig& config) {
    Rng rng(config.seed);
    backbone::BackboneConfig bc;
    bc.width = config.width;
    bc.depths = config.depths;
    bc.state_size = config.state_size;
    bc.heads = config.heads;
    bc.mlp_ratio = config.mlp_ratio;

    GraspModel m{config,
                 backbone::make_backbone(bc, rng),
                 {},
                 {},
                 text::TextEncoder({config.vocab_size, config.text_dim, config.text_seed})};
    const std::size_t c = config.width;
    m.fusion = fusion::make_fusion({c, 2 * c, 4 * c, 8 * c}, config.fused_width, config.text_dim,
                                   config.fusion, rng);
    m.head = head::make_head(config.fused_width, config.head_hidden, rng);
    round_parameters_to_float(m);
    return m;
}

}  // namespace graspmamba
