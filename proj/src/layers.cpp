#include "graspmamba/layers.hpp"

#include <cmath>

namespace graspmamba {

Tensor random_normal(Shape shape, double stddev, Rng& rng, bool requires_grad) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = rng.normal() * stddev;
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

Conv2dParams make_conv(std::size_t in, std::size_t out, std::size_t kernel,
                       int stride, Rng& rng, double gain) {
    const double fan_in = static_cast<double>(in * kernel * kernel);
    Conv2dParams p;
    p.weight = random_normal({out, in, kernel, kernel}, std::sqrt(gain / fan_in),
                             rng);
    p.bias = Tensor::zeros({out}, true);
    p.stride = stride;
    p.padding = static_cast<int>(kernel / 2);
    return p;
}

LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng,
                         double gain) {
    LinearParams p;
    p.weight = random_normal({out, in},
                             std::sqrt(gain / static_cast<double>(in)), rng);
    p.bias = Tensor::zeros({out}, true);
    return p;
}

LayerNormParams make_layer_norm(std::size_t dim) {
    return {Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

}  // namespace graspmamba
