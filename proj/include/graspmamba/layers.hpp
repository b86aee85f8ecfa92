#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "graspmamba/rng.hpp"
#include "graspmamba/tensor.hpp"

namespace graspmamba {

// Called once per trainable tensor with its fully qualified name.
using ParamVisitor = std::function<void(const std::string& name, Tensor& t)>;

struct Conv2dParams {
    Tensor weight;  // [Cout, Cin, k, k]
    Tensor bias;    // [Cout]
    int stride = 1;
    int padding = 0;

    Tensor operator()(const Tensor& x) const {
        return conv2d(x, weight, bias, stride, padding);
    }
    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".weight", weight);
        fn(prefix + ".bias", bias);
    }
};

struct LinearParams {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]

    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".weight", weight);
        fn(prefix + ".bias", bias);
    }
};

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;

    Tensor operator()(const Tensor& x) const {
        return layer_norm(x, gamma, beta);
    }
    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".gamma", gamma);
        fn(prefix + ".beta", beta);
    }
};

// Kaiming-normal weights (fan-in), zero bias. Padding keeps odd kernels
// shape-preserving at stride 1.
Conv2dParams make_conv(std::size_t in, std::size_t out, std::size_t kernel,
                       int stride, Rng& rng, double gain = 2.0);
LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng,
                         double gain = 1.0);
LayerNormParams make_layer_norm(std::size_t dim);

Tensor random_normal(Shape shape, double stddev, Rng& rng,
                     bool requires_grad = true);

}  // namespace graspmamba
