#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace graspmamba {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node;
using BackwardFn = std::function<void(const Node& out)>;

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first written
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;

    std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor of doubles with optional reverse-mode gradient
/// tracking.
///
/// Tensors are handles: copying a Tensor shares the underlying node. Every
/// operation returns a fresh tensor and never writes to its inputs, so at the
/// interface tensors behave as values. The only mutating entry points are
/// mutable_data() on leaves (used by optimizers and initializers) and the
/// gradient buffers.
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    // Leaves only; throws for tensors produced by an operation.
    std::span<double> mutable_data();
    double item() const;
    std::vector<double> to_vector() const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool is_leaf() const;

    // Accumulated gradient; all zeros when nothing has flowed into this tensor.
    std::vector<double> grad() const;
    Tensor grad_tensor() const;
    void zero_grad();

    // Copy of the values with no graph attached.
    Tensor detach() const;

    // Internal: used by operation implementations.
    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node)
        : node_(std::move(node)) {}

   private:
    std::shared_ptr<detail::Node> node_;
};

/// Computes d(loss)/d(leaf) for every requires_grad leaf reachable from
/// `loss` and accumulates it into the leaf's gradient. Intermediate gradients
/// are reset on every call, so zero_grad() on the leaves followed by another
/// backward() reproduces the same gradients.
void backward(const Tensor& loss);

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

bool grad_mode_enabled();

/// Builds the result of a differentiable operation. When grad mode is on and
/// any input requires a gradient, `fn` is recorded and later called with the
/// output node (data and grad populated); it must accumulate into the input
/// gradients via input_grad().
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, detail::BackwardFn fn);

// Gradient buffer of an operation input, or an empty span when the input does
// not require a gradient.
std::span<double> input_grad(const Tensor& input);

// ---------------------------------------------------------------------------
// Operations. All of them are pure: equal inputs give bit-identical outputs.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor reshape(const Tensor& a, Shape shape);

Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Mean over all elements of the smooth-L1 (delta = 1) penalty of pred - target.
Tensor smooth_l1(const Tensor& pred, const Tensor& target);

// a: [M, K] x b: [K, N], or batched [B, M, K] x [B, K, N].
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose_last2(const Tensor& a);
// x: [..., in], weight: [out, in], bias: [out] (optional).
Tensor linear(const Tensor& x, const Tensor& weight,
              const std::optional<Tensor>& bias);

Tensor softmax_last(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Concatenation and slicing along axis 1 of NCHW maps.
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count);
// Concatenation and slicing along the last axis.
Tensor concat_last(const std::vector<Tensor>& parts);
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t count);

// input: [B, Cin, H, W], weight: [Cout, Cin, kh, kw], bias: [Cout].
Tensor conv2d(const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias, int stride, int padding);

// Half-pixel-centers bilinear interpolation, output is scale x larger.
Tensor bilinear_upsample(const Tensor& input, int scale = 2);

// t: [B, C] -> [B, C, H, W], every spatial position holds t.
Tensor broadcast_spatial(const Tensor& t, std::size_t height,
                         std::size_t width);

// [B, C, H, W] <-> [B, H*W, C] with row-major token order.
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& tokens, std::size_t height,
                   std::size_t width);

// x: [B, L, D], weight: [D, K], bias: [D]. y[t] = b + sum_k w[k] x[t - k].
Tensor causal_depthwise_conv1d(const Tensor& x, const Tensor& weight,
                               const Tensor& bias);

}  // namespace graspmamba
