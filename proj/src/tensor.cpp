#include "graspmamba/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "graspmamba/error.hpp"

namespace graspmamba {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

std::span<double> Node::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> data,
                                       bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return node;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " + shape_str(a.shape()));
    }
}

template <typename F>
Tensor unary(const Tensor& a, F f) {
    std::vector<double> out(a.numel());
    auto in = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return Tensor(new_node(a.shape(), std::move(out), false));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> data(shape_numel(shape), value);
    return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
    return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(new_node({}, {value}, requires_grad));
}

const Shape& Tensor::shape() const {
    if (!node_) throw ArgumentError("use of undefined tensor");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
    if (!node_) throw ArgumentError("use of undefined tensor");
    return node_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!node_) throw ArgumentError("use of undefined tensor");
    if (!node_->is_leaf) {
        throw ArgumentError("mutable_data() is only available on leaf tensors");
    }
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
}

std::vector<double> Tensor::to_vector() const {
    auto d = data();
    return {d.begin(), d.end()};
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    if (!node_) throw ArgumentError("use of undefined tensor");
    if (!node_->is_leaf) {
        throw ArgumentError("requires_grad can only be set on leaf tensors");
    }
    node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return node_ && node_->is_leaf; }

std::vector<double> Tensor::grad() const {
    if (!node_) throw ArgumentError("use of undefined tensor");
    if (node_->grad.empty()) return std::vector<double>(node_->data.size(), 0.0);
    return node_->grad;
}

Tensor Tensor::grad_tensor() const { return from_data(shape(), grad()); }

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return from_data(shape(), to_vector()); }

// ---------------------------------------------------------------------------
// Autograd

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
    g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, detail::BackwardFn fn) {
    auto node = new_node(std::move(shape), std::move(data), false);
    node->is_leaf = false;
    if (!g_grad_enabled) return Tensor(node);
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (!any) return Tensor(node);
    node->requires_grad = true;
    for (const auto& t : inputs) {
        if (t.requires_grad()) node->parents.push_back(t.node());
    }
    node->backward = std::move(fn);
    return Tensor(node);
}

std::span<double> input_grad(const Tensor& input) {
    if (!input.requires_grad()) return {};
    return input.node()->grad_buffer();
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ArgumentError("backward() requires a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape())
                                            : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order) {
        if (!node->is_leaf) node->grad.assign(node->data.size(), 0.0);
    }
    auto root_grad = loss.node()->grad_buffer();
    root_grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return make_result(a.shape(), std::move(out), {a, b},
                       [a, b](const detail::Node& o) {
                           for (const auto* t : {&a, &b}) {
                               auto g = input_grad(*t);
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   g[i] += o.grad[i];
                           }
                       });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return make_result(a.shape(), std::move(out), {a, b},
                       [a, b](const detail::Node& o) {
                           auto ga = input_grad(a);
                           for (std::size_t i = 0; i < ga.size(); ++i)
                               ga[i] += o.grad[i];
                           auto gb = input_grad(b);
                           for (std::size_t i = 0; i < gb.size(); ++i)
                               gb[i] -= o.grad[i];
                       });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return make_result(a.shape(), std::move(out), {a, b},
                       [a, b](const detail::Node& o) {
                           auto x = a.data(), y = b.data();
                           auto ga = input_grad(a);
                           for (std::size_t i = 0; i < ga.size(); ++i)
                               ga[i] += o.grad[i] * y[i];
                           auto gb = input_grad(b);
                           for (std::size_t i = 0; i < gb.size(); ++i)
                               gb[i] += o.grad[i] * x[i];
                       });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    return make_result(a.shape(), std::move(out), {a},
                       [a, factor](const detail::Node& o) {
                           auto g = input_grad(a);
                           for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += o.grad[i] * factor;
                       });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) +
                         " as " + shape_str(shape));
    }
    return make_result(std::move(shape), a.to_vector(), {a},
                       [a](const detail::Node& o) {
                           auto g = input_grad(a);
                           for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += o.grad[i];
                       });
}

Tensor silu(const Tensor& a) {
    std::vector<double> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x[i] / (1.0 + std::exp(-x[i]));
    return make_result(a.shape(), std::move(out), {a},
                       [a](const detail::Node& o) {
                           auto x = a.data();
                           auto g = input_grad(a);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               double s = 1.0 / (1.0 + std::exp(-x[i]));
                               g[i] += o.grad[i] * s * (1.0 + x[i] * (1.0 - s));
                           }
                       });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    return make_result(a.shape(), std::move(out), {a},
                       [a](const detail::Node& o) {
                           auto g = input_grad(a);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               double s = o.data[i];
                               g[i] += o.grad[i] * s * (1.0 - s);
                           }
                       });
}

Tensor tanh(const Tensor& a) {
    std::vector<double> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
    return make_result(a.shape(), std::move(out), {a},
                       [a](const detail::Node& o) {
                           auto g = input_grad(a);
                           for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += o.grad[i] * (1.0 - o.data[i] * o.data[i]);
                       });
}

Tensor exp(const Tensor& a) {
    std::vector<double> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
    return make_result(a.shape(), std::move(out), {a},
                       [a](const detail::Node& o) {
                           auto g = input_grad(a);
                           for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += o.grad[i] * o.data[i];
                       });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result({}, {s}, {a}, [a](const detail::Node& o) {
        auto g = input_grad(a);
        for (auto& v : g) v += o.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean of empty tensor");
    double s = 0.0;
    for (double v : a.data()) s += v;
    const double n = static_cast<double>(a.numel());
    return make_result({}, {s / n}, {a}, [a, n](const detail::Node& o) {
        auto g = input_grad(a);
        for (auto& v : g) v += o.grad[0] / n;
    });
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "smooth_l1");
    if (pred.numel() == 0) throw ShapeError("smooth_l1 of empty tensor");
    auto p = pred.data(), t = target.data();
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double d = std::abs(p[i] - t[i]);
        s += d < 1.0 ? 0.5 * d * d : d - 0.5;
    }
    const double n = static_cast<double>(pred.numel());
    return make_result(
        {}, {s / n}, {pred, target}, [pred, target, n](const detail::Node& o) {
            auto p = pred.data(), t = target.data();
            auto gp = input_grad(pred), gt = input_grad(target);
            for (std::size_t i = 0; i < p.size(); ++i) {
                double d = p[i] - t[i];
                double dd = std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
                dd *= o.grad[0] / n;
                if (!gp.empty()) gp[i] += dd;
                if (!gt.empty()) gt[i] -= dd;
            }
        });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace {

// c[M,N] += a[M,K] * b[K,N] with optional transposes of the stored operands.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n, bool trans_a, bool trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double av = trans_a ? a[p * m + i] : a[i * k + p];
            if (av == 0.0) continue;
            if (!trans_b) {
                const double* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
            }
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
        throw ShapeError("matmul: unsupported shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    const bool batched = a.rank() == 3;
    const std::size_t batch = batched ? a.dim(0) : 1;
    if (batched && b.dim(0) != batch) {
        throw ShapeError("matmul: batch mismatch " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    const std::size_t n = b.dim(b.rank() - 1);
    if (b.dim(b.rank() - 2) != k) {
        throw ShapeError("matmul: inner dimension mismatch " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<double> out(batch * m * n, 0.0);
    for (std::size_t i = 0; i < batch; ++i) {
        gemm_acc(a.data().data() + i * m * k, b.data().data() + i * k * n,
                 out.data() + i * m * n, m, k, n, false, false);
    }
    Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
    return make_result(
        std::move(shape), std::move(out), {a, b},
        [a, b, batch, m, k, n](const detail::Node& o) {
            auto ga = input_grad(a), gb = input_grad(b);
            for (std::size_t i = 0; i < batch; ++i) {
                const double* go = o.grad.data() + i * m * n;
                if (!ga.empty()) {
                    // dA = dC * B^T
                    gemm_acc(go, b.data().data() + i * k * n,
                             ga.data() + i * m * k, m, n, k, false, true);
                }
                if (!gb.empty()) {
                    // dB = A^T * dC
                    gemm_acc(a.data().data() + i * m * k, go,
                             gb.data() + i * k * n, k, m, n, true, false);
                }
            }
        });
}

Tensor transpose_last2(const Tensor& a) {
    if (a.rank() != 2 && a.rank() != 3) {
        throw ShapeError("transpose_last2: unsupported shape " +
                         shape_str(a.shape()));
    }
    const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
    const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
    std::vector<double> out(a.numel());
    auto x = a.data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
                out[b * r * c + j * r + i] = x[b * r * c + i * c + j];
    Shape shape = a.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    return make_result(std::move(shape), std::move(out), {a},
                       [a, batch, r, c](const detail::Node& o) {
                           auto g = input_grad(a);
                           for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j)
                                       g[b * r * c + i * c + j] +=
                                           o.grad[b * r * c + j * r + i];
                       });
}

Tensor linear(const Tensor& x, const Tensor& weight,
              const std::optional<Tensor>& bias) {
    require_rank(weight, 2, "linear weight");
    if (x.rank() == 0) throw ShapeError("linear: scalar input");
    const std::size_t in = x.dim(x.rank() - 1);
    const std::size_t out_f = weight.dim(0);
    if (weight.dim(1) != in) {
        throw ShapeError("linear: input features " + std::to_string(in) +
                         " vs weight " + shape_str(weight.shape()));
    }
    if (bias && bias->shape() != Shape{out_f}) {
        throw ShapeError("linear: bias shape " + shape_str(bias->shape()));
    }
    const std::size_t rows = x.numel() / std::max<std::size_t>(in, 1);
    std::vector<double> out(rows * out_f, 0.0);
    auto xd = x.data(), wd = weight.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * in;
        for (std::size_t o = 0; o < out_f; ++o) {
            const double* wr = wd.data() + o * in;
            double s = bias ? bias->data()[o] : 0.0;
            for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
            out[r * out_f + o] = s;
        }
    }
    Shape shape = x.shape();
    shape.back() = out_f;
    std::vector<Tensor> inputs{x, weight};
    if (bias) inputs.push_back(*bias);
    return make_result(
        std::move(shape), std::move(out), std::move(inputs),
        [x, weight, bias, rows, in, out_f](const detail::Node& o) {
            auto xd = x.data(), wd = weight.data();
            auto gx = input_grad(x), gw = input_grad(weight);
            auto gb = bias ? input_grad(*bias) : std::span<double>{};
            for (std::size_t r = 0; r < rows; ++r) {
                const double* go = o.grad.data() + r * out_f;
                const double* xr = xd.data() + r * in;
                for (std::size_t f = 0; f < out_f; ++f) {
                    double g = go[f];
                    if (g == 0.0) continue;
                    if (!gb.empty()) gb[f] += g;
                    if (!gw.empty()) {
                        double* gwr = gw.data() + f * in;
                        for (std::size_t i = 0; i < in; ++i) gwr[i] += g * xr[i];
                    }
                    if (!gx.empty()) {
                        const double* wr = wd.data() + f * in;
                        double* gxr = gx.data() + r * in;
                        for (std::size_t i = 0; i < in; ++i) gxr[i] += g * wr[i];
                    }
                }
            }
        });
}

Tensor softmax_last(const Tensor& a) {
    if (a.rank() == 0) throw ShapeError("softmax_last: scalar input");
    const std::size_t n = a.dim(a.rank() - 1);
    const std::size_t rows = n ? a.numel() / n : 0;
    std::vector<double> out(a.numel());
    auto x = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * n;
        double* yr = out.data() + r * n;
        double mx = *std::max_element(xr, xr + n);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            s += yr[i];
        }
        for (std::size_t i = 0; i < n; ++i) yr[i] /= s;
    }
    return make_result(a.shape(), std::move(out), {a},
                       [a, rows, n](const detail::Node& o) {
                           auto g = input_grad(a);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* y = o.data.data() + r * n;
                               const double* go = o.grad.data() + r * n;
                               double dot = 0.0;
                               for (std::size_t i = 0; i < n; ++i)
                                   dot += go[i] * y[i];
                               for (std::size_t i = 0; i < n; ++i)
                                   g[r * n + i] += y[i] * (go[i] - dot);
                           }
                       });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = x.dim(x.rank() - 1);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw ShapeError("layer_norm: affine parameters must have shape [" +
                         std::to_string(d) + "]");
    }
    const std::size_t rows = d ? x.numel() / d : 0;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    auto xd = x.data(), gd = gamma.data(), bd = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) {
            xhat[r * d + i] = (xr[i] - mu) * inv_std[r];
            out[r * d + i] = xhat[r * d + i] * gd[i] + bd[i];
        }
    }
    return make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, rows, d, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](const detail::Node& o) {
            auto gd = gamma.data();
            auto gx = input_grad(x), gg = input_grad(gamma),
                 gb = input_grad(beta);
            const double dn = static_cast<double>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* go = o.grad.data() + r * d;
                const double* xh = xhat.data() + r * d;
                double s1 = 0.0, s2 = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    if (!gg.empty()) gg[i] += go[i] * xh[i];
                    if (!gb.empty()) gb[i] += go[i];
                    double gxh = go[i] * gd[i];
                    s1 += gxh;
                    s2 += gxh * xh[i];
                }
                if (gx.empty()) continue;
                for (std::size_t i = 0; i < d; ++i) {
                    double gxh = go[i] * gd[i];
                    gx[r * d + i] +=
                        inv_std[r] * (gxh - s1 / dn - xh[i] * s2 / dn);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Concatenation / slicing

namespace {

// Views a tensor as [outer, axis, inner] around `axis`.
struct AxisView {
    std::size_t outer, axis, inner;
};

AxisView axis_view(const Tensor& t, std::size_t axis) {
    const auto& s = t.shape();
    AxisView v{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

Tensor concat_axis(const std::vector<Tensor>& parts, std::size_t axis,
                   const char* op) {
    if (parts.empty()) throw ShapeError(std::string(op) + ": no inputs");
    Shape shape = parts[0].shape();
    if (shape.size() <= axis) {
        throw ShapeError(std::string(op) + ": rank too small " +
                         shape_str(shape));
    }
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != shape.size()) {
            throw ShapeError(std::string(op) + ": rank mismatch");
        }
        total += s[axis];
        s[axis] = shape[axis];
        if (s != shape) {
            throw ShapeError(std::string(op) + ": incompatible shapes " +
                             shape_str(parts[0].shape()) + " and " +
                             shape_str(p.shape()));
        }
    }
    shape[axis] = total;
    const AxisView base = axis_view(parts[0], axis);
    std::vector<double> out(shape_numel(shape));
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const AxisView v = axis_view(p, axis);
        auto d = p.data();
        for (std::size_t o = 0; o < v.outer; ++o) {
            std::copy_n(d.data() + o * v.axis * v.inner, v.axis * v.inner,
                        out.data() + (o * total + offset) * base.inner);
        }
        offset += v.axis;
    }
    return make_result(std::move(shape), std::move(out), parts,
                       [parts, axis, total](const detail::Node& node) {
                           std::size_t offset = 0;
                           for (const auto& p : parts) {
                               const AxisView v = axis_view(p, axis);
                               auto g = input_grad(p);
                               if (!g.empty()) {
                                   for (std::size_t o = 0; o < v.outer; ++o) {
                                       const double* src =
                                           node.grad.data() +
                                           (o * total + offset) * v.inner;
                                       double* dst =
                                           g.data() + o * v.axis * v.inner;
                                       for (std::size_t i = 0;
                                            i < v.axis * v.inner; ++i)
                                           dst[i] += src[i];
                                   }
                               }
                               offset += v.axis;
                           }
                       });
}

Tensor slice_axis(const Tensor& x, std::size_t axis, std::size_t start,
                  std::size_t count, const char* op) {
    if (x.rank() <= axis) {
        throw ShapeError(std::string(op) + ": rank too small " +
                         shape_str(x.shape()));
    }
    const AxisView v = axis_view(x, axis);
    if (start + count > v.axis) {
        throw ShapeError(std::string(op) + ": range [" + std::to_string(start) +
                         ", " + std::to_string(start + count) +
                         ") out of bounds for " + shape_str(x.shape()));
    }
    Shape shape = x.shape();
    shape[axis] = count;
    std::vector<double> out(shape_numel(shape));
    auto d = x.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        std::copy_n(d.data() + (o * v.axis + start) * v.inner, count * v.inner,
                    out.data() + o * count * v.inner);
    }
    return make_result(std::move(shape), std::move(out), {x},
                       [x, v, start, count](const detail::Node& node) {
                           auto g = input_grad(x);
                           for (std::size_t o = 0; o < v.outer; ++o) {
                               const double* src =
                                   node.grad.data() + o * count * v.inner;
                               double* dst =
                                   g.data() + (o * v.axis + start) * v.inner;
                               for (std::size_t i = 0; i < count * v.inner; ++i)
                                   dst[i] += src[i];
                           }
                       });
}

}  // namespace

Tensor concat_channels(const std::vector<Tensor>& parts) {
    return concat_axis(parts, 1, "concat_channels");
}

Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count) {
    return slice_axis(x, 1, start, count, "slice_channels");
}

Tensor concat_last(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_last: no inputs");
    if (parts[0].rank() == 0) throw ShapeError("concat_last: scalar input");
    return concat_axis(parts, parts[0].rank() - 1, "concat_last");
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t count) {
    if (x.rank() == 0) throw ShapeError("slice_last: scalar input");
    return slice_axis(x, x.rank() - 1, start, count, "slice_last");
}

// ---------------------------------------------------------------------------
// Convolution and resampling

Tensor conv2d(const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias, int stride, int padding) {
    if (stride <= 0) {
        throw ArgumentError("conv2d: stride must be positive, got " +
                            std::to_string(stride));
    }
    if (padding < 0) {
        throw ArgumentError("conv2d: padding must be non-negative");
    }
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    const std::size_t batch = input.dim(0), cin = input.dim(1);
    const long h = static_cast<long>(input.dim(2));
    const long w = static_cast<long>(input.dim(3));
    const std::size_t cout = weight.dim(0);
    const long kh = static_cast<long>(weight.dim(2));
    const long kw = static_cast<long>(weight.dim(3));
    if (weight.dim(1) != cin) {
        throw ShapeError("conv2d: input has " + std::to_string(cin) +
                         " channels, weight expects " +
                         std::to_string(weight.dim(1)));
    }
    if (bias && bias->shape() != Shape{cout}) {
        throw ShapeError("conv2d: bias shape " + shape_str(bias->shape()) +
                         " for " + std::to_string(cout) + " output channels");
    }
    const long oh_l = (h + 2 * padding - kh) / stride + 1;
    const long ow_l = (w + 2 * padding - kw) / stride + 1;
    if (h + 2 * padding < kh || w + 2 * padding < kw || oh_l <= 0 || ow_l <= 0) {
        throw ShapeError("conv2d: kernel larger than padded input");
    }
    const std::size_t oh = static_cast<std::size_t>(oh_l);
    const std::size_t ow = static_cast<std::size_t>(ow_l);

    // Valid output range for kernel offset k: ceil((pad - k)/s) <= o and
    // o*s - pad + k < size.
    auto out_range = [=](long k, long size, long out_size, long& lo, long& hi) {
        long first = padding - k;
        lo = first > 0 ? (first + stride - 1) / stride : 0;
        long last = size - 1 + padding - k;  // o*s <= last
        hi = last < 0 ? -1 : std::min(out_size - 1, last / stride);
    };

    std::vector<double> out(batch * cout * oh * ow, 0.0);
    auto xd = input.data(), wd = weight.data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            double* op = out.data() + (b * cout + co) * oh * ow;
            if (bias) std::fill_n(op, oh * ow, bias->data()[co]);
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* ip = xd.data() + (b * cin + ci) * h * w;
                const double* wp = wd.data() + (co * cin + ci) * kh * kw;
                for (long ky = 0; ky < kh; ++ky) {
                    long oy0, oy1;
                    out_range(ky, h, oh_l, oy0, oy1);
                    for (long kx = 0; kx < kw; ++kx) {
                        const double wv = wp[ky * kw + kx];
                        long ox0, ox1;
                        out_range(kx, w, ow_l, ox0, ox1);
                        for (long oy = oy0; oy <= oy1; ++oy) {
                            const double* irow =
                                ip + (oy * stride - padding + ky) * w;
                            double* orow = op + oy * ow_l;
                            for (long ox = ox0; ox <= ox1; ++ox)
                                orow[ox] +=
                                    wv * irow[ox * stride - padding + kx];
                        }
                    }
                }
            }
        }
    }

    std::vector<Tensor> inputs{input, weight};
    if (bias) inputs.push_back(*bias);
    return make_result(
        {batch, cout, oh, ow}, std::move(out), std::move(inputs),
        [=](const detail::Node& o) {
            auto xd = input.data(), wd = weight.data();
            auto gx = input_grad(input), gw = input_grad(weight);
            auto gb = bias ? input_grad(*bias) : std::span<double>{};
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t co = 0; co < cout; ++co) {
                    const double* go = o.grad.data() + (b * cout + co) * oh * ow;
                    if (!gb.empty()) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < oh * ow; ++i) s += go[i];
                        gb[co] += s;
                    }
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const std::size_t in_off = (b * cin + ci) * h * w;
                        const std::size_t w_off = (co * cin + ci) * kh * kw;
                        for (long ky = 0; ky < kh; ++ky) {
                            long oy0, oy1;
                            out_range(ky, h, oh_l, oy0, oy1);
                            for (long kx = 0; kx < kw; ++kx) {
                                long ox0, ox1;
                                out_range(kx, w, ow_l, ox0, ox1);
                                const double wv = wd[w_off + ky * kw + kx];
                                double acc = 0.0;
                                for (long oy = oy0; oy <= oy1; ++oy) {
                                    const long iy = oy * stride - padding + ky;
                                    const double* grow = go + oy * ow_l;
                                    const double* irow =
                                        xd.data() + in_off + iy * w;
                                    for (long ox = ox0; ox <= ox1; ++ox) {
                                        const long ix =
                                            ox * stride - padding + kx;
                                        acc += grow[ox] * irow[ix];
                                        if (!gx.empty())
                                            gx[in_off + iy * w + ix] +=
                                                grow[ox] * wv;
                                    }
                                }
                                if (!gw.empty())
                                    gw[w_off + ky * kw + kx] += acc;
                            }
                        }
                    }
                }
            }
        });
}

namespace {

// Source index pair and weight for half-pixel-centers interpolation.
struct Tap {
    std::size_t lo, hi;
    double frac;
};

std::vector<Tap> upsample_taps(std::size_t in, int scale) {
    std::vector<Tap> taps(in * static_cast<std::size_t>(scale));
    for (std::size_t o = 0; o < taps.size(); ++o) {
        double src = (static_cast<double>(o) + 0.5) / scale - 0.5;
        if (src < 0.0) src = 0.0;
        std::size_t lo = static_cast<std::size_t>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        std::size_t hi = std::min(lo + 1, in - 1);
        taps[o] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& input, int scale) {
    if (scale < 1) {
        throw ArgumentError("bilinear_upsample: scale must be >= 1, got " +
                            std::to_string(scale));
    }
    require_rank(input, 4, "bilinear_upsample");
    const std::size_t planes = input.dim(0) * input.dim(1);
    const std::size_t h = input.dim(2), w = input.dim(3);
    if (h == 0 || w == 0) throw ShapeError("bilinear_upsample: empty input");
    const std::size_t oh = h * scale, ow = w * scale;
    auto ty = upsample_taps(h, scale), tx = upsample_taps(w, scale);
    std::vector<double> out(planes * oh * ow);
    auto xd = input.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const double* ip = xd.data() + p * h * w;
        double* op = out.data() + p * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
            const Tap& a = ty[y];
            for (std::size_t x = 0; x < ow; ++x) {
                const Tap& b = tx[x];
                double top = ip[a.lo * w + b.lo] * (1.0 - b.frac) +
                             ip[a.lo * w + b.hi] * b.frac;
                double bot = ip[a.hi * w + b.lo] * (1.0 - b.frac) +
                             ip[a.hi * w + b.hi] * b.frac;
                op[y * ow + x] = top * (1.0 - a.frac) + bot * a.frac;
            }
        }
    }
    Shape shape{input.dim(0), input.dim(1), oh, ow};
    return make_result(
        std::move(shape), std::move(out), {input},
        [input, planes, h, w, oh, ow, ty = std::move(ty),
         tx = std::move(tx)](const detail::Node& o) {
            auto g = input_grad(input);
            for (std::size_t p = 0; p < planes; ++p) {
                double* gp = g.data() + p * h * w;
                const double* go = o.grad.data() + p * oh * ow;
                for (std::size_t y = 0; y < oh; ++y) {
                    const Tap& a = ty[y];
                    for (std::size_t x = 0; x < ow; ++x) {
                        const Tap& b = tx[x];
                        const double v = go[y * ow + x];
                        gp[a.lo * w + b.lo] += v * (1.0 - a.frac) * (1.0 - b.frac);
                        gp[a.lo * w + b.hi] += v * (1.0 - a.frac) * b.frac;
                        gp[a.hi * w + b.lo] += v * a.frac * (1.0 - b.frac);
                        gp[a.hi * w + b.hi] += v * a.frac * b.frac;
                    }
                }
            }
        });
}

Tensor broadcast_spatial(const Tensor& t, std::size_t height,
                         std::size_t width) {
    require_rank(t, 2, "broadcast_spatial");
    const std::size_t batch = t.dim(0), c = t.dim(1), hw = height * width;
    std::vector<double> out(batch * c * hw);
    auto d = t.data();
    for (std::size_t i = 0; i < batch * c; ++i)
        std::fill_n(out.data() + i * hw, hw, d[i]);
    return make_result({batch, c, height, width}, std::move(out), {t},
                       [t, batch, c, hw](const detail::Node& o) {
                           auto g = input_grad(t);
                           for (std::size_t i = 0; i < batch * c; ++i) {
                               double s = 0.0;
                               for (std::size_t j = 0; j < hw; ++j)
                                   s += o.grad[i * hw + j];
                               g[i] += s;
                           }
                       });
}

Tensor to_tokens(const Tensor& x) {
    require_rank(x, 4, "to_tokens");
    const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<double> out(x.numel());
    auto d = x.data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p)
                out[(b * hw + p) * c + ch] = d[(b * c + ch) * hw + p];
    return make_result({batch, hw, c}, std::move(out), {x},
                       [x, batch, c, hw](const detail::Node& o) {
                           auto g = input_grad(x);
                           for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t ch = 0; ch < c; ++ch)
                                   for (std::size_t p = 0; p < hw; ++p)
                                       g[(b * c + ch) * hw + p] +=
                                           o.grad[(b * hw + p) * c + ch];
                       });
}

Tensor from_tokens(const Tensor& tokens, std::size_t height,
                   std::size_t width) {
    require_rank(tokens, 3, "from_tokens");
    const std::size_t batch = tokens.dim(0), hw = tokens.dim(1),
                      c = tokens.dim(2);
    if (hw != height * width) {
        throw ShapeError("from_tokens: " + std::to_string(hw) +
                         " tokens cannot form a " + std::to_string(height) +
                         "x" + std::to_string(width) + " map");
    }
    std::vector<double> out(tokens.numel());
    auto d = tokens.data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t ch = 0; ch < c; ++ch)
                out[(b * c + ch) * hw + p] = d[(b * hw + p) * c + ch];
    return make_result({batch, c, height, width}, std::move(out), {tokens},
                       [tokens, batch, c, hw](const detail::Node& o) {
                           auto g = input_grad(tokens);
                           for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t p = 0; p < hw; ++p)
                                   for (std::size_t ch = 0; ch < c; ++ch)
                                       g[(b * hw + p) * c + ch] +=
                                           o.grad[(b * c + ch) * hw + p];
                       });
}

Tensor causal_depthwise_conv1d(const Tensor& x, const Tensor& weight,
                               const Tensor& bias) {
    require_rank(x, 3, "causal_depthwise_conv1d input");
    require_rank(weight, 2, "causal_depthwise_conv1d weight");
    const std::size_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
    const std::size_t k = weight.dim(1);
    if (weight.dim(0) != d || bias.shape() != Shape{d}) {
        throw ShapeError("causal_depthwise_conv1d: parameters do not match " +
                         std::to_string(d) + " channels");
    }
    std::vector<double> out(x.numel());
    auto xd = x.data(), wd = weight.data(), bd = bias.data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < len; ++t)
            for (std::size_t c = 0; c < d; ++c) {
                double s = bd[c];
                for (std::size_t j = 0; j < k && j <= t; ++j)
                    s += wd[c * k + j] * xd[(b * len + t - j) * d + c];
                out[(b * len + t) * d + c] = s;
            }
    return make_result(
        x.shape(), std::move(out), {x, weight, bias},
        [x, weight, bias, batch, len, d, k](const detail::Node& o) {
            auto xd = x.data(), wd = weight.data();
            auto gx = input_grad(x), gw = input_grad(weight),
                 gb = input_grad(bias);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t t = 0; t < len; ++t)
                    for (std::size_t c = 0; c < d; ++c) {
                        const double g = o.grad[(b * len + t) * d + c];
                        if (!gb.empty()) gb[c] += g;
                        for (std::size_t j = 0; j < k && j <= t; ++j) {
                            const std::size_t xi = (b * len + t - j) * d + c;
                            if (!gw.empty()) gw[c * k + j] += g * xd[xi];
                            if (!gx.empty()) gx[xi] += g * wd[c * k + j];
                        }
                    }
        });
}

}  // namespace graspmamba
