#include "graspmamba/ssm.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "graspmamba/error.hpp"

namespace graspmamba::ssm {

namespace {

// (e^z - 1) / z
double phi(double z) {
    if (std::abs(z) < kSeriesThreshold) return 1.0 + z / 2.0 + z * z / 6.0;
    return std::expm1(z) / z;
}

// d/dz (e^z - 1) / z. The closed form cancels badly for small z, so the
// series is used well beyond the forward threshold.
double phi_prime(double z) {
    if (std::abs(z) < 1e-3) {
        return 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0 +
               z * z * z * z / 144.0;
    }
    return (z * std::exp(z) - std::expm1(z)) / (z * z);
}

void require_finite(const Tensor& t, const char* name) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("discretize: non-finite ") + name);
        }
    }
}

struct SeqView {
    std::size_t batch, length, channels;
};

SeqView seq_view(const Tensor& x, const char* op) {
    if (x.rank() == 2) return {1, x.dim(0), x.dim(1)};
    if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2)};
    throw ShapeError(std::string(op) + ": expected [L, D] or [B, L, D], got " +
                     shape_str(x.shape()));
}

void check_discrete(const DiscreteSSM& d, const Tensor& c, const char* op) {
    if (d.a_bar.rank() != 2 || d.b_bar.shape() != d.a_bar.shape() ||
        c.shape() != d.a_bar.shape()) {
        throw ShapeError(std::string(op) + ": A-bar, B-bar and C must share "
                         "shape [D, N]; got " + shape_str(d.a_bar.shape()) +
                         ", " + shape_str(d.b_bar.shape()) + ", " +
                         shape_str(c.shape()));
    }
}

}  // namespace

SSMParams init_params(std::size_t channels, std::size_t state_size, Rng& rng,
                      const SSMInit& init) {
    if (channels == 0 || state_size == 0) {
        throw ArgumentError("init_params: channels and state size must be >= 1");
    }
    std::vector<double> a(channels * state_size), b(a.size()), c(a.size());
    std::vector<double> log_delta(channels);
    const double scale = 1.0 / std::sqrt(static_cast<double>(state_size));
    for (std::size_t d = 0; d < channels; ++d) {
        for (std::size_t n = 0; n < state_size; ++n) {
            a[d * state_size + n] = -static_cast<double>(n + 1);
            b[d * state_size + n] = rng.normal() * scale;
            c[d * state_size + n] = rng.normal() * scale;
        }
        log_delta[d] = rng.uniform(std::log(init.delta_min),
                                   std::log(init.delta_max));
    }
    Shape shape{channels, state_size};
    return {Tensor::from_data(shape, std::move(a), true),
            Tensor::from_data(shape, std::move(b), true),
            Tensor::from_data(shape, std::move(c), true),
            Tensor::from_data({channels}, std::move(log_delta), true)};
}

DiscreteSSM discretize(const SSMParams& p) {
    const auto& shape = p.a_diag.shape();
    if (shape.size() != 2 || shape[1] == 0 || p.b.shape() != shape ||
        p.log_delta.shape() != Shape{shape[0]}) {
        throw ShapeError("discretize: expected a_diag and b of shape [D, N] and "
                         "log_delta of shape [D]");
    }
    require_finite(p.a_diag, "a_diag");
    require_finite(p.b, "b");
    require_finite(p.log_delta, "log_delta");
    const std::size_t channels = shape[0], n_state = shape[1];

    std::vector<double> delta(channels);
    for (std::size_t d = 0; d < channels; ++d) {
        delta[d] = std::exp(p.log_delta.data()[d]);
        if (!std::isfinite(delta[d]) || delta[d] <= 0.0) {
            throw NumericError("discretize: step size exp(log_delta) is not a "
                               "finite positive number");
        }
    }

    auto ad = p.a_diag.data(), bd = p.b.data();
    std::vector<double> a_bar(ad.size()), b_bar(ad.size());
    for (std::size_t d = 0; d < channels; ++d) {
        for (std::size_t n = 0; n < n_state; ++n) {
            const std::size_t i = d * n_state + n;
            const double z = delta[d] * ad[i];
            a_bar[i] = std::exp(z);
            b_bar[i] = phi(z) * delta[d] * bd[i];
        }
    }

    Tensor a_out = make_result(
        shape, std::move(a_bar), {p.a_diag, p.log_delta},
        [a = p.a_diag, ld = p.log_delta, delta, n_state](const detail::Node& o) {
            auto ad = a.data();
            auto ga = input_grad(a), gl = input_grad(ld);
            for (std::size_t i = 0; i < ad.size(); ++i) {
                const double dl = delta[i / n_state];
                const double g = o.grad[i] * o.data[i];
                if (!ga.empty()) ga[i] += g * dl;
                if (!gl.empty()) gl[i / n_state] += g * dl * ad[i];
            }
        });

    Tensor b_out = make_result(
        shape, std::move(b_bar), {p.a_diag, p.b, p.log_delta},
        [a = p.a_diag, b = p.b, ld = p.log_delta, delta,
         n_state](const detail::Node& o) {
            auto ad = a.data(), bd = b.data();
            auto ga = input_grad(a), gb = input_grad(b), gl = input_grad(ld);
            for (std::size_t i = 0; i < ad.size(); ++i) {
                const double dl = delta[i / n_state];
                const double z = dl * ad[i];
                const double g = o.grad[i];
                const double f = phi(z), fp = phi_prime(z);
                if (!gb.empty()) gb[i] += g * f * dl;
                if (!ga.empty()) ga[i] += g * fp * dl * dl * bd[i];
                if (!gl.empty())
                    gl[i / n_state] += g * dl * bd[i] * (fp * z + f);
            }
        });

    return {a_out, b_out};
}

Tensor scan(const DiscreteSSM& dssm, const Tensor& c, const Tensor& x,
            const std::optional<Tensor>& h0) {
    check_discrete(dssm, c, "scan");
    const SeqView v = seq_view(x, "scan");
    if (v.length == 0) throw ArgumentError("scan: sequence length must be >= 1");
    const std::size_t ch = dssm.channels(), ns = dssm.state_size();
    if (v.channels != ch) {
        throw ShapeError("scan: input has " + std::to_string(v.channels) +
                         " channels, SSM has " + std::to_string(ch));
    }
    const Shape h0_shape =
        x.rank() == 3 ? Shape{v.batch, ch, ns} : Shape{ch, ns};
    if (h0 && h0->shape() != h0_shape) {
        throw ShapeError("scan: h0 shape " + shape_str(h0->shape()) +
                         ", expected " + shape_str(h0_shape));
    }

    std::vector<Tensor> inputs{dssm.a_bar, dssm.b_bar, c, x};
    if (h0) inputs.push_back(*h0);
    bool needs_grad = false;
    for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
    needs_grad = needs_grad && grad_mode_enabled();

    const std::size_t state_len = ch * ns;
    auto ab = dssm.a_bar.data(), bb = dssm.b_bar.data(), cd = c.data();
    auto xd = x.data();
    std::vector<double> y(x.numel());
    // States h_{-1..L-1} per batch, kept only when a backward pass may follow.
    std::vector<double> states;
    if (needs_grad) states.resize(v.batch * (v.length + 1) * state_len);
    std::vector<double> h(state_len);

    for (std::size_t b = 0; b < v.batch; ++b) {
        if (h0) {
            auto hd = h0->data();
            std::copy_n(hd.data() + b * state_len, state_len, h.begin());
        } else {
            std::fill(h.begin(), h.end(), 0.0);
        }
        double* hist = needs_grad
                           ? states.data() + b * (v.length + 1) * state_len
                           : nullptr;
        if (hist) std::copy(h.begin(), h.end(), hist);
        for (std::size_t t = 0; t < v.length; ++t) {
            const double* xt = xd.data() + (b * v.length + t) * ch;
            double* yt = y.data() + (b * v.length + t) * ch;
            for (std::size_t d = 0; d < ch; ++d) {
                double acc = 0.0;
                double* hd = h.data() + d * ns;
                const double* a = ab.data() + d * ns;
                const double* bv = bb.data() + d * ns;
                const double* cv = cd.data() + d * ns;
                for (std::size_t n = 0; n < ns; ++n) {
                    hd[n] = a[n] * hd[n] + bv[n] * xt[d];
                    acc += cv[n] * hd[n];
                }
                yt[d] = acc;
            }
            if (hist) std::copy(h.begin(), h.end(), hist + (t + 1) * state_len);
        }
    }

    return make_result(
        x.shape(), std::move(y), std::move(inputs),
        [dssm, c, x, h0, v, ch, ns, state_len,
         states = std::move(states)](const detail::Node& o) {
            auto ab = dssm.a_bar.data(), bb = dssm.b_bar.data(), cd = c.data();
            auto xd = x.data();
            auto ga = input_grad(dssm.a_bar), gb = input_grad(dssm.b_bar),
                 gc = input_grad(c), gx = input_grad(x);
            auto gh0 = h0 ? input_grad(*h0) : std::span<double>{};
            std::vector<double> gh(state_len);
            for (std::size_t b = 0; b < v.batch; ++b) {
                std::fill(gh.begin(), gh.end(), 0.0);
                const double* hist = states.data() + b * (v.length + 1) * state_len;
                for (std::size_t t = v.length; t-- > 0;) {
                    const double* gy = o.grad.data() + (b * v.length + t) * ch;
                    const double* xt = xd.data() + (b * v.length + t) * ch;
                    const double* h_t = hist + (t + 1) * state_len;
                    const double* h_prev = hist + t * state_len;
                    for (std::size_t d = 0; d < ch; ++d) {
                        double gxd = 0.0;
                        for (std::size_t n = 0; n < ns; ++n) {
                            const std::size_t i = d * ns + n;
                            gh[i] += cd[i] * gy[d];
                            if (!gc.empty()) gc[i] += gy[d] * h_t[i];
                            gxd += bb[i] * gh[i];
                            if (!gb.empty()) gb[i] += gh[i] * xt[d];
                            if (!ga.empty()) ga[i] += gh[i] * h_prev[i];
                            gh[i] *= ab[i];
                        }
                        if (!gx.empty()) gx[(b * v.length + t) * ch + d] += gxd;
                    }
                }
                if (!gh0.empty()) {
                    for (std::size_t i = 0; i < state_len; ++i)
                        gh0[b * state_len + i] += gh[i];
                }
            }
        });
}

Tensor ssm_kernel(const DiscreteSSM& dssm, const Tensor& c, long length) {
    check_discrete(dssm, c, "ssm_kernel");
    if (length <= 0) {
        throw ArgumentError("ssm_kernel: length must be >= 1, got " +
                            std::to_string(length));
    }
    const std::size_t len = static_cast<std::size_t>(length);
    const std::size_t ch = dssm.channels(), ns = dssm.state_size();
    auto ab = dssm.a_bar.data(), bb = dssm.b_bar.data(), cd = c.data();
    std::vector<double> k(ch * len, 0.0);
    std::vector<double> p(ns);
    for (std::size_t d = 0; d < ch; ++d) {
        // p_n = c_n * a_n^j * b_n, advanced one power per step.
        for (std::size_t n = 0; n < ns; ++n) p[n] = cd[d * ns + n] * bb[d * ns + n];
        for (std::size_t j = 0; j < len; ++j) {
            double acc = 0.0;
            for (std::size_t n = 0; n < ns; ++n) {
                acc += p[n];
                p[n] *= ab[d * ns + n];
            }
            k[d * len + j] = acc;
        }
    }
    return make_result(
        {ch, len}, std::move(k), {dssm.a_bar, dssm.b_bar, c},
        [dssm, c, ch, ns, len](const detail::Node& o) {
            auto ab = dssm.a_bar.data(), bb = dssm.b_bar.data(), cd = c.data();
            auto ga = input_grad(dssm.a_bar), gb = input_grad(dssm.b_bar),
                 gc = input_grad(c);
            for (std::size_t d = 0; d < ch; ++d) {
                for (std::size_t n = 0; n < ns; ++n) {
                    const std::size_t i = d * ns + n;
                    const double a = ab[i];
                    double pw = 1.0;       // a^j
                    double pw_prev = 0.0;  // a^(j-1), zero for j = 0
                    double s_pow = 0.0, s_der = 0.0;
                    for (std::size_t j = 0; j < len; ++j) {
                        const double g = o.grad[d * len + j];
                        s_pow += g * pw;
                        s_der += g * static_cast<double>(j) * pw_prev;
                        pw_prev = pw;
                        pw *= a;
                    }
                    if (!gc.empty()) gc[i] += s_pow * bb[i];
                    if (!gb.empty()) gb[i] += s_pow * cd[i];
                    if (!ga.empty()) ga[i] += s_der * cd[i] * bb[i];
                }
            }
        });
}

Tensor conv_apply(const Tensor& x, const Tensor& k) {
    const SeqView v = seq_view(x, "conv_apply");
    if (k.rank() != 2 || k.dim(0) != v.channels || k.dim(1) != v.length) {
        throw ShapeError("conv_apply: kernel shape " + shape_str(k.shape()) +
                         " does not match input " + shape_str(x.shape()) +
                         " (expected [D, L])");
    }
    if (v.length == 0) throw ArgumentError("conv_apply: empty sequence");
    const std::size_t len = v.length, ch = v.channels;
    auto xd = x.data(), kd = k.data();
    std::vector<double> y(x.numel(), 0.0);
    for (std::size_t b = 0; b < v.batch; ++b)
        for (std::size_t t = 0; t < len; ++t)
            for (std::size_t d = 0; d < ch; ++d) {
                double acc = 0.0;
                const double* kr = kd.data() + d * len;
                for (std::size_t j = 0; j <= t; ++j)
                    acc += kr[j] * xd[(b * len + t - j) * ch + d];
                y[(b * len + t) * ch + d] = acc;
            }
    return make_result(
        x.shape(), std::move(y), {x, k}, [x, k, v](const detail::Node& o) {
            const std::size_t len = v.length, ch = v.channels;
            auto xd = x.data(), kd = k.data();
            auto gx = input_grad(x), gk = input_grad(k);
            for (std::size_t b = 0; b < v.batch; ++b)
                for (std::size_t t = 0; t < len; ++t)
                    for (std::size_t d = 0; d < ch; ++d) {
                        const double g = o.grad[(b * len + t) * ch + d];
                        if (g == 0.0) continue;
                        for (std::size_t j = 0; j <= t; ++j) {
                            const std::size_t xi = (b * len + t - j) * ch + d;
                            if (!gk.empty()) gk[d * len + j] += g * xd[xi];
                            if (!gx.empty()) gx[xi] += g * kd[d * len + j];
                        }
                    }
        });
}

}  // namespace graspmamba::ssm
