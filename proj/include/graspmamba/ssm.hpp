#pragma once

#include <cstddef>
#include <optional>

#include "graspmamba/rng.hpp"
#include "graspmamba/tensor.hpp"

namespace graspmamba::ssm {

/// Continuous diagonal state-space parameters for D independent channels of
/// state size N: h'(t) = A h(t) + B x(t), y(t) = C h(t).
struct SSMParams {
    Tensor a_diag;     // [D, N], diagonal of A (1/time)
    Tensor b;          // [D, N]
    Tensor c;          // [D, N]
    Tensor log_delta;  // [D], step size is exp(log_delta)

    std::size_t channels() const { return a_diag.dim(0); }
    std::size_t state_size() const { return a_diag.dim(1); }
};

/// Zero-order-hold discretization of SSMParams.
struct DiscreteSSM {
    Tensor a_bar;  // [D, N]
    Tensor b_bar;  // [D, N]

    std::size_t channels() const { return a_bar.dim(0); }
    std::size_t state_size() const { return a_bar.dim(1); }
};

struct SSMInit {
    double delta_min = 1e-3;
    double delta_max = 1e-1;
};

// |delta * a| below this uses the truncated series for B-bar.
inline constexpr double kSeriesThreshold = 1e-8;

/// a_diag = -(1..N) per channel, log-uniform step size in
/// [delta_min, delta_max], b and c ~ N(0, 1/N).
SSMParams init_params(std::size_t channels, std::size_t state_size, Rng& rng,
                      const SSMInit& init = {});

/// A-bar = exp(delta a), B-bar = (exp(delta a) - 1) / (delta a) * delta b,
/// elementwise over the diagonal. Differentiable w.r.t. a_diag, b and
/// log_delta.
DiscreteSSM discretize(const SSMParams& params);

/// Runs h_t = A-bar h_{t-1} + B-bar x_t, y_t = C h_t independently per channel.
/// x is [L, D] or [B, L, D]; h0 (optional, zeros otherwise) is [D, N] or
/// [B, D, N] matching x.
Tensor scan(const DiscreteSSM& d, const Tensor& c, const Tensor& x,
            const std::optional<Tensor>& h0 = std::nullopt);

/// Impulse response K[d, j] = C A-bar^j B-bar for j < length, shape [D, L].
Tensor ssm_kernel(const DiscreteSSM& d, const Tensor& c, long length);

/// Causal convolution y[t] = sum_{j <= t} K[j] x[t - j] per channel.
/// x is [L, D] or [B, L, D], k is [D, L].
Tensor conv_apply(const Tensor& x, const Tensor& k);

}  // namespace graspmamba::ssm
