#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "graspmamba/error.hpp"
#include "graspmamba/ssm.hpp"
#include "oracles.hpp"

using namespace graspmamba;
using gradcheck::project;
using gradcheck::random_tensor;

namespace {

ssm::SSMParams scalar_params(double a, double b, double delta) {
    return {Tensor::from_data({1, 1}, {a}), Tensor::from_data({1, 1}, {b}),
            Tensor::from_data({1, 1}, {1.0}), Tensor::from_data({1}, {std::log(delta)})};
}

ssm::DiscreteSSM scalar_discrete(double a_bar, double b_bar) {
    return {Tensor::from_data({1, 1}, {a_bar}), Tensor::from_data({1, 1}, {b_bar})};
}

// Random stable parameters: a in [-3, -0.05], step in [1e-3, 0.5].
ssm::SSMParams random_stable(std::size_t d, std::size_t n, Rng& rng, bool grad = false) {
    std::vector<double> a(d * n);
    for (double& v : a) v = -rng.uniform(0.05, 3.0);
    std::vector<double> ld(d);
    for (double& v : ld) v = rng.uniform(std::log(1e-3), std::log(0.5));
    return {Tensor::from_data({d, n}, a, grad), random_tensor({d, n}, rng, grad),
            random_tensor({d, n}, rng, grad), Tensor::from_data({d}, ld, grad)};
}

double rel(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

}  // namespace

TEST_CASE("discretize: zero a takes the series branch") {
    const auto d = ssm::discretize(scalar_params(0.0, 1.0, 0.1));
    CHECK(d.a_bar.item() == 1.0);
    CHECK(d.b_bar.item() == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("discretize: a = -1, b = 1, step 0.1") {
    const auto d = ssm::discretize(scalar_params(-1.0, 1.0, 0.1));
    CHECK(d.a_bar.item() == doctest::Approx(0.904837418).epsilon(1e-9));
    CHECK(d.b_bar.item() == doctest::Approx(0.095162582).epsilon(1e-8));
}

TEST_CASE("discretize: a = -2, step 0.5 gives exp(-1)") {
    const auto d = ssm::discretize(scalar_params(-2.0, 1.0, 0.5));
    CHECK(rel(d.a_bar.item(), std::exp(-1.0)) <= 1e-15);
}

TEST_CASE("discretize: matches the dense matrix exponential on 100 random cases") {
    Rng rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        auto p = random_stable(1, n, rng);
        // A quarter of the cases exercise the series branch.
        if (trial % 4 == 0) {
            auto a = p.a_diag.mutable_data();
            for (std::size_t i = 0; i < n; ++i) a[i] = -std::pow(10.0, rng.uniform(-12.0, -9.0));
        }
        const auto d = ssm::discretize(p);
        const double dt = std::exp(p.log_delta.item());
        Eigen::VectorXd a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) a[i] = p.a_diag.data()[i], b[i] = p.b.data()[i];
        const auto [ea, eb] = oracles::zoh_dense(a, b, dt);
        for (std::size_t i = 0; i < n; ++i) {
            worst = std::max(worst, rel(d.a_bar.data()[i], ea(i, i)));
            worst = std::max(worst, rel(d.b_bar.data()[i], eb(i)));
        }
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("discretize: stable a gives a_bar strictly inside (0, 1)") {
    Rng rng(12);
    const auto d = ssm::discretize(random_stable(4, 8, rng));
    for (double v : d.a_bar.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("discretize: non-finite parameters are a numeric error") {
    CHECK_THROWS_AS(ssm::discretize(scalar_params(std::nan(""), 1.0, 0.1)), NumericError);
    auto p = scalar_params(-1.0, 1.0, 0.1);
    p.log_delta = Tensor::from_data({1}, {INFINITY});
    CHECK_THROWS_AS(ssm::discretize(p), NumericError);
}

TEST_CASE("scan: unrolled recurrence examples") {
    const auto d = scalar_discrete(0.5, 1.0);
    const Tensor c = Tensor::from_data({1, 1}, {1.0});
    CHECK(ssm::scan(d, c, Tensor::from_data({3, 1}, {1, 1, 1})).to_vector() ==
          std::vector<double>{1.0, 1.5, 1.75});
    CHECK(ssm::scan(d, c, Tensor::zeros({4, 1})).to_vector() == std::vector<double>(4, 0.0));
    // L = 1: y = C B-bar x + C A-bar h0.
    const Tensor h0 = Tensor::from_data({1, 1}, {2.0});
    CHECK(ssm::scan(d, Tensor::from_data({1, 1}, {3.0}), Tensor::from_data({1, 1}, {0.7}), h0)
              .item() == doctest::Approx(3.0 * 1.0 * 0.7 + 3.0 * 0.5 * 2.0));
}

TEST_CASE("scan: empty sequence and mismatched shapes") {
    const auto d = scalar_discrete(0.5, 1.0);
    const Tensor c = Tensor::from_data({1, 1}, {1.0});
    CHECK_THROWS_AS(ssm::scan(d, c, Tensor::zeros({0, 1})), ArgumentError);
    CHECK_THROWS_AS(ssm::scan(d, c, Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("ssm_kernel: expansion, zero projection and length one") {
    const auto d = scalar_discrete(0.5, 1.0);
    CHECK(ssm::ssm_kernel(d, Tensor::from_data({1, 1}, {1.0}), 3).to_vector() ==
          std::vector<double>{1.0, 0.5, 0.25});
    CHECK(ssm::ssm_kernel(d, Tensor::zeros({1, 1}), 5).to_vector() == std::vector<double>(5, 0.0));
    CHECK(ssm::ssm_kernel(d, Tensor::from_data({1, 1}, {3.0}), 1).item() == 3.0);
    CHECK_THROWS_AS(ssm::ssm_kernel(d, Tensor::zeros({1, 1}), 0), ArgumentError);
}

TEST_CASE("ssm_kernel: single state impulse response decays monotonically") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const auto p = random_stable(3, 1, rng);
        const auto k = ssm::ssm_kernel(ssm::discretize(p), p.c, 20).to_vector();
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t j = 1; j < 20; ++j)
                CHECK(std::abs(k[ch * 20 + j]) < std::abs(k[ch * 20 + j - 1]));
    }
}

TEST_CASE("conv_apply: examples") {
    const Tensor k = Tensor::from_data({1, 3}, {1.0, 0.5, 0.25});
    CHECK(ssm::conv_apply(Tensor::from_data({3, 1}, {1, 1, 1}), k).to_vector() ==
          std::vector<double>{1.0, 1.5, 1.75});
    const Tensor x = Tensor::from_data({4, 1}, {0.3, -1.0, 2.0, 5.0});
    CHECK(ssm::conv_apply(x, Tensor::from_data({1, 4}, {1, 0, 0, 0})).to_vector() == x.to_vector());
    CHECK(ssm::conv_apply(Tensor::from_data({3, 1}, {1, 0, 0}), k).to_vector() == k.to_vector());
    CHECK_THROWS_AS(ssm::conv_apply(Tensor::zeros({4, 1}), k), ShapeError);
}

TEST_CASE("scan and convolution agree on random stable systems") {
    Rng rng(14);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + rng.below(4), n = 1 + rng.below(8);
        const long len = 1 + static_cast<long>(rng.below(64));
        const auto p = random_stable(d, n, rng);
        const auto disc = ssm::discretize(p);
        const Tensor x = random_tensor({static_cast<std::size_t>(len), d}, rng, false);
        const auto y1 = ssm::scan(disc, p.c, x).to_vector();
        const auto y2 = ssm::conv_apply(x, ssm::ssm_kernel(disc, p.c, len)).to_vector();
        for (std::size_t i = 0; i < y1.size(); ++i) worst = std::max(worst, std::abs(y1[i] - y2[i]));
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("gradient check: discretize, scan, kernel and convolution") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(200 + seed);
        const auto p = random_stable(2, 3, rng, true);
        const Tensor x = random_tensor({2, 5, 2}, rng, true);
        const Tensor h0 = random_tensor({2, 2, 3}, rng, true);
        const std::vector<Tensor> ssm_params{p.a_diag, p.b, p.c, p.log_delta};
        CHECK(gradcheck::max_error(ssm_params, [&] {
                  const auto d = ssm::discretize(p);
                  return project(concat_last({d.a_bar, d.b_bar}));
              }) <= 1e-4);
        CHECK(gradcheck::max_error({p.a_diag, p.b, p.c, p.log_delta, x, h0}, [&] {
                  return project(ssm::scan(ssm::discretize(p), p.c, x, h0));
              }) <= 1e-4);
        CHECK(gradcheck::max_error(ssm_params, [&] {
                  return project(ssm::ssm_kernel(ssm::discretize(p), p.c, 6));
              }) <= 1e-4);
        const Tensor k = random_tensor({2, 5}, rng, true);
        CHECK(gradcheck::max_error({x, k}, [&] { return project(ssm::conv_apply(x, k)); }) <= 1e-4);
    }
}

TEST_CASE("gradient check: series branch of the discretization") {
    auto p = scalar_params(-1e-10, 0.7, 0.2);
    for (Tensor* t : {&p.a_diag, &p.b, &p.log_delta}) t->set_requires_grad(true);
    CHECK(gradcheck::max_error({p.a_diag, p.b, p.log_delta}, [&] {
              const auto d = ssm::discretize(p);
              return add(sum(d.a_bar), scale(sum(d.b_bar), 3.0));
          }) <= 1e-4);
}
