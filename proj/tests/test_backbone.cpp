#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "graspmamba/backbone.hpp"
#include "graspmamba/error.hpp"

using namespace graspmamba;
using namespace graspmamba::backbone;
using gradcheck::project;
using gradcheck::random_tensor;

namespace {

BackboneConfig small_config(std::size_t width = 4) {
    BackboneConfig c;
    c.width = width;
    c.state_size = 4;
    c.heads = 2;
    return c;
}

// Reorders tokens [B, L, D] along L by perm.
Tensor permute_tokens(const Tensor& x, const std::vector<std::size_t>& perm) {
    const std::size_t b = x.dim(0), l = x.dim(1), d = x.dim(2);
    std::vector<double> out(x.numel());
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t i = 0; i < l; ++i)
            for (std::size_t c = 0; c < d; ++c)
                out[(n * l + i) * d + c] = x.data()[(n * l + perm[i]) * d + c];
    return Tensor::from_data(x.shape(), out);
}

}  // namespace

TEST_CASE("extract_pyramid: 224 input gives the closed-form level shapes") {
    Rng rng(1);
    BackboneConfig cfg = small_config(8);
    cfg.depths = {1, 1, 1, 1};
    const auto p = make_backbone(cfg, rng);
    const auto pyr = extract_pyramid(Tensor::zeros({1, 3, 224, 224}), p);
    const std::vector<Shape> want{{1, 8, 56, 56}, {1, 16, 28, 28}, {1, 32, 14, 14}, {1, 64, 7, 7}};
    REQUIRE(pyr.levels.size() == 4);
    for (std::size_t l = 0; l < 4; ++l) CHECK(pyr.levels[l].shape() == want[l]);
}

TEST_CASE("extract_pyramid: minimal 32 input and the shape table") {
    Rng rng(2);
    const auto p = make_backbone(small_config(), rng);
    const auto pyr = extract_pyramid(Tensor::zeros({2, 3, 32, 64}), p);
    const auto table = pyramid_shapes(32, 64, 4);
    for (std::size_t l = 0; l < 4; ++l) {
        CHECK(pyr.levels[l].shape() == Shape{2, table[l][2], table[l][0], table[l][1]});
    }
    CHECK(table[3] == std::array<std::size_t, 3>{1, 2, 32});
    for (std::size_t h : {64u, 96u, 160u, 224u, 320u}) {
        const auto t = pyramid_shapes(h, h, 8);
        for (std::size_t l = 0; l < 4; ++l) CHECK(t[l][0] * (std::size_t{4} << l) == h);
    }
}

TEST_CASE("extract_pyramid: indivisible dims are a shape error") {
    Rng rng(3);
    const auto p = make_backbone(small_config(), rng);
    CHECK_THROWS_AS(extract_pyramid(Tensor::zeros({1, 3, 50, 64}), p), ShapeError);
    CHECK_THROWS_AS(pyramid_shapes(16, 16, 4), ShapeError);
}

TEST_CASE("extract_pyramid: deterministic and scan/convolution modes agree") {
    Rng rng(4);
    const auto p = make_backbone(small_config(), rng);
    const Tensor img = random_tensor({1, 3, 64, 64}, rng, false);
    const auto a = extract_pyramid(img, p, SsmMode::scan);
    const auto b = extract_pyramid(img, p, SsmMode::scan);
    const auto c = extract_pyramid(img, p, SsmMode::convolution);
    for (std::size_t l = 0; l < 4; ++l) {
        CHECK(a.levels[l].to_vector() == b.levels[l].to_vector());
        const auto va = a.levels[l].to_vector(), vc = c.levels[l].to_vector();
        double worst = 0;
        for (std::size_t i = 0; i < va.size(); ++i) worst = std::max(worst, std::abs(va[i] - vc[i]));
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("mambavision_block: shape preserving, odd width rejected") {
    Rng rng(5);
    const auto p = make_mambavision(8, small_config(), rng);
    const Tensor x = random_tensor({2, 7, 8}, rng, false);
    CHECK(mambavision_block(x, p).shape() == x.shape());
    CHECK_THROWS_AS(mambavision_block(random_tensor({1, 3, 7}, rng, false), p), ShapeError);
    const auto q = make_mambavision(6, small_config(), rng);
    CHECK_THROWS_AS(mambavision_block(x, q), ShapeError);
}

TEST_CASE("mambavision_block: one token gives C B-bar u from the SSM branch") {
    Rng rng(6);
    const auto p = make_mambavision(8, small_config(), rng);
    const Tensor u = random_tensor({1, 1, 4}, rng, false);
    const auto y = ssm_branch(u, p).to_vector();
    const auto d = ssm::discretize(p.ssm_params());
    const std::size_t n = d.state_size();
    for (std::size_t ch = 0; ch < 4; ++ch) {
        double cb = 0;
        for (std::size_t k = 0; k < n; ++k) cb += p.c.data()[ch * n + k] * d.b_bar.data()[ch * n + k];
        CHECK(y[ch] == doctest::Approx(cb * u.data()[ch]).epsilon(1e-13));
    }
}

TEST_CASE("mambavision_block: convolution mode matches the scan") {
    Rng rng(7);
    const auto p = make_mambavision(8, small_config(), rng);
    const Tensor x = random_tensor({2, 33, 8}, rng, false);
    const auto a = mambavision_block(x, p, SsmMode::scan).to_vector();
    const auto b = mambavision_block(x, p, SsmMode::convolution).to_vector();
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    CHECK(worst <= 1e-6);
}

TEST_CASE("mhsa_block: attention rows sum to one and heads must divide width") {
    Rng rng(8);
    const auto p = make_mhsa(8, small_config(), rng);
    const Tensor x = random_tensor({2, 9, 8}, rng, false, 2.0);
    CHECK(mhsa_block(x, p).shape() == x.shape());
    const auto w = attention_weights(x, p);
    REQUIRE(w.size() == 2);
    for (const auto& a : w) {
        const auto v = a.to_vector();
        for (std::size_t r = 0; r < 2 * 9; ++r) {
            const double s = std::accumulate(v.begin() + r * 9, v.begin() + (r + 1) * 9, 0.0);
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
    BackboneConfig three = small_config();
    three.heads = 3;
    CHECK_THROWS_AS(make_mhsa(8, three, rng), ShapeError);
    auto q = p;
    q.heads = 3;
    CHECK_THROWS_AS(mhsa_block(x, q), ShapeError);
}

TEST_CASE("mhsa_block: a single token attends to itself with weight one") {
    Rng rng(9);
    const auto p = make_mhsa(8, small_config(), rng);
    const Tensor x = random_tensor({1, 1, 8}, rng, false);
    for (const auto& a : attention_weights(x, p)) CHECK(a.item() == doctest::Approx(1.0).epsilon(1e-15));
    // With weight one the mixer reduces to proj(value(norm1(x))).
    const Tensor v = slice_last(p.qkv(p.norm1(x)), 16, 8);
    const Tensor h = add(x, p.proj(v));
    const auto want = add(h, p.mlp_out(silu(p.mlp_in(p.norm2(h))))).to_vector();
    const auto got = mhsa_block(x, p).to_vector();
    for (std::size_t i = 0; i < 8; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
}

TEST_CASE("mhsa_block: permuting tokens permutes the outputs") {
    Rng rng(10);
    const auto p = make_mhsa(8, small_config(), rng);
    const Tensor x = random_tensor({2, 6, 8}, rng, false);
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    const auto a = permute_tokens(mhsa_block(x, p), perm).to_vector();
    const auto b = mhsa_block(permute_tokens(x, perm), p).to_vector();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
}

TEST_CASE("gradient check: backbone blocks and the full pyramid") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(300 + seed);
        auto mv = make_mambavision(4, small_config(), rng);
        const Tensor x = random_tensor({1, 5, 4}, rng, true);
        std::vector<Tensor> params{x};
        mv.visit("mv", [&](const std::string&, Tensor& t) { params.push_back(t); });
        CHECK(gradcheck::max_error(params, [&] { return project(mambavision_block(x, mv)); }) <= 1e-4);

        auto at = make_mhsa(4, small_config(), rng);
        std::vector<Tensor> aparams{x};
        at.visit("at", [&](const std::string&, Tensor& t) { aparams.push_back(t); });
        CHECK(gradcheck::max_error(aparams, [&] { return project(mhsa_block(x, at)); }) <= 1e-4);
    }
    Rng rng(399);
    BackboneConfig cfg = small_config(2);
    auto bb = make_backbone(cfg, rng);
    const Tensor img = random_tensor({1, 3, 32, 32}, rng, true);
    std::vector<Tensor> params{img};
    bb.visit("bb", [&](const std::string&, Tensor& t) { params.push_back(t); });
    CHECK(gradcheck::max_error(params, [&] {
              const auto pyr = extract_pyramid(img, bb);
              Tensor loss = project(pyr.levels[0], 1);
              for (std::size_t l = 1; l < 4; ++l) loss = add(loss, project(pyr.levels[l], l + 1));
              return loss;
          }, 1e-5, 4) <= 1e-4);
}
