// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Optional arguments select criteria by number, e.g. `acceptance 1 4 9`.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <set>
#include <string>

#include "gradcheck.hpp"
#include "graspmamba/backbone.hpp"
#include "graspmamba/data_synth.hpp"
#include "graspmamba/fusion.hpp"
#include "graspmamba/geometry.hpp"
#include "graspmamba/grasp_head.hpp"
#include "graspmamba/harness.hpp"
#include "graspmamba/ssm.hpp"
#include "oracles.hpp"

using namespace graspmamba;
using gradcheck::project;
using gradcheck::random_tensor;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
    bool pass;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

ssm::SSMParams random_stable(std::size_t d, std::size_t n, Rng& rng, bool grad = false) {
    std::vector<double> a(d * n), ld(d);
    for (double& v : a) v = -rng.uniform(0.05, 3.0);
    for (double& v : ld) v = rng.uniform(std::log(1e-3), std::log(0.5));
    return {Tensor::from_data({d, n}, a, grad), random_tensor({d, n}, rng, grad),
            random_tensor({d, n}, rng, grad), Tensor::from_data({d}, ld, grad)};
}

Outcome duality() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(1);
    double worst = 0.0;
    const int cases = 200;
    for (int i = 0; i < cases; ++i) {
        const std::size_t d = 1 + rng.below(4), n = 1 + rng.below(8);
        const long len = 1 + static_cast<long>(rng.below(64));
        const auto p = random_stable(d, n, rng);
        const auto disc = ssm::discretize(p);
        const Tensor x = random_tensor({static_cast<std::size_t>(len), d}, rng, false);
        const auto y1 = ssm::scan(disc, p.c, x).to_vector();
        const auto y2 = ssm::conv_apply(x, ssm::ssm_kernel(disc, p.c, len)).to_vector();
        for (std::size_t j = 0; j < y1.size(); ++j) worst = std::max(worst, std::abs(y1[j] - y2[j]));
    }
    const double t = seconds_since(t0);
    return {worst <= 1e-6 && t < 10.0,
            fmt("%d configs, max |scan - conv| = %.2e, %.2f s", cases, worst, t)};
}

Outcome discretization() {
    Rng rng(2);
    double worst = 0.0;
    int series = 0;
    const int cases = 200;
    for (int i = 0; i < cases; ++i) {
        const std::size_t n = 1 + rng.below(8);
        auto p = random_stable(1, n, rng);
        if (i % 4 == 0) {
            auto a = p.a_diag.mutable_data();
            for (std::size_t k = 0; k < n; ++k) a[k] = -std::pow(10.0, rng.uniform(-12.0, -9.0));
        }
        const double dt = std::exp(p.log_delta.item());
        const auto d = ssm::discretize(p);
        Eigen::VectorXd a(n), b(n);
        for (std::size_t k = 0; k < n; ++k) {
            a[k] = p.a_diag.data()[k];
            b[k] = p.b.data()[k];
            series += std::abs(dt * a[k]) < ssm::kSeriesThreshold;
        }
        const auto [ea, eb] = oracles::zoh_dense(a, b, dt);
        for (std::size_t k = 0; k < n; ++k) {
            worst = std::max(worst, std::abs(d.a_bar.data()[k] - ea(k, k)) / std::abs(ea(k, k)));
            worst = std::max(worst, std::abs(d.b_bar.data()[k] - eb(k)) / std::abs(eb(k)));
        }
    }
    return {worst <= 1e-10 && series > 0,
            fmt("%d cases (%d series-branch entries), max rel err = %.2e", cases, series, worst)};
}

Outcome gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::size_t checks = 0;
    auto check = [&](std::vector<Tensor> params, const std::function<Tensor()>& loss,
                     std::size_t entries = 12) {
        worst = std::max(worst, gradcheck::max_error(std::move(params), loss, 1e-5, entries));
        ++checks;
    };
    auto collect = [](auto& module, std::vector<Tensor> extra) {
        module.visit("m", [&](const std::string&, Tensor& t) { extra.push_back(t); });
        return extra;
    };
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(1000 + seed);
        // Tensor operations.
        const Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
        check({a, b}, [&] { return project(add(mul(a, b), sub(a, scale(b, 0.3)))); });
        check({a}, [&] { return project(concat_last({silu(a), sigmoid(a), tanh(a), exp(a)})); });
        check({a, b}, [&] { return add(smooth_l1(scale(a, 2.0), b), mean(mul(a, a))); });
        const Tensor m1 = random_tensor({2, 3, 4}, rng), m2 = random_tensor({2, 4, 3}, rng);
        check({m1, m2}, [&] { return project(softmax_last(matmul(m1, m2))); });
        const Tensor w = random_tensor({5, 4}, rng), bias = random_tensor({5}, rng);
        const Tensor g = random_tensor({4}, rng), be = random_tensor({4}, rng);
        check({m1, w, bias, g, be}, [&] {
            return project(linear(layer_norm(transpose_last2(transpose_last2(m1)), g, be), w, bias));
        });
        const Tensor img = random_tensor({1, 3, 6, 4}, rng), k3 = random_tensor({2, 3, 3, 3}, rng);
        const Tensor cb = random_tensor({2}, rng);
        check({img, k3, cb}, [&] {
            const Tensor y = conv2d(img, k3, cb, 2, 1);
            return project(concat_channels({bilinear_upsample(y, 2), slice_channels(conv2d(img, k3, cb, 1, 1), 0, 2)}));
        });
        const Tensor t = random_tensor({1, 3}, rng);
        check({img, t}, [&] { return project(from_tokens(to_tokens(add(img, broadcast_spatial(t, 6, 4))), 6, 4)); });
        const Tensor seq = random_tensor({2, 6, 4}, rng), cw = random_tensor({4, 3}, rng);
        check({seq, cw, be}, [&] { return project(causal_depthwise_conv1d(seq, cw, be)); });

        // SSM core.
        const auto p = random_stable(2, 3, rng, true);
        const Tensor x = random_tensor({6, 2}, rng);
        check({p.a_diag, p.b, p.c, p.log_delta, x}, [&] {
            const auto d = ssm::discretize(p);
            return add(project(ssm::scan(d, p.c, x), 1), project(ssm::ssm_kernel(d, p.c, 6), 2));
        });
        const Tensor k = random_tensor({2, 6}, rng);
        check({x, k}, [&] { return project(ssm::conv_apply(x, k)); });

        // Backbone blocks.
        backbone::BackboneConfig bc;
        bc.width = 2;
        bc.state_size = 4;
        auto mv = backbone::make_mambavision(4, bc, rng);
        auto at = backbone::make_mhsa(4, bc, rng);
        const Tensor tok = random_tensor({1, 5, 4}, rng);
        check(collect(mv, {tok}), [&] { return project(backbone::mambavision_block(tok, mv)); });
        check(collect(at, {tok}), [&] { return project(backbone::mhsa_block(tok, at)); });

        // Fusion.
        auto fp = fusion::make_fusion({2, 4, 8, 16}, 3, 5, true, rng);
        backbone::FeaturePyramid pyr;
        for (std::size_t l = 0; l < 4; ++l)
            pyr.levels.push_back(random_tensor({1, std::size_t{2} << l, std::size_t{8} >> l, std::size_t{8} >> l}, rng));
        const Tensor txt = random_tensor({1, 5}, rng);
        std::vector<Tensor> fparams{txt};
        fparams.insert(fparams.end(), pyr.levels.begin(), pyr.levels.end());
        check(collect(fp, fparams), [&] { return project(fusion::fuse_hierarchy(pyr, txt, fp)); }, 4);

        // Head.
        auto hp = head::make_head(3, 4, rng);
        const Tensor f = random_tensor({1, 3, 2, 2}, rng);
        check(collect(hp, {f}), [&] {
            const auto mp = head::predict_maps(f, hp, 4, 4);
            return add(add(project(mp.quality, 1), project(mp.cos2t, 2)),
                       add(project(mp.sin2t, 3), project(mp.width, 4)));
        });
    }

    // End-to-end loss, tiny config on a 32x32 scene: every parameter tensor.
    ModelConfig mc;
    mc.width = 4;
    mc.fused_width = 4;
    mc.text_dim = 8;
    mc.vocab_size = 64;
    mc.state_size = 4;
    mc.head_hidden = 8;
    mc.w_max = 20;
    auto model = make_model(mc);
    data::SceneConfig sc;
    sc.image_size = 32;
    const auto sample = data::generate_scene(5, sc);
    const Tensor images = harness::stack_images({sample.image});
    const auto target = head::encode_targets(sample.grasps, 32, 32, mc.w_max);
    std::vector<Tensor> params;
    model.visit([&](const std::string&, Tensor& t) { params.push_back(t); });
    check(params, [&] { return harness::loss_fn(model.forward(images, {sample.prompt}), target); }, 4);
    const std::size_t groups = params.size();

    const double t = seconds_since(t0);
    return {worst <= 1e-4 && t < 120.0,
            fmt("%zu checks (end-to-end over %zu parameter tensors), max rel err = %.2e, %.1f s",
                checks, groups, worst, t)};
}

Outcome rotated_iou() {
    Rng rng(4);
    double worst = 0.0;
    const int pairs = 300;
    auto rect = [&] {
        return GraspRect{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.5, 5),
                         rng.uniform(0.5, 5), rng.uniform(-kPi, kPi)};
    };
    for (int i = 0; i < pairs; ++i) {
        const auto a = rect(), b = rect();
        worst = std::max(worst, std::abs(geometry::rotated_iou(a, b) - oracles::raster_iou(a, b)));
    }
    const double example = geometry::rotated_iou({2, 1, 4, 2, 0}, {3, 1, 4, 2, 0});
    const double ex_err = std::abs(example - 0.6);
    return {worst <= 0.02 && ex_err <= 1e-9,
            fmt("%d pairs vs 512x512 raster, max |diff| = %.4f; fixed example %.12f", pairs, worst,
                example)};
}

Outcome metric_fidelity() {
    const double h = geometry::harmonic_mean(0.48, 0.42);
    const GraspRect gt{0, 0, 5, 2, 0};
    // IoU exactly 0.25 (overlap 4 of union 16) and offset exactly 30 degrees.
    const double iou = geometry::rotated_iou({3, 0, 5, 2, 0}, gt);
    const bool iou_strict = iou == 0.25 && !geometry::is_success({3, 0, 5, 2, 0}, {gt}) &&
                            geometry::is_success({2.99, 0, 5, 2, 0}, {gt});
    const double offset = geometry::angle_offset_deg(kPi / 6, 0);
    const bool angle_strict = offset == 30.0 && !geometry::is_success({0, 0, 5, 2, kPi / 6}, {gt}) &&
                              geometry::is_success({0, 0, 5, 2, 29.99 * kPi / 180}, {gt});
    return {std::abs(h - 0.45) <= 0.005 && iou_strict && angle_strict,
            fmt("H(0.48, 0.42) = %.4f; IoU 0.25 rejected: %s; 30 deg rejected: %s", h,
                iou_strict ? "yes" : "no", angle_strict ? "yes" : "no")};
}

std::filesystem::path config_path(const char* name) {
    return std::filesystem::path(GRASPMAMBA_SOURCE_DIR) / "configs" / name;
}

Outcome overfit() {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = harness::TrainConfig::from_file(config_path("tiny.json"));
    data::SceneConfig sc;
    sc.image_size = 64;
    auto samples = data::generate_dataset(64, 7, sc);
    // The whole set is the training set: every scene counts as seen.
    for (auto& s : samples) s.split = data::Split::seen;
    const auto r = harness::train(cfg, samples);
    const auto rep = harness::evaluate_model(r.model, samples);
    const double t = seconds_since(t0);
    return {rep.seen_rate >= 0.90 && cfg.epochs <= 200 && t < 1800.0,
            fmt("64 scenes, %zu epochs, final loss %.4f, train success %.3f, %.0f s", cfg.epochs,
                r.epoch_loss.back(), rep.seen_rate, t)};
}

Outcome ablation() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto base = harness::TrainConfig::from_file(config_path("ablation.json"));
    data::SceneConfig sc;
    sc.image_size = 64;
    double fused = 0, plain = 0;
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto train_set = data::generate_dataset(200, 100 + seed, sc);
        const auto test_set = data::generate_dataset(200, 5000 + seed, sc);
        double rate[2];
        for (int with_text = 1; with_text >= 0; --with_text) {
            auto cfg = base;
            cfg.model.fusion = with_text == 1;
            cfg.model.seed = seed + 1;
            cfg.seed = seed;
            const auto r = harness::train(cfg, train_set);
            rate[with_text] = harness::evaluate_model(r.model, test_set).seen_rate;
        }
        fused += rate[1] / 3;
        plain += rate[0] / 3;
        per_seed += fmt(" [seed %llu: %.3f vs %.3f]", static_cast<unsigned long long>(seed), rate[1], rate[0]);
    }
    return {fused >= plain, fmt("held-out seen success, fused %.3f vs no-fusion %.3f;%s %.0f s", fused,
                                plain, per_seed.c_str(), seconds_since(t0))};
}

Outcome scaling() {
    const auto rows = harness::benchmark_scan({1024, 4096}, {harness::BenchMode::scan, harness::BenchMode::attention});
    double t[2][2] = {};
    for (const auto& r : rows)
        t[r.mode == harness::BenchMode::attention][r.length == 4096] = r.seconds;
    const double scan_ratio = t[0][1] / t[0][0], att_ratio = t[1][1] / t[1][0];
    return {scan_ratio <= 6.0 && att_ratio >= 10.0,
            fmt("scan t(4096)/t(1024) = %.2f, attention t(4096)/t(1024) = %.2f (median of 5)",
                scan_ratio, att_ratio)};
}

Outcome round_trips() {
    // Grasp encode -> decode.
    Rng rng(9);
    const double w_max = 150;
    double d_center = 0, d_angle = 0, d_width = 0;
    for (int i = 0; i < 200; ++i) {
        const double w = rng.uniform(20, 120);
        const GraspRect g{rng.uniform(60, 164), rng.uniform(60, 164), w, w / 2,
                          normalize_angle(rng.uniform(-kPi, kPi))};
        const auto d = head::decode_grasps(head::encode_targets({g}, 224, 224, w_max), 1, w_max);
        if (d.empty()) return {false, "encode -> decode lost a grasp"};
        d_center = std::max(d_center, std::hypot(d[0].rect.x - g.x, d[0].rect.y - g.y));
        d_angle = std::max(d_angle, geometry::angle_offset_deg(d[0].rect.theta, g.theta));
        d_width = std::max(d_width, std::abs(d[0].rect.w - g.w) / g.w);
    }
    const bool grasp_ok = d_center <= 2.0 && d_angle <= 2.0 && d_width <= 0.1;

    // Dataset save -> load.
    const auto dir = std::filesystem::temp_directory_path() / "gm_acceptance_data";
    std::filesystem::remove_all(dir);
    data::SceneConfig sc;
    sc.image_size = 64;
    const auto samples = data::generate_dataset(12, 3, sc);
    data::save_dataset(samples, dir);
    const auto loaded = data::load_dataset(dir);
    bool data_ok = loaded.size() == samples.size();
    for (std::size_t i = 0; data_ok && i < samples.size(); ++i) {
        data_ok = samples[i].id == loaded[i].id && samples[i].prompt == loaded[i].prompt &&
                  samples[i].category == loaded[i].category && samples[i].split == loaded[i].split &&
                  samples[i].grasps == loaded[i].grasps &&
                  samples[i].image.to_vector() == loaded[i].image.to_vector();
    }

    // Checkpoint save -> load -> forward.
    auto cfg = harness::TrainConfig::from_file(config_path("tiny.json"));
    auto model = make_model(cfg.model);
    const auto path = std::filesystem::temp_directory_path() / "gm_acceptance.gmv";
    harness::save_checkpoint(model, path);
    const auto back = harness::load_checkpoint(path);
    const Tensor x = harness::stack_images({samples[0].image});
    const auto a = model.forward(x, {samples[0].prompt}), b = back.forward(x, {samples[0].prompt});
    const bool ckpt_ok = a.quality.to_vector() == b.quality.to_vector() &&
                         a.cos2t.to_vector() == b.cos2t.to_vector() &&
                         a.sin2t.to_vector() == b.sin2t.to_vector() &&
                         a.width.to_vector() == b.width.to_vector();

    return {grasp_ok && data_ok && ckpt_ok,
            fmt("grasp: center %.2f px, angle %.2f deg, width %.1f%%; dataset exact: %s; "
                "checkpoint forward bit-exact: %s",
                d_center, d_angle, 100 * d_width, data_ok ? "yes" : "no", ckpt_ok ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
        {"scan/convolution duality", duality},
        {"discretization vs matrix exponential", discretization},
        {"gradient suite", gradient_suite},
        {"rotated IoU vs rasterization", rotated_iou},
        {"metric fidelity", metric_fidelity},
        {"overfit sanity", overfit},
        {"fusion ablation direction", ablation},
        {"linear vs quadratic scaling", scaling},
        {"round trips", round_trips},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("criterion %d %s: %s (%s)\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
