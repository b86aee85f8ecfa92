#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "gradcheck.hpp"
#include "graspmamba/data_synth.hpp"
#include "graspmamba/error.hpp"
#include "graspmamba/harness.hpp"
#include "json.hpp"

using namespace graspmamba;
using namespace graspmamba::harness;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("gm_harness_" + name);
}

head::GraspMaps constant_maps(double q, double c, double s, double w, std::size_t n = 1) {
    const Shape shape{1, 1, n};
    return {Tensor::full(shape, q), Tensor::full(shape, c), Tensor::full(shape, s),
            Tensor::full(shape, w)};
}

ModelConfig tiny_model(std::size_t width = 4) {
    ModelConfig m;
    m.width = width;
    m.fused_width = 4;
    m.text_dim = 8;
    m.vocab_size = 64;
    m.state_size = 4;
    m.head_hidden = 8;
    m.w_max = 20;
    return m;
}

std::vector<data::Sample> small_dataset(std::size_t n, std::uint64_t seed, bool all_seen = true) {
    data::SceneConfig cfg;
    cfg.image_size = 32;
    auto samples = data::generate_dataset(n, seed, cfg);
    if (all_seen)
        for (auto& s : samples) s.split = data::Split::seen;
    return samples;
}

std::vector<double> flat_parameters(GraspModel& m) {
    std::vector<double> out;
    m.visit([&](const std::string&, Tensor& t) { out.insert(out.end(), t.data().begin(), t.data().end()); });
    return out;
}

}  // namespace

TEST_CASE("loss_fn: identity, quadratic and linear branches") {
    const auto p = constant_maps(0.3, 0.1, -0.2, 0.6, 4);
    CHECK(loss_fn(p, p).item() == 0.0);
    CHECK(loss_fn(constant_maps(0.5, 0, 0, 0), constant_maps(0, 0, 0, 0)).item() == doctest::Approx(0.125));
    CHECK(loss_fn(constant_maps(0, 2, 0, 0), constant_maps(0, 0, 0, 0)).item() == doctest::Approx(1.5));
    CHECK_THROWS_AS(loss_fn(constant_maps(0, 0, 0, 0, 2), constant_maps(0, 0, 0, 0, 3)), ShapeError);
}

TEST_CASE("train config JSON round trip and validation") {
    TrainConfig c;
    c.model = tiny_model();
    c.epochs = 7;
    c.lr = 0.25;
    c.grad_clip = 0.05;
    c.augment = true;
    const auto back = TrainConfig::from_json(c.to_json());
    CHECK(back.model == c.model);
    CHECK(back.epochs == 7);
    CHECK(back.lr == 0.25);
    CHECK(back.grad_clip == 0.05);
    CHECK(back.augment);
    CHECK(TrainConfig::from_json("{}").batch_size == TrainConfig{}.batch_size);
    CHECK_THROWS_AS(TrainConfig::from_json("{\"train\": {\"batch_size\": 0}}"), ArgumentError);
    CHECK_THROWS_AS(TrainConfig::from_json("{not json"), ParseError);
    CHECK_THROWS_AS(TrainConfig::from_file(temp_file("absent.json")), LoadError);
}

TEST_CASE("gradient check: end-to-end loss on a 32x32 image") {
    auto model = make_model(tiny_model());
    const auto sample = small_dataset(1, 3)[0];
    const Tensor images = stack_images({sample.image});
    const auto target = head::encode_targets(sample.grasps, 32, 32, model.config.w_max);
    std::vector<Tensor> params;
    model.visit([&](const std::string&, Tensor& t) { params.push_back(t); });
    const double err = gradcheck::max_error(params, [&] {
        return loss_fn(model.forward(images, {sample.prompt}), target);
    }, 1e-5, 3);
    CHECK(err <= 1e-4);
}

TEST_CASE("train: loss decreases, runs are deterministic and lr 0 is a no-op") {
    const auto samples = small_dataset(8, 4);
    TrainConfig c;
    c.model = tiny_model();
    c.epochs = 2;
    c.batch_size = 2;
    c.lr = 0.3;
    c.grad_clip = 0.05;
    const auto a = train(c, samples);
    REQUIRE(a.epoch_loss.size() == 2);
    CHECK(a.epoch_loss[1] < a.epoch_loss[0]);
    const auto b = train(c, samples);
    CHECK(a.epoch_loss == b.epoch_loss);

    c.lr = 0.0;
    auto frozen = train(c, samples);
    auto init = make_model(c.model);
    CHECK(flat_parameters(frozen.model) == flat_parameters(init));
}

TEST_CASE("train: only seen samples are used") {
    auto samples = small_dataset(4, 5);
    for (auto& s : samples) s.split = data::Split::unseen;
    TrainConfig c;
    c.model = tiny_model();
    c.epochs = 1;
    CHECK_THROWS_AS(train(c, samples), ArgumentError);

    // Unseen samples never reach the optimizer: adding them changes nothing.
    auto mixed = small_dataset(4, 6);
    c.batch_size = 2;
    const auto base = train(c, mixed);
    auto extra = samples;
    extra.insert(extra.end(), mixed.begin(), mixed.end());
    CHECK(train(c, extra).epoch_loss == base.epoch_loss);
}

TEST_CASE("train: per-epoch logging") {
    TrainConfig c;
    c.model = tiny_model();
    c.epochs = 3;
    c.batch_size = 4;
    std::vector<std::size_t> epochs;
    const auto r = train(c, small_dataset(4, 7), [&](std::size_t e, double) { epochs.push_back(e); });
    CHECK(epochs == std::vector<std::size_t>{0, 1, 2});
    CHECK(r.epoch_loss.size() == 3);
}

TEST_CASE("dihedral: targets of moved grasps match moved targets") {
    const auto s = small_dataset(6, 8);
    for (const auto& sample : s) {
        const auto base = head::encode_targets(sample.grasps, 32, 32, 20);
        const Tensor q = Tensor::from_data({1, 32, 32}, base.quality.to_vector());
        for (int t = 0; t < 8; ++t) {
            const auto moved = dihedral(sample.image, sample.grasps, t);
            CHECK(moved.image.shape() == sample.image.shape());
            const auto want = dihedral(Tensor::from_data({1, 32, 32}, q.to_vector()), {}, t).image.to_vector();
            const auto got = head::encode_targets(moved.grasps, 32, 32, 20).quality.to_vector();
            std::size_t mismatched = 0;
            for (std::size_t i = 0; i < got.size(); ++i) mismatched += got[i] != want[i];
            // Only pixels exactly on a rectangle edge may flip.
            CHECK(mismatched <= 8);
        }
    }
}

TEST_CASE("dihedral: group structure and errors") {
    Rng rng(9);
    const Tensor img = gradcheck::random_tensor({3, 8, 8}, rng, false);
    const std::vector<GraspRect> g{{2, 3, 4, 2, 0.3}};
    auto r = dihedral(img, g, 1);
    for (int i = 0; i < 3; ++i) r = dihedral(r.image, r.grasps, 1);
    CHECK(r.image.to_vector() == img.to_vector());
    CHECK(r.grasps[0].x == doctest::Approx(2.0));
    CHECK(std::abs(normalize_angle(r.grasps[0].theta - 0.3)) <= 1e-12);
    const auto f = dihedral(dihedral(img, g, 4).image, dihedral(img, g, 4).grasps, 4);
    CHECK(f.image.to_vector() == img.to_vector());
    CHECK(dihedral(img, g, 0).image.to_vector() == img.to_vector());
    CHECK_THROWS_AS(dihedral(img, g, 8), ArgumentError);
    CHECK_THROWS_AS(dihedral(gradcheck::random_tensor({3, 8, 6}, rng, false), g, 1), ShapeError);
}

TEST_CASE("checkpoint: round trip gives bit-identical forward outputs") {
    auto m = make_model(tiny_model());
    const auto path = temp_file("roundtrip.gmv");
    save_checkpoint(m, path);
    auto back = load_checkpoint(path);
    CHECK(back.config == m.config);
    CHECK(flat_parameters(back) == flat_parameters(m));
    const auto sample = small_dataset(1, 10)[0];
    const Tensor x = stack_images({sample.image});
    const auto a = m.forward(x, {sample.prompt}), b = back.forward(x, {sample.prompt});
    CHECK(a.quality.to_vector() == b.quality.to_vector());
    CHECK(a.width.to_vector() == b.width.to_vector());
    CHECK(a.cos2t.to_vector() == b.cos2t.to_vector());
    CHECK(a.sin2t.to_vector() == b.sin2t.to_vector());
}

TEST_CASE("checkpoint: header is readable JSON with a tensor manifest") {
    auto m = make_model(tiny_model());
    const auto path = temp_file("header.gmv");
    save_checkpoint(m, path);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    REQUIRE(bytes.size() > 12);
    CHECK(bytes.substr(0, 4) == "GMV1");
    std::uint64_t len = 0;
    for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[4 + i]);
    const auto header = nlohmann::json::parse(bytes.substr(12, len));
    CHECK(header.at("tensors").size() == m.parameters().size());
    CHECK(header.at("tensors")[0].at("dtype") == "f32");
    CHECK(bytes.size() == 12 + len + 4 * m.parameter_count());
}

TEST_CASE("checkpoint: bad magic, truncation, missing file and shape mismatch") {
    auto m = make_model(tiny_model());
    const auto path = temp_file("bad.gmv");
    save_checkpoint(m, path);
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign((std::istreambuf_iterator<char>(in)), {});
    }
    auto write = [&](const std::string& b) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << b;
    };
    write("XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(load_checkpoint(path), LoadError);
    write(bytes.substr(0, bytes.size() - 10));
    CHECK_THROWS_AS(load_checkpoint(path), LoadError);
    write(bytes.substr(0, 6));
    CHECK_THROWS_AS(load_checkpoint(path), LoadError);
    CHECK_THROWS_AS(load_checkpoint(temp_file("absent.gmv")), LoadError);

    write(bytes);
    auto wider = make_model(tiny_model(8));
    try {
        load_checkpoint_into(path, wider);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("backbone.") != std::string::npos);
    }
}

TEST_CASE("infer: heatmap dims, determinism and indivisible input") {
    const auto m = make_model(tiny_model());
    const auto sample = small_dataset(1, 11)[0];
    const auto a = infer(m, sample.image, sample.prompt, 3);
    CHECK(a.heatmap.width == 32);
    CHECK(a.heatmap.height == 32);
    CHECK(a.heatmap.pixels.size() == 32 * 32 * 3);
    CHECK(a.grasps.size() <= 3);
    const auto b = infer(m, sample.image, sample.prompt, 3);
    REQUIRE(a.grasps.size() == b.grasps.size());
    for (std::size_t i = 0; i < a.grasps.size(); ++i) CHECK(a.grasps[i].rect == b.grasps[i].rect);
    CHECK(a.heatmap.pixels == b.heatmap.pixels);
    CHECK_THROWS_AS(infer(m, Tensor::zeros({3, 48, 32}), "grasp the red bar", 1), ShapeError);
}

TEST_CASE("evaluate_model and grasp JSON") {
    const auto m = make_model(tiny_model());
    const auto samples = small_dataset(6, 12, false);
    const auto r = evaluate_model(m, samples);
    CHECK(r.n_seen + r.n_unseen == 6);
    CHECK(r.seen_rate >= 0.0);
    CHECK(r.seen_rate <= 1.0);
    const auto j = nlohmann::json::parse(grasps_json({{{1, 2, 3, 1.5, 0.25}, 0.75}}));
    REQUIRE(j.size() == 1);
    CHECK(j[0].at("x") == 1.0);
    CHECK(j[0].at("theta") == 0.25);
    CHECK(j[0].at("quality") == 0.75);
}

TEST_CASE("benchmark_scan: rows, monotone lengths and report formats") {
    BenchOptions o;
    o.channels = 8;
    o.state_size = 4;
    o.repeats = 3;
    const auto rows = benchmark_scan({64, 256}, {BenchMode::scan, BenchMode::conv, BenchMode::attention}, o);
    REQUIRE(rows.size() == 6);
    for (const auto& r : rows) CHECK(r.seconds > 0.0);
    CHECK(rows[5].seconds >= rows[4].seconds);  // attention grows with L
    const auto j = nlohmann::json::parse(bench_json(rows));
    CHECK(j.size() == 6);
    CHECK(bench_table(rows).find("attention") != std::string::npos);
    CHECK(parse_bench_mode("conv") == BenchMode::conv);
    CHECK_THROWS_AS(parse_bench_mode("fft"), ArgumentError);
}
