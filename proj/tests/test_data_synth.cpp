#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "doctest.h"
#include "graspmamba/data_synth.hpp"
#include "graspmamba/error.hpp"
#include "graspmamba/rng.hpp"

using namespace graspmamba;
using namespace graspmamba::data;

namespace {

constexpr double kPi = std::numbers::pi;

std::filesystem::path fresh_dir(const std::string& name) {
    const auto d = std::filesystem::temp_directory_path() / ("gm_data_" + name);
    std::filesystem::remove_all(d);
    return d;
}

SceneConfig small_config() {
    SceneConfig c;
    c.image_size = 64;
    return c;
}

// 4-connected components of pixels that differ clearly from the background.
std::size_t object_count(const Tensor& img) {
    const std::size_t s = img.dim(1), plane = s * s;
    std::vector<char> fg(plane, 0), seen(plane, 0);
    const std::array<double, 3> bg{0.82, 0.82, 0.8};
    for (std::size_t i = 0; i < plane; ++i) {
        double d = 0;
        for (std::size_t c = 0; c < 3; ++c) d = std::max(d, std::abs(img.data()[c * plane + i] - bg[c]));
        fg[i] = d > 0.15;
    }
    std::size_t count = 0;
    for (std::size_t i = 0; i < plane; ++i) {
        if (!fg[i] || seen[i]) continue;
        ++count;
        std::vector<std::size_t> stack{i};
        seen[i] = 1;
        while (!stack.empty()) {
            const std::size_t j = stack.back();
            stack.pop_back();
            const std::size_t y = j / s, x = j % s;
            for (auto [yy, xx] : {std::pair{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}}) {
                if (yy >= s || xx >= s) continue;  // wrapped below zero
                const std::size_t k = yy * s + xx;
                if (fg[k] && !seen[k]) seen[k] = 1, stack.push_back(k);
            }
        }
    }
    return count;
}

bool same_sample(const Sample& a, const Sample& b) {
    return a.id == b.id && a.prompt == b.prompt && a.category == b.category &&
           a.split == b.split && a.grasps == b.grasps &&
           a.image.shape() == b.image.shape() && a.image.to_vector() == b.image.to_vector();
}

}  // namespace

TEST_CASE("generate_scene: same seed gives a bit-identical sample") {
    const auto cfg = small_config();
    CHECK(same_sample(generate_scene(42, cfg), generate_scene(42, cfg)));
    CHECK_FALSE(same_sample(generate_scene(42, cfg), generate_scene(43, cfg)));
}

TEST_CASE("generate_scene: sample invariants over many seeds") {
    const auto cfg = small_config();
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const auto s = generate_scene(seed, cfg);
        CHECK(s.image.shape() == Shape{3, 64, 64});
        REQUIRE_FALSE(s.grasps.empty());
        const auto dash = s.category.find('-');
        const std::string color = s.category.substr(0, dash), shape = s.category.substr(dash + 1);
        CHECK(s.prompt.find(color) != std::string::npos);
        CHECK(s.prompt.find(shape) != std::string::npos);
        const auto rgb = color_by_name(color).rgb;
        for (const auto& g : s.grasps) {
            CHECK(g.x >= 0.0);
            CHECK(g.y >= 0.0);
            CHECK(g.x <= 63.0);
            CHECK(g.y <= 63.0);
            CHECK(g.h == doctest::Approx(g.w / 2));
            // Grasp centres land on the target's painted pixels.
            const std::size_t px = std::lround(g.x), py = std::lround(g.y);
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(std::abs(s.image.data()[c * 4096 + py * 64 + px] - rgb[c]) <= 0.045);
        }
        bool quantized = true;
        for (double v : s.image.data()) quantized &= std::abs(v * 255 - std::round(v * 255)) <= 1e-9;
        CHECK(quantized);
        CHECK(object_count(s.image) <= 1 + cfg.max_distractors);
    }
}

TEST_CASE("generate_scene: no distractors leaves a single object") {
    auto cfg = small_config();
    cfg.max_distractors = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK(object_count(generate_scene(seed, cfg).image) == 1);
}

TEST_CASE("generate_scene: fewer than two categories is an argument error") {
    auto cfg = small_config();
    cfg.shapes = {ShapeKind::bar};
    cfg.colors = {"red"};
    CHECK_THROWS_AS(generate_scene(1, cfg), ArgumentError);
}

TEST_CASE("object_grasps: horizontal bar is grasped across its short axis") {
    SceneObject bar{ShapeKind::bar, color_by_name("red"), 30, 30, 20, 6, 0.0, 2};
    const auto g = object_grasps(bar);
    REQUIRE(g.size() == 1);
    CHECK(g[0].theta * 180 / kPi == 90.0);
    CHECK(g[0].w == 10.0);
    CHECK(g[0].x == 30.0);
}

TEST_CASE("object_grasps: grasp counts per shape and centres on the object") {
    Rng rng(3);
    const std::map<ShapeKind, std::size_t> counts{
        {ShapeKind::bar, 1}, {ShapeKind::disk, 8}, {ShapeKind::ring, 8}, {ShapeKind::l_shape, 2}, {ShapeKind::t_shape, 3}};
    for (const auto& [kind, n] : counts) {
        for (int i = 0; i < 10; ++i) {
            SceneObject o{kind, color_by_name("blue"), 50, 50, rng.uniform(18, 30), rng.uniform(5, 8),
                          rng.uniform(-kPi, kPi), 2};
            const auto gs = object_grasps(o);
            CHECK(gs.size() == n);
            for (const auto& g : gs) {
                CHECK(covers(o, g.x, g.y));
                CHECK(g.theta > -kPi / 2);
                CHECK(g.theta <= kPi / 2);
            }
        }
    }
}

TEST_CASE("split_categories: sizes, partition and seeds") {
    std::vector<std::string> cats;
    for (int i = 0; i < 10; ++i) cats.push_back("c" + std::to_string(i));
    const auto [seen, unseen] = split_categories(cats, 0.7, 1);
    CHECK(seen.size() == 7);
    CHECK(unseen.size() == 3);
    std::set<std::string> all(seen.begin(), seen.end());
    for (const auto& u : unseen) CHECK(all.insert(u).second);
    CHECK(all.size() == 10);
    CHECK(split_categories(cats, 0.7, 1) == split_categories(cats, 0.7, 1));
    bool differs = false;
    for (std::uint64_t s = 2; s < 6; ++s) differs |= split_categories(cats, 0.7, s).first != seen;
    CHECK(differs);
    CHECK(split_categories(small_config().categories(), 0.7, 0).first.size() == 14);
    CHECK_THROWS_AS(split_categories({"a"}, 0.7, 0), ArgumentError);
}

TEST_CASE("generate_dataset: split follows the category") {
    const auto cfg = small_config();
    const auto [seen, unseen] = split_categories(cfg.categories(), cfg.split_ratio, cfg.split_seed);
    for (const auto& s : generate_dataset(40, 9, cfg)) {
        const bool is_seen = std::find(seen.begin(), seen.end(), s.category) != seen.end();
        CHECK(is_seen == (s.split == Split::seen));
    }
}

TEST_CASE("save and load round trip is exact") {
    const auto dir = fresh_dir("roundtrip");
    const auto samples = generate_dataset(6, 5, small_config());
    save_dataset(samples, dir);
    CHECK(std::filesystem::exists(dir / "index.jsonl"));
    CHECK(std::filesystem::exists(dir / "images" / (samples[0].id + ".png")));
    const auto loaded = load_dataset(dir);
    REQUIRE(loaded.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(same_sample(samples[i], loaded[i]));
        for (std::size_t g = 0; g < samples[i].grasps.size(); ++g)
            CHECK(geometry::rotated_iou(samples[i].grasps[g], loaded[i].grasps[g]) >= 0.99);
    }
}

TEST_CASE("load_dataset: missing image, duplicate id and malformed line") {
    const auto samples = generate_dataset(3, 6, small_config());
    {
        const auto dir = fresh_dir("missing");
        save_dataset(samples, dir);
        std::filesystem::remove(dir / "images" / (samples[1].id + ".png"));
        CHECK_THROWS_AS(load_dataset(dir), LoadError);
    }
    {
        const auto dir = fresh_dir("duplicate");
        save_dataset(samples, dir);
        std::string first;
        {
            std::ifstream in(dir / "index.jsonl");
            std::getline(in, first);
        }
        std::ofstream(dir / "index.jsonl", std::ios::app) << first << '\n';
        CHECK_THROWS_AS(load_dataset(dir), LoadError);
    }
    {
        const auto dir = fresh_dir("malformed");
        save_dataset(samples, dir);
        std::ofstream(dir / "index.jsonl", std::ios::app) << "{\"id\": \"x\", oops\n";
        try {
            load_dataset(dir);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("index.jsonl:4") != std::string::npos);
        }
    }
}

TEST_CASE("a ground-truth predictor scores 1.0 on both splits") {
    const auto samples = generate_dataset(40, 8, small_config());
    std::vector<geometry::EvalItem> items;
    for (const auto& s : samples) items.push_back({s.split, s.grasps});
    const auto r = geometry::evaluate(items, [&](std::size_t i) { return samples[i].grasps.back(); });
    CHECK(r.n_seen > 0);
    CHECK(r.n_unseen > 0);
    CHECK(r.seen_rate == 1.0);
    CHECK(r.unseen_rate == 1.0);
}
