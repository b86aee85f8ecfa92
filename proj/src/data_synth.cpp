#include "graspmamba/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include "json.hpp"

#include "graspmamba/error.hpp"
#include "graspmamba/image_io.hpp"
#include "graspmamba/rng.hpp"

namespace graspmamba::data {

namespace {

constexpr double kPi = std::numbers::pi;

// Oriented box: |u| <= half_u along `angle`, |v| <= half_v across it.
struct Box {
    double cx, cy, half_u, half_v, angle;
};

bool box_covers(const Box& b, double px, double py) {
    const double dx = px - b.cx, dy = py - b.cy;
    const double c = std::cos(b.angle), s = std::sin(b.angle);
    return std::abs(dx * c + dy * s) <= b.half_u && std::abs(-dx * s + dy * c) <= b.half_v;
}

struct Frame {
    double ux, uy, vx, vy;
};

Frame frame(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c, s, -s, c};
}

double ring_inner(const SceneObject& o) { return 0.55 * o.size; }

// L: limb A from the corner along u, limb B along v. T: bar across u at the
// junction plus a stem along v.
double stem_length(const SceneObject& o) { return 0.8 * o.size; }

Point2 corner_point(const SceneObject& o) {
    const Frame f = frame(o.orientation);
    if (o.kind == ShapeKind::l_shape) {
        return {o.cx - 0.4 * o.size * (f.ux + f.vx), o.cy - 0.4 * o.size * (f.uy + f.vy)};
    }
    const double ls = stem_length(o);
    return {o.cx - 0.4 * ls * f.vx, o.cy - 0.4 * ls * f.vy};
}

std::vector<Box> boxes(const SceneObject& o) {
    const Frame f = frame(o.orientation);
    const double t = o.thickness;
    const double perp = o.orientation + kPi / 2;
    switch (o.kind) {
        case ShapeKind::bar:
            return {{o.cx, o.cy, o.size / 2, t / 2, o.orientation}};
        case ShapeKind::l_shape: {
            const Point2 k = corner_point(o);
            const double a_off = (o.size - t / 2) / 2, b_off = (o.size + t / 2) / 2;
            return {{k.x + a_off * f.ux, k.y + a_off * f.uy, (o.size + t / 2) / 2, t / 2,
                     o.orientation},
                    {k.x + b_off * f.vx, k.y + b_off * f.vy, (o.size - t / 2) / 2, t / 2, perp}};
        }
        case ShapeKind::t_shape: {
            const Point2 k = corner_point(o);
            const double ls = stem_length(o);
            const double s_off = (ls + t / 2) / 2;
            return {{k.x, k.y, o.size / 2, t / 2, o.orientation},
                    {k.x + s_off * f.vx, k.y + s_off * f.vy, (ls - t / 2) / 2, t / 2, perp}};
        }
        default:
            return {};
    }
}

GraspRect make_grasp(double x, double y, double opening, double theta) {
    return {x, y, opening, opening / 2, normalize_angle(theta)};
}

SceneObject random_object(ShapeKind kind, const Color& color, double s, Rng& rng) {
    SceneObject o;
    o.kind = kind;
    o.color = color;
    o.orientation = rng.uniform(0.0, kPi);
    o.margin = 0.04 * s;
    switch (kind) {
        case ShapeKind::bar:
            o.size = rng.uniform(0.24, 0.34) * s;
            o.thickness = rng.uniform(0.08, 0.11) * s;
            break;
        case ShapeKind::disk:
            o.size = rng.uniform(0.08, 0.11) * s;
            break;
        case ShapeKind::ring:
            o.size = rng.uniform(0.10, 0.13) * s;
            break;
        case ShapeKind::l_shape:
            o.size = rng.uniform(0.18, 0.24) * s;
            o.thickness = rng.uniform(0.07, 0.09) * s;
            break;
        case ShapeKind::t_shape:
            o.size = rng.uniform(0.22, 0.28) * s;
            o.thickness = rng.uniform(0.07, 0.09) * s;
            break;
    }
    return o;
}

std::string format_index(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%05zu", i);
    return buf;
}

}  // namespace

std::string shape_name(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::bar: return "bar";
        case ShapeKind::disk: return "disk";
        case ShapeKind::ring: return "ring";
        case ShapeKind::l_shape: return "l-shape";
        case ShapeKind::t_shape: return "t-shape";
    }
    return "?";
}

ShapeKind parse_shape(const std::string& name) {
    for (auto k : {ShapeKind::bar, ShapeKind::disk, ShapeKind::ring, ShapeKind::l_shape,
                   ShapeKind::t_shape})
        if (shape_name(k) == name) return k;
    throw ArgumentError("unknown shape kind \"" + name + "\"");
}

const std::vector<Color>& palette() {
    static const std::vector<Color> colors{
        {"red", {0.85, 0.12, 0.12}},   {"green", {0.12, 0.68, 0.18}},
        {"blue", {0.12, 0.25, 0.85}},  {"yellow", {0.92, 0.82, 0.08}},
        {"purple", {0.55, 0.15, 0.7}}, {"orange", {0.95, 0.5, 0.05}},
        {"cyan", {0.05, 0.75, 0.8}},   {"white", {0.98, 0.98, 0.98}}};
    return colors;
}

Color color_by_name(const std::string& name) {
    for (const auto& c : palette())
        if (c.name == name) return c;
    throw ArgumentError("unknown color \"" + name + "\"");
}

std::vector<std::string> SceneConfig::categories() const {
    std::vector<std::string> out;
    for (const auto& c : colors)
        for (auto s : shapes) out.push_back(c + "-" + shape_name(s));
    return out;
}

std::string split_name(Split split) { return split == Split::seen ? "seen" : "unseen"; }

bool covers(const SceneObject& o, double px, double py) {
    const double r = std::hypot(px - o.cx, py - o.cy);
    switch (o.kind) {
        case ShapeKind::disk: return r <= o.size;
        case ShapeKind::ring: return r <= o.size && r >= ring_inner(o);
        default:
            for (const auto& b : boxes(o))
                if (box_covers(b, px, py)) return true;
            return false;
    }
}

double bounding_radius(const SceneObject& o) {
    if (o.kind == ShapeKind::disk || o.kind == ShapeKind::ring) return o.size;
    double r = 0.0;
    for (const auto& b : boxes(o)) {
        const GraspRect as_rect{b.cx, b.cy, 2 * b.half_u, 2 * b.half_v, b.angle};
        for (const auto& p : geometry::rect_corners(as_rect))
            r = std::max(r, std::hypot(p.x - o.cx, p.y - o.cy));
    }
    return r;
}

std::vector<GraspRect> object_grasps(const SceneObject& o) {
    const Frame f = frame(o.orientation);
    const double perp = o.orientation + kPi / 2;
    std::vector<GraspRect> out;
    switch (o.kind) {
        case ShapeKind::bar:
            out.push_back(make_grasp(o.cx, o.cy, o.thickness + 2 * o.margin, perp));
            break;
        case ShapeKind::disk:
            for (int k = 0; k < 8; ++k)
                out.push_back(make_grasp(o.cx, o.cy, 2 * o.size + 2 * o.margin, k * kPi / 8));
            break;
        case ShapeKind::ring: {
            const double inner = ring_inner(o), mid = (o.size + inner) / 2;
            for (int k = 0; k < 8; ++k) {
                const double a = k * kPi / 4;
                out.push_back(make_grasp(o.cx + mid * std::cos(a), o.cy + mid * std::sin(a),
                                         o.size - inner + 2 * o.margin, a));
            }
            break;
        }
        case ShapeKind::l_shape: {
            const Point2 k = corner_point(o);
            const double w = o.thickness + 2 * o.margin, half = o.size / 2;
            out.push_back(make_grasp(k.x + half * f.ux, k.y + half * f.uy, w, perp));
            out.push_back(make_grasp(k.x + half * f.vx, k.y + half * f.vy, w, o.orientation));
            break;
        }
        case ShapeKind::t_shape: {
            const Point2 k = corner_point(o);
            const double w = o.thickness + 2 * o.margin;
            const double arm = 0.3 * o.size;
            const double stem = (stem_length(o) + o.thickness / 2) / 2;
            out.push_back(make_grasp(k.x + arm * f.ux, k.y + arm * f.uy, w, perp));
            out.push_back(make_grasp(k.x - arm * f.ux, k.y - arm * f.uy, w, perp));
            out.push_back(make_grasp(k.x + stem * f.vx, k.y + stem * f.vy, w, o.orientation));
            break;
        }
    }
    return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_categories(
    const std::vector<std::string>& categories, double ratio, std::uint64_t seed) {
    if (categories.size() < 2) {
        throw ArgumentError("split_categories: need at least 2 categories");
    }
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ArgumentError("split_categories: ratio must lie in (0, 1)");
    }
    std::vector<std::string> order = categories;
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.below(i)]);
    const std::size_t n = order.size();
    std::size_t n_seen = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    n_seen = std::clamp<std::size_t>(n_seen, 1, n - 1);
    return {{order.begin(), order.begin() + n_seen}, {order.begin() + n_seen, order.end()}};
}

Sample generate_scene(std::uint64_t seed, const SceneConfig& config) {
    const auto categories = config.categories();
    if (categories.size() < 2) {
        throw ArgumentError("generate_scene: config yields fewer than 2 categories");
    }
    if (config.image_size < 32) throw ArgumentError("generate_scene: image too small");
    const auto [seen, unseen] = split_categories(categories, config.split_ratio, config.split_seed);
    const double s = static_cast<double>(config.image_size);
    Rng rng(seed);

    const std::size_t n_shapes = config.shapes.size();
    const std::size_t target_cat = rng.below(categories.size());
    const Color target_color = color_by_name(config.colors[target_cat / n_shapes]);
    const ShapeKind target_kind = config.shapes[target_cat % n_shapes];

    std::vector<SceneObject> objects;
    auto place = [&](SceneObject o) {
        const double r = bounding_radius(o);
        for (int attempt = 0; attempt < 200; ++attempt) {
            o.cx = rng.uniform(r + 1.0, s - 2.0 - r);
            o.cy = rng.uniform(r + 1.0, s - 2.0 - r);
            bool clear = true;
            for (const auto& other : objects)
                clear = clear && std::hypot(o.cx - other.cx, o.cy - other.cy) >
                                     r + bounding_radius(other) + 2.0;
            if (clear) {
                objects.push_back(o);
                return true;
            }
        }
        return false;
    };

    if (!place(random_object(target_kind, target_color, s, rng))) {
        throw ArgumentError("generate_scene: target does not fit in the image");
    }
    const std::size_t n_distractors = rng.below(config.max_distractors + 1);
    for (std::size_t i = 0; i < n_distractors; ++i) {
        std::size_t cat = rng.below(categories.size() - 1);
        if (cat >= target_cat) ++cat;
        place(random_object(config.shapes[cat % n_shapes],
                            color_by_name(config.colors[cat / n_shapes]), s, rng));
    }

    const std::size_t size = config.image_size, plane = size * size;
    std::vector<double> pixels(3 * plane);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            std::array<double, 3> rgb{0.82, 0.82, 0.8};
            for (const auto& o : objects)
                if (covers(o, static_cast<double>(x), static_cast<double>(y))) rgb = o.color.rgb;
            const double noise = rng.uniform(-0.04, 0.04);
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(rgb[c] + noise, 0.0, 1.0);
                pixels[c * plane + y * size + x] = std::round(v * 255.0) / 255.0;
            }
        }
    }

    static const char* const kTemplates[] = {"grasp the %s %s", "pick up the %s %s",
                                             "grab the %s %s", "hold the %s %s"};
    const std::string shape_word = shape_name(target_kind);
    char prompt[128];
    std::snprintf(prompt, sizeof(prompt), kTemplates[rng.below(4)], target_color.name.c_str(),
                  shape_word.c_str());

    Sample sample;
    char id[48];
    std::snprintf(id, sizeof(id), "scene_%016llx", static_cast<unsigned long long>(seed));
    sample.id = id;
    sample.image = Tensor::from_data({3, size, size}, std::move(pixels));
    sample.prompt = prompt;
    sample.category = categories[target_cat];
    sample.grasps = object_grasps(objects.front());
    sample.split = std::find(seen.begin(), seen.end(), sample.category) != seen.end()
                       ? Split::seen
                       : Split::unseen;
    return sample;
}

std::vector<Sample> generate_dataset(std::size_t n, std::uint64_t seed,
                                     const SceneConfig& config) {
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Sample s = generate_scene(mix_seed(seed, i), config);
        s.id = format_index(i);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    std::ofstream index(dir / "index.jsonl");
    if (!index) throw LoadError("cannot write " + (dir / "index.jsonl").string());
    for (const auto& s : samples) {
        const std::string rel = "images/" + s.id + ".png";
        write_png(dir / rel, tensor_to_image(s.image));
        nlohmann::json j;
        j["id"] = s.id;
        j["image"] = rel;
        j["prompt"] = s.prompt;
        j["category"] = s.category;
        j["split"] = split_name(s.split);
        j["grasps"] = nlohmann::json::array();
        for (const auto& g : s.grasps)
            j["grasps"].push_back({{"x", g.x}, {"y", g.y}, {"w", g.w}, {"h", g.h}, {"theta", g.theta}});
        index << j.dump() << '\n';
    }
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
    const auto index_path = dir / "index.jsonl";
    std::ifstream index(index_path);
    if (!index) throw LoadError("cannot open " + index_path.string());
    std::vector<Sample> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(index, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = index_path.string() + ":" + std::to_string(line_no);
        Sample s;
        std::string image_rel;
        try {
            const auto j = nlohmann::json::parse(line);
            s.id = j.at("id").get<std::string>();
            image_rel = j.at("image").get<std::string>();
            s.prompt = j.at("prompt").get<std::string>();
            s.category = j.at("category").get<std::string>();
            const auto split = j.at("split").get<std::string>();
            if (split != "seen" && split != "unseen") {
                throw ParseError("split must be \"seen\" or \"unseen\"");
            }
            s.split = split == "seen" ? Split::seen : Split::unseen;
            for (const auto& g : j.at("grasps")) {
                s.grasps.push_back({g.at("x").get<double>(), g.at("y").get<double>(),
                                    g.at("w").get<double>(), g.at("h").get<double>(),
                                    g.at("theta").get<double>()});
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(where + ": " + e.what());
        } catch (const ParseError& e) {
            throw ParseError(where + ": " + e.what());
        }
        if (s.grasps.empty()) throw ParseError(where + ": sample has no grasps");
        if (!ids.insert(s.id).second) throw LoadError(where + ": duplicate id \"" + s.id + "\"");
        const RgbImage image = read_png(dir / image_rel);
        s.image = image_to_tensor(image);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace graspmamba::data
