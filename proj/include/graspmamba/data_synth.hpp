#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "graspmamba/geometry.hpp"
#include "graspmamba/tensor.hpp"

namespace graspmamba::data {

using geometry::Split;

enum class ShapeKind { bar, disk, ring, l_shape, t_shape };

std::string shape_name(ShapeKind kind);  // "bar", "disk", "ring", "l-shape", "t-shape"
ShapeKind parse_shape(const std::string& name);

struct Color {
    std::string name;
    std::array<double, 3> rgb;
};

// red, green, blue, yellow, purple, orange, cyan, white.
const std::vector<Color>& palette();
Color color_by_name(const std::string& name);

struct SceneConfig {
    std::size_t image_size = 224;
    std::vector<ShapeKind> shapes{ShapeKind::bar, ShapeKind::disk, ShapeKind::ring,
                                  ShapeKind::l_shape, ShapeKind::t_shape};
    std::vector<std::string> colors{"red", "green", "blue", "yellow"};
    std::size_t max_distractors = 3;
    double split_ratio = 0.7;
    std::uint64_t split_seed = 0;

    // "<color>-<shape>" for every color x shape pair, colors outermost.
    std::vector<std::string> categories() const;
};

struct Sample {
    std::string id;
    Tensor image;  // [3, H, W], values are multiples of 1/255
    std::string prompt;
    std::string category;
    std::vector<GraspRect> grasps;
    Split split = Split::seen;
};

/// One painted object. `size` is the object's characteristic length in pixels
/// (bar length, disk/ring outer radius, limb length); `thickness` the short
/// extent of bars and limbs; `orientation` the direction of the long axis.
struct SceneObject {
    ShapeKind kind = ShapeKind::bar;
    Color color;
    double cx = 0.0, cy = 0.0;
    double size = 0.0;
    double thickness = 0.0;
    double orientation = 0.0;
    double margin = 0.0;  // added to the grasped extent to get the opening w
};

bool covers(const SceneObject& obj, double px, double py);
double bounding_radius(const SceneObject& obj);

/// Analytic grasps: bar across its short axis at the centre; disk across 8
/// diameters; ring across the wall at 8 positions; L and T across every limb.
/// All grasps use h = w / 2.
std::vector<GraspRect> object_grasps(const SceneObject& obj);

/// Scene fully determined by (seed, config): one target, 0..max_distractors
/// distractors of other categories, flat background with mild noise.
Sample generate_scene(std::uint64_t seed, const SceneConfig& config);

/// Samples i = 0..n-1 use seed mix_seed(seed, i) and id "scene_<i>".
std::vector<Sample> generate_dataset(std::size_t n, std::uint64_t seed,
                                     const SceneConfig& config);

/// Seeded shuffle, first round(ratio * n) categories are seen, the rest unseen.
std::pair<std::vector<std::string>, std::vector<std::string>> split_categories(
    const std::vector<std::string>& categories, double ratio, std::uint64_t seed);

/// images/<id>.png plus index.jsonl.
void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir);
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

std::string split_name(Split split);

}  // namespace graspmamba::data
