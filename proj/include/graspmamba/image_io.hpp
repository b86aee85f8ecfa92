#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "graspmamba/tensor.hpp"

namespace graspmamba {

// 8-bit interleaved RGB.
struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);

// [3, H, W] in [0, 1] <-> 8-bit RGB (round to nearest, clamped).
Tensor image_to_tensor(const RgbImage& image);
RgbImage tensor_to_image(const Tensor& chw);

// Maps a [H, W] field in [0, 1] through a blue-cyan-yellow-red ramp.
RgbImage colormap(std::span<const double> values, std::size_t height, std::size_t width);

}  // namespace graspmamba
