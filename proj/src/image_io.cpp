#include "graspmamba/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include "graspmamba/error.hpp"

namespace graspmamba {

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    if (image.pixels.size() != image.width * image.height * 3) {
        throw ShapeError("write_png: pixel buffer does not match dimensions");
    }
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
        throw LoadError("cannot write PNG " + path.string() + ": " + png.message);
    }
}

RgbImage read_png(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw LoadError("image file not found: " + path.string());
    }
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw LoadError("cannot read PNG " + path.string() + ": " + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    RgbImage image;
    image.width = png.width;
    image.height = png.height;
    image.pixels.resize(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, image.pixels.data(), 0, nullptr)) {
        png_image_free(&png);
        throw LoadError("cannot decode PNG " + path.string() + ": " + png.message);
    }
    return image;
}

Tensor image_to_tensor(const RgbImage& image) {
    const std::size_t plane = image.width * image.height;
    std::vector<double> data(3 * plane);
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            data[c * plane + i] = image.pixels[i * 3 + c] / 255.0;
    return Tensor::from_data({3, image.height, image.width}, std::move(data));
}

RgbImage tensor_to_image(const Tensor& chw) {
    if (chw.rank() != 3 || chw.dim(0) != 3) {
        throw ShapeError("tensor_to_image: expected [3, H, W], got " + shape_str(chw.shape()));
    }
    RgbImage image{chw.dim(2), chw.dim(1), {}};
    const std::size_t plane = image.width * image.height;
    image.pixels.resize(plane * 3);
    auto d = chw.data();
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            image.pixels[i * 3 + c] = static_cast<std::uint8_t>(
                std::lround(std::clamp(d[c * plane + i], 0.0, 1.0) * 255.0));
    return image;
}

RgbImage colormap(std::span<const double> values, std::size_t height, std::size_t width) {
    if (values.size() != height * width) throw ShapeError("colormap: size mismatch");
    static constexpr std::array<std::array<double, 3>, 4> stops{
        {{0.05, 0.05, 0.45}, {0.0, 0.75, 0.85}, {0.95, 0.9, 0.1}, {0.85, 0.05, 0.05}}};
    RgbImage image{width, height, std::vector<std::uint8_t>(values.size() * 3)};
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = std::clamp(values[i], 0.0, 1.0) * (stops.size() - 1);
        const std::size_t lo = std::min<std::size_t>(static_cast<std::size_t>(v), stops.size() - 2);
        const double f = v - static_cast<double>(lo);
        for (std::size_t c = 0; c < 3; ++c) {
            const double x = stops[lo][c] * (1 - f) + stops[lo + 1][c] * f;
            image.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(x * 255.0));
        }
    }
    return image;
}

}  // namespace graspmamba
