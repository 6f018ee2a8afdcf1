#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "brain3d/common.hpp"

namespace brain3d {

// 8-bit RGB raster, row-major. Also carries the dataset identity fields so a
// stimulus image and its manifest entry stay attached through the pipeline.
struct Image {
    std::string image_id;
    int class_label = -1;
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;  // width * height * 3

    Image() = default;
    Image(int w, int h, std::array<uint8_t, 3> fill = {255, 255, 255});

    void validate() const;

    uint8_t* at(int x, int y) { return pixels.data() + 3 * (size_t(y) * width + x); }
    const uint8_t* at(int x, int y) const { return pixels.data() + 3 * (size_t(y) * width + x); }

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        uint8_t* p = at(x, y);
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }

    bool same_pixels(const Image& other) const {
        return width == other.width && height == other.height && pixels == other.pixels;
    }
};

// Binary portable pixmap (P6, maxval 255), bit-exact on round trip.
std::string ppm_bytes(const Image& img);
Image parse_ppm(const uint8_t* data, size_t size, const std::string& origin = "<ppm>");
Image parse_ppm(const std::vector<uint8_t>& bytes, const std::string& origin = "<ppm>");
void write_ppm(const Image& img, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

// Box-filter downscale / nearest upscale; deterministic.
Image resize(const Image& img, int width, int height);

// Flattened, mean-centered [0,1] pixel vector at a square working
// resolution; the encoder-facing view of an image.
Eigen::VectorXd centered_pixel_vector(const Image& img, int side);

// Mean of all channel values scaled to [0,1].
double mean_brightness(const Image& img);
std::array<double, 3> mean_rgb(const Image& img);

uint8_t clamp_channel(double v);

}  // namespace brain3d
