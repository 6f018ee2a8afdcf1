#include "brain3d/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

namespace brain3d {

Image::Image(int w, int h, std::array<uint8_t, 3> fill) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw ValidationError("image dimensions must be positive");
    pixels.resize(size_t(w) * h * 3);
    for (size_t i = 0; i < pixels.size(); i += 3) {
        pixels[i] = fill[0];
        pixels[i + 1] = fill[1];
        pixels[i + 2] = fill[2];
    }
}

void Image::validate() const {
    if (width <= 0 || height <= 0)
        throw ValidationError("image dimensions must be positive");
    if (pixels.size() != size_t(width) * height * 3)
        throw ValidationError("pixel buffer length != width*height*3");
}

std::string ppm_bytes(const Image& img) {
    img.validate();
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    return out;
}

namespace {
// Reads one whitespace/comment-delimited token of a PPM header.
size_t next_token(const uint8_t* data, size_t size, size_t pos, std::string& tok, const std::string& origin) {
    while (pos < size) {
        if (data[pos] == '#') {
            while (pos < size && data[pos] != '\n') ++pos;
        } else if (std::isspace(data[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    tok.clear();
    while (pos < size && !std::isspace(data[pos])) tok.push_back(char(data[pos++]));
    if (tok.empty()) throw ParseError("truncated PPM header", origin, 1);
    return pos;
}
}  // namespace

Image parse_ppm(const uint8_t* data, size_t size, const std::string& origin) {
    std::string tok;
    size_t pos = next_token(data, size, 0, tok, origin);
    if (tok != "P6") throw ParseError("not a P6 pixmap (magic '" + tok + "')", origin, 1);
    pos = next_token(data, size, pos, tok, origin);
    int w = std::stoi(tok);
    pos = next_token(data, size, pos, tok, origin);
    int h = std::stoi(tok);
    pos = next_token(data, size, pos, tok, origin);
    int maxval = std::stoi(tok);
    if (maxval != 255) throw ParseError("unsupported maxval " + tok, origin, 1);
    if (w <= 0 || h <= 0) throw ParseError("non-positive dimensions", origin, 1);
    ++pos;  // single whitespace after maxval
    size_t need = size_t(w) * h * 3;
    if (pos + need > size) throw ParseError("truncated PPM payload", origin, 1);
    Image img;
    img.width = w;
    img.height = h;
    img.pixels.assign(data + pos, data + pos + need);
    return img;
}

Image parse_ppm(const std::vector<uint8_t>& bytes, const std::string& origin) {
    return parse_ppm(bytes.data(), bytes.size(), origin);
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
    write_file_atomic(path, ppm_bytes(img));
}

Image read_ppm(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    Image img = parse_ppm(bytes, path.string());
    img.image_id = path.stem().string();
    return img;
}

Image resize(const Image& img, int width, int height) {
    img.validate();
    if (width <= 0 || height <= 0) throw ValidationError("resize target must be positive");
    Image out;
    out.image_id = img.image_id;
    out.class_label = img.class_label;
    out.width = width;
    out.height = height;
    out.pixels.resize(size_t(width) * height * 3);
    for (int y = 0; y < height; ++y) {
        int sy0 = y * img.height / height;
        int sy1 = std::max(sy0 + 1, (y + 1) * img.height / height);
        for (int x = 0; x < width; ++x) {
            int sx0 = x * img.width / width;
            int sx1 = std::max(sx0 + 1, (x + 1) * img.width / width);
            long sum[3] = {0, 0, 0};
            long count = 0;
            for (int sy = sy0; sy < sy1; ++sy) {
                for (int sx = sx0; sx < sx1; ++sx) {
                    const uint8_t* p = img.at(sx, sy);
                    sum[0] += p[0];
                    sum[1] += p[1];
                    sum[2] += p[2];
                    ++count;
                }
            }
            out.set(x, y, uint8_t(sum[0] / count), uint8_t(sum[1] / count), uint8_t(sum[2] / count));
        }
    }
    return out;
}

Eigen::VectorXd centered_pixel_vector(const Image& img, int side) {
    Image small = (img.width == side && img.height == side) ? img : resize(img, side, side);
    Eigen::VectorXd v(size_t(side) * side * 3);
    for (size_t i = 0; i < small.pixels.size(); ++i) v[long(i)] = small.pixels[i] / 255.0;
    v.array() -= v.mean();
    return v;
}

double mean_brightness(const Image& img) {
    img.validate();
    double sum = 0.0;
    for (uint8_t p : img.pixels) sum += p;
    return sum / (255.0 * double(img.pixels.size()));
}

std::array<double, 3> mean_rgb(const Image& img) {
    img.validate();
    double sum[3] = {0, 0, 0};
    for (size_t i = 0; i < img.pixels.size(); i += 3) {
        sum[0] += img.pixels[i];
        sum[1] += img.pixels[i + 1];
        sum[2] += img.pixels[i + 2];
    }
    double n = double(img.pixels.size()) / 3.0;
    return {sum[0] / (255.0 * n), sum[1] / (255.0 * n), sum[2] / (255.0 * n)};
}

uint8_t clamp_channel(double v) {
    double r = std::round(v);
    if (r < 0) return 0;
    if (r > 255) return 255;
    return uint8_t(r);
}

}  // namespace brain3d
