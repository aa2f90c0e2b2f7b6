#include "mnistgen/imgops.hpp"

#include "mnistgen/error.hpp"

#include <algorithm>
#include <cmath>

namespace mnistgen::imgops {

Image resize_bilinear(const Image& src, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw UserError("resize: target dimensions must be >= 1");
    if (src.width < 1 || src.height < 1) throw UserError("resize: empty source image");
    Image dst(out_w, out_h, src.channels);
    const double sx = static_cast<double>(src.width) / out_w;
    const double sy = static_cast<double>(src.height) / out_h;

    // Precompute horizontal taps once per column.
    std::vector<int> x0(out_w), x1(out_w);
    std::vector<double> fx(out_w);
    for (int x = 0; x < out_w; ++x) {
        double s = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
        x0[x] = static_cast<int>(std::floor(s));
        x1[x] = std::min(x0[x] + 1, src.width - 1);
        fx[x] = s - x0[x];
    }
    for (int y = 0; y < out_h; ++y) {
        double s = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
        int y0 = static_cast<int>(std::floor(s));
        int y1 = std::min(y0 + 1, src.height - 1);
        double fy = s - y0;
        for (int x = 0; x < out_w; ++x) {
            for (int c = 0; c < src.channels; ++c) {
                double top = src.at(x0[x], y0, c) * (1.0 - fx[x]) + src.at(x1[x], y0, c) * fx[x];
                double bot = src.at(x0[x], y1, c) * (1.0 - fx[x]) + src.at(x1[x], y1, c) * fx[x];
                double v = top * (1.0 - fy) + bot * fy;
                dst.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return dst;
}

Image center_crop(const Image& src, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw UserError("crop: target dimensions must be >= 1");
    if (out_w > src.width || out_h > src.height) {
        throw UserError("crop " + std::to_string(out_w) + "x" + std::to_string(out_h) +
                        " larger than image " + std::to_string(src.width) + "x" +
                        std::to_string(src.height));
    }
    const int top = (src.height - out_h) / 2;
    const int left = (src.width - out_w) / 2;
    Image dst(out_w, out_h, src.channels);
    const std::size_t row_bytes = static_cast<std::size_t>(out_w) * src.channels;
    for (int y = 0; y < out_h; ++y) {
        const auto* from = &src.pixels[(static_cast<std::size_t>(top + y) * src.width + left) * src.channels];
        std::copy(from, from + row_bytes, &dst.pixels[static_cast<std::size_t>(y) * row_bytes]);
    }
    return dst;
}

namespace {

void require_rgb(const Image& img, const char* what) {
    if (img.channels != 3) {
        throw UserError(std::string(what) + ": expected 3-channel input, got " +
                        std::to_string(img.channels));
    }
}

}  // namespace

Image gray_mean(const Image& rgb) {
    require_rgb(rgb, "grayscale(mean)");
    Image out(rgb.width, rgb.height, 1);
    for (std::size_t i = 0, n = out.pixels.size(); i < n; ++i) {
        unsigned sum = rgb.pixels[3 * i] + rgb.pixels[3 * i + 1] + rgb.pixels[3 * i + 2];
        // sum/3 never lands on .5, so (sum+1)/3 is round-to-nearest.
        out.pixels[i] = static_cast<std::uint8_t>((sum + 1) / 3);
    }
    return out;
}

Image gray_weighted(const Image& rgb) {
    require_rgb(rgb, "grayscale(weighted)");
    Image out(rgb.width, rgb.height, 1);
    for (std::size_t i = 0, n = out.pixels.size(); i < n; ++i) {
        unsigned acc = 299u * rgb.pixels[3 * i] + 587u * rgb.pixels[3 * i + 1] + 114u * rgb.pixels[3 * i + 2];
        out.pixels[i] = static_cast<std::uint8_t>((acc + 500u) / 1000u);
    }
    return out;
}

std::vector<double> luminance(const Image& img) {
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    std::vector<double> out(n);
    if (img.channels == 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = img.pixels[i] / 255.0;
    } else if (img.channels == 3) {
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = (0.299 * img.pixels[3 * i] + 0.587 * img.pixels[3 * i + 1] +
                      0.114 * img.pixels[3 * i + 2]) / 255.0;
        }
    } else {
        throw UserError("luminance: unsupported channel count");
    }
    return out;
}

}  // namespace mnistgen::imgops
