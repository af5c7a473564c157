#pragma once

// Frame containers, pixel normalization and square context crops.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mplt/box.hpp"
#include "mplt/tensor.hpp"

namespace mplt {

/// Interleaved HWC image.
template <typename T>
struct BasicImage {
    std::size_t height = 0, width = 0, channels = 3;
    std::vector<T> data;

    BasicImage() = default;
    BasicImage(std::size_t h, std::size_t w, std::size_t c = 3, T fill = T{})
        : height(h), width(w), channels(c), data(h * w * c, fill) {}

    T& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
    const T& at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }
    bool empty() const { return data.empty(); }
    bool operator==(const BasicImage&) const = default;
};

using ImageU8 = BasicImage<std::uint8_t>;
using Image = BasicImage<double>;

// Per-channel standardization constants applied to both modalities.
inline constexpr std::array<double, 3> kPixelMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kPixelStd{0.229, 0.224, 0.225};

/// 8-bit frame to [0, 1] reals.
inline Image to_unit(const ImageU8& src) {
    Image out(src.height, src.width, src.channels);
    for (std::size_t i = 0; i < src.data.size(); ++i) out.data[i] = src.data[i] / 255.0;
    return out;
}

/// (v - mean_c) / std_c on a [0, 1] image.
inline Image standardize(const Image& unit) {
    if (unit.channels != 3) throw DimensionError("standardize expects 3 channels");
    Image out = unit;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const std::size_t c = i % 3;
        out.data[i] = (out.data[i] - kPixelMean[c]) / kPixelStd[c];
    }
    return out;
}

/// Maps crop pixel coordinates to frame coordinates and back.
/// frame = origin + crop / scale.
struct CropGeometry {
    std::size_t frame_width = 0, frame_height = 0;
    double center_x = 0, center_y = 0;
    double side = 0;                      // crop side in frame pixels
    std::size_t out_width = 0, out_height = 0;

    double scale_x() const { return out_width / side; }
    double scale_y() const { return out_height / side; }
    double origin_x() const { return center_x - side / 2; }
    double origin_y() const { return center_y - side / 2; }

    std::array<double, 2> to_frame(double u, double v) const {
        return {origin_x() + u / scale_x(), origin_y() + v / scale_y()};
    }
    std::array<double, 2> to_crop(double fx, double fy) const {
        return {(fx - origin_x()) * scale_x(), (fy - origin_y()) * scale_y()};
    }
    BBox box_to_frame(const BBox& b) const {
        const auto c = to_frame(b.cx(), b.cy());
        return BBox::from_center(c[0], c[1], b.w / scale_x(), b.h / scale_y(), b.confidence);
    }
    BBox box_to_crop(const BBox& b) const {
        const auto c = to_crop(b.cx(), b.cy());
        return BBox::from_center(c[0], c[1], b.w * scale_x(), b.h * scale_y(), b.confidence);
    }

    /// Geometry where crop and frame coordinates coincide.
    static CropGeometry identity(std::size_t size) {
        return {size, size, size / 2.0, size / 2.0, static_cast<double>(size), size, size};
    }
};

struct Crop {
    Image image;
    CropGeometry geometry;
};

/// Square crop of side context·√(w·h) centred on `box`, bilinearly resized to
/// out_height × out_width. Samples outside the frame take the channel mean.
inline Crop crop_region(const Image& frame, const BBox& box, double context, std::size_t out_height,
                        std::size_t out_width) {
    if (!box.valid()) throw std::invalid_argument("crop_region: degenerate box");
    if (frame.empty()) throw std::invalid_argument("crop_region: empty frame");
    if (!(context > 0) || out_height == 0 || out_width == 0) throw std::invalid_argument("crop_region: bad size");
    CropGeometry g;
    g.frame_width = frame.width;
    g.frame_height = frame.height;
    g.center_x = box.cx();
    g.center_y = box.cy();
    g.side = context * std::sqrt(box.w * box.h);
    g.out_width = out_width;
    g.out_height = out_height;

    const std::size_t ch = frame.channels;
    std::vector<double> channel_mean(ch, 0.0);
    for (std::size_t i = 0; i < frame.data.size(); ++i) channel_mean[i % ch] += frame.data[i];
    for (auto& m : channel_mean) m /= static_cast<double>(frame.height * frame.width);

    auto sample = [&](long y, long x, std::size_t c) {
        if (y < 0 || x < 0 || y >= static_cast<long>(frame.height) || x >= static_cast<long>(frame.width))
            return channel_mean[c];
        return frame.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c);
    };

    Crop out{Image(out_height, out_width, ch), g};
    for (std::size_t v = 0; v < out_height; ++v)
        for (std::size_t u = 0; u < out_width; ++u) {
            // Pixel centres: crop (u+0.5) maps to frame (fx), frame pixel i spans [i, i+1).
            const auto f = g.to_frame(u + 0.5, v + 0.5);
            const double fx = f[0] - 0.5, fy = f[1] - 0.5;
            const long x0 = static_cast<long>(std::floor(fx)), y0 = static_cast<long>(std::floor(fy));
            const double ax = fx - x0, ay = fy - y0;
            for (std::size_t c = 0; c < ch; ++c) {
                const double top = (1 - ax) * sample(y0, x0, c) + ax * sample(y0, x0 + 1, c);
                const double bot = (1 - ax) * sample(y0 + 1, x0, c) + ax * sample(y0 + 1, x0 + 1, c);
                out.image.at(v, u, c) = (1 - ay) * top + ay * bot;
            }
        }
    return out;
}

inline Crop crop_region(const Image& frame, const BBox& box, double context, std::size_t out_size) {
    return crop_region(frame, box, context, out_size, out_size);
}

}  // namespace mplt
