#pragma once

#include <vector>

#include "ssk/common.hpp"
#include "ssk/sketch.hpp"

namespace ssk {

// Row-major pixel buffer, interleaved channels, values in [0,1].
// 1 channel: sketch raster, ink = 1 on background 0.
// 3 channels: photo, RGB.
// Pixel (0,0) is top-left; y grows downward.
struct RasterImage {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> pixels;

    RasterImage() = default;
    RasterImage(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c),
          pixels(static_cast<std::size_t>(w) * h * c, fill) {}

    float& at(int x, int y, int c = 0) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float at(int x, int y, int c = 0) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

    // Mean over channels; identity for 1-channel images.
    RasterImage to_gray() const;
    double ink_fraction() const;  // mean pixel value, 1-channel only
};

// Integer line traversal with a square stamp of side stroke_width; no
// anti-aliasing, so identical inputs give bit-identical buffers. The sketch
// is interpreted on the given canvas box ([0,1]^2 by default).
RasterImage rasterize(const VectorSketch& sketch, int resolution, int stroke_width,
                      const BoundingBox& canvas = {0.0, 0.0, 1.0, 1.0});

}  // namespace ssk
