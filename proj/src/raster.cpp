#include "ssk/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace ssk {

RasterImage RasterImage::to_gray() const {
    if (channels == 1) return *this;
    RasterImage g(width, height, 1);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            float sum = 0.0f;
            for (int c = 0; c < channels; ++c) sum += at(x, y, c);
            g.at(x, y) = sum / static_cast<float>(channels);
        }
    }
    return g;
}

double RasterImage::ink_fraction() const {
    double sum = 0.0;
    for (float v : pixels) sum += v;
    return pixels.empty() ? 0.0 : sum / static_cast<double>(pixels.size());
}

namespace {

// Square stamp of side w around (x, y). Offsets chosen so the footprint of
// width w is a superset of width w-1 (ink count monotone in stroke_width).
void stamp(RasterImage& img, int x, int y, int w) {
    const int lo = -((w - 1) / 2);
    const int hi = w / 2;
    for (int dy = lo; dy <= hi; ++dy) {
        for (int dx = lo; dx <= hi; ++dx) {
            const int px = x + dx;
            const int py = y + dy;
            if (px >= 0 && px < img.width && py >= 0 && py < img.height) {
                img.at(px, py) = 1.0f;
            }
        }
    }
}

void draw_segment(RasterImage& img, int x0, int y0, int x1, int y1, int w) {
    // Bresenham over the longer axis.
    const int dx = std::abs(x1 - x0);
    const int dy = std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1;
    const int sy = y0 < y1 ? 1 : -1;
    int err = dx - dy;
    int x = x0, y = y0;
    while (true) {
        stamp(img, x, y, w);
        if (x == x1 && y == y1) break;
        const int e2 = 2 * err;
        if (e2 > -dy) {
            err -= dy;
            x += sx;
        }
        if (e2 < dx) {
            err += dx;
            y += sy;
        }
    }
}

}  // namespace

RasterImage rasterize(const VectorSketch& sketch, int resolution, int stroke_width,
                      const BoundingBox& canvas) {
    if (resolution < 8) {
        throw ResolutionTooSmall("rasterize resolution " + std::to_string(resolution) + " < 8");
    }
    if (stroke_width < 1) throw InvalidArgument("stroke_width must be >= 1");
    const double cw = canvas.width();
    const double ch = canvas.height();
    if (cw <= 0.0 || ch <= 0.0) throw InvalidArgument("canvas box has non-positive extent");

    RasterImage img(resolution, resolution, 1);
    const auto pts = absolute_points(sketch);
    const double sx = (resolution - 1) / cw;
    const double sy = (resolution - 1) / ch;
    auto to_px = [&](const AbsolutePoint& p) {
        const int x = static_cast<int>(std::lround((p.x - canvas.x_min) * sx));
        const int y = static_cast<int>(std::lround((p.y - canvas.y_min) * sy));
        return std::pair<int, int>{x, y};
    };

    for (std::size_t k = 0; k < pts.size(); ++k) {
        auto [x1, y1] = to_px(pts[k]);
        const bool starts_stroke = k == 0 || pts[k - 1].stroke_index != pts[k].stroke_index;
        if (starts_stroke) {
            stamp(img, x1, y1, stroke_width);
        } else {
            auto [x0, y0] = to_px(pts[k - 1]);
            draw_segment(img, x0, y0, x1, y1, stroke_width);
        }
    }
    return img;
}

}  // namespace ssk
