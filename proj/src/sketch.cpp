#include "ssk/sketch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ssk {

AffineTransform AffineTransform::compose(const AffineTransform& o) const {
    const auto& a = m;
    const auto& b = o.m;
    AffineTransform out;
    out.m[0] = a[0] * b[0] + a[1] * b[3];
    out.m[1] = a[0] * b[1] + a[1] * b[4];
    out.m[2] = a[0] * b[2] + a[1] * b[5] + a[2];
    out.m[3] = a[3] * b[0] + a[4] * b[3];
    out.m[4] = a[3] * b[1] + a[4] * b[4];
    out.m[5] = a[3] * b[2] + a[4] * b[5] + a[5];
    return out;
}

std::size_t VectorSketch::stroke_count() const {
    std::size_t n = 0;
    for (const auto& mv : moves) {
        if (mv.pen_lift == 1) ++n;
    }
    return n;
}

VectorSketch parse_stroke3(const std::vector<RawMove>& raw, ParseStats* stats) {
    if (raw.empty()) throw EmptySketch();
    ParseStats local;
    VectorSketch out;
    out.moves.reserve(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) {
        const double p = raw[k][2];
        if (p != std::floor(p) || !std::isfinite(p)) {
            throw InvalidPenFlag("pen flag at move " + std::to_string(k) + " is not an integer: " +
                                 std::to_string(p));
        }
        int lift = 0;
        if (p != 0.0) {
            lift = 1;
            if (p != 1.0) ++local.coerced_pen_flags;
        }
        out.moves.push_back({raw[k][0], raw[k][1], lift});
    }
    if (out.moves.back().pen_lift != 1) {
        out.moves.back().pen_lift = 1;
        ++local.forced_final_lift;
    }
    if (stats) *stats = local;
    return out;
}

std::vector<RawMove> serialize_stroke3(const VectorSketch& sketch) {
    std::vector<RawMove> raw;
    raw.reserve(sketch.moves.size());
    for (const auto& mv : sketch.moves) {
        raw.push_back({mv.dx, mv.dy, static_cast<double>(mv.pen_lift)});
    }
    return raw;
}

std::vector<AbsolutePoint> absolute_points(const VectorSketch& sketch) {
    std::vector<AbsolutePoint> pts;
    pts.reserve(sketch.moves.size());
    double x = 0.0, y = 0.0;
    int stroke = 0;
    for (const auto& mv : sketch.moves) {
        x += mv.dx;
        y += mv.dy;
        pts.push_back({x, y, stroke});
        if (mv.pen_lift == 1) ++stroke;
    }
    return pts;
}

BoundingBox bounding_box(const VectorSketch& sketch) {
    if (sketch.moves.empty()) throw EmptySketch();
    BoundingBox box{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
                    std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};
    for (const auto& p : absolute_points(sketch)) {
        box.x_min = std::min(box.x_min, p.x);
        box.y_min = std::min(box.y_min, p.y);
        box.x_max = std::max(box.x_max, p.x);
        box.y_max = std::max(box.y_max, p.y);
    }
    return box;
}

namespace {
constexpr double kCanvasFill = 0.9;  // longest side of normalized content
}

VectorSketch normalize(const VectorSketch& sketch) {
    const BoundingBox box = bounding_box(sketch);
    const double extent = std::max(box.width(), box.height());
    if (extent <= 1e-12) throw DegenerateExtent();
    const double s = kCanvasFill / extent;
    const double cx = 0.5 * (box.x_min + box.x_max);
    const double cy = 0.5 * (box.y_min + box.y_max);
    AffineTransform t = AffineTransform::translation(0.5, 0.5)
                            .compose(AffineTransform::scale(s, s))
                            .compose(AffineTransform::translation(-cx, -cy));
    return apply_affine(sketch, t);
}

VectorSketch apply_affine(const VectorSketch& sketch, const AffineTransform& t) {
    if (sketch.moves.empty()) throw EmptySketch();
    if (t.det() == 0.0) throw SingularTransform();
    VectorSketch out;
    out.source_id = sketch.source_id;
    out.moves.reserve(sketch.moves.size());
    double px = 0.0, py = 0.0;       // previous transformed point
    double ax = 0.0, ay = 0.0;       // running absolute input point
    for (const auto& mv : sketch.moves) {
        ax += mv.dx;
        ay += mv.dy;
        auto [qx, qy] = t.apply(ax, ay);
        out.moves.push_back({qx - px, qy - py, mv.pen_lift});
        px = qx;
        py = qy;
    }
    return out;
}

}  // namespace ssk
