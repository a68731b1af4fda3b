#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ssk/common.hpp"

namespace ssk {

// One relative pen move in the stroke-3 encoding: offset from the previous
// point plus a flag marking the end of the current stroke.
struct PenMove {
    double dx = 0.0;
    double dy = 0.0;
    int pen_lift = 0;  // 1 ends the stroke after this point
};

struct AbsolutePoint {
    double x = 0.0;
    double y = 0.0;
    int stroke_index = 0;
};

struct BoundingBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    bool intersects(const BoundingBox& o) const {
        return x_min <= o.x_max && o.x_min <= x_max && y_min <= o.y_max && o.y_min <= y_max;
    }
    BoundingBox inflated(double r) const {
        return {x_min - r, y_min - r, x_max + r, y_max + r};
    }
};

// 2x3 row-major affine transform: [a b tx; c d ty]. Columns 0..1 are the
// scale/rotation block, column 2 the translation.
struct AffineTransform {
    std::array<double, 6> m{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

    static AffineTransform identity() { return {}; }
    static AffineTransform scale(double sx, double sy) {
        return AffineTransform{{sx, 0.0, 0.0, 0.0, sy, 0.0}};
    }
    static AffineTransform translation(double tx, double ty) {
        return AffineTransform{{1.0, 0.0, tx, 0.0, 1.0, ty}};
    }
    double det() const { return m[0] * m[4] - m[1] * m[3]; }
    std::pair<double, double> apply(double x, double y) const {
        return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
    }
    // this ∘ other: apply `other` first, then this.
    AffineTransform compose(const AffineTransform& o) const;
};

// An ordered stroke-3 sketch. Invariants: non-empty, last move has
// pen_lift == 1, so splitting at pen_lift == 1 yields >= 1 stroke of >= 1
// point each.
struct VectorSketch {
    std::vector<PenMove> moves;
    std::string source_id;

    std::size_t stroke_count() const;
};

// Parse warnings are counted, not thrown: real stroke-3 files carry pen
// flags > 1 and occasionally miss the final lift.
struct ParseStats {
    std::size_t coerced_pen_flags = 0;
    std::size_t forced_final_lift = 0;
};

using RawMove = std::array<double, 3>;

// Throws EmptySketch on zero moves, InvalidPenFlag on a non-integral third
// component. Integral nonzero flags coerce to 1 (counted in stats).
VectorSketch parse_stroke3(const std::vector<RawMove>& raw, ParseStats* stats = nullptr);
std::vector<RawMove> serialize_stroke3(const VectorSketch& sketch);

// Prefix sums of the relative offsets, origin (0,0); point k carries the
// index of the stroke it belongs to (non-decreasing).
std::vector<AbsolutePoint> absolute_points(const VectorSketch& sketch);

BoundingBox bounding_box(const VectorSketch& sketch);

// Canonical frame: content centered in [0,1]^2, longest side 0.9, aspect
// preserved. Throws DegenerateExtent when all points coincide.
VectorSketch normalize(const VectorSketch& sketch);

// Applies t to the absolute-point form and re-derives relative moves.
// Throws SingularTransform when det(t) == 0.
VectorSketch apply_affine(const VectorSketch& sketch, const AffineTransform& t);

}  // namespace ssk
