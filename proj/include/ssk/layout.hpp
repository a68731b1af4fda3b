#pragma once

#include <cstdint>
#include <string>

#include "ssk/expansion.hpp"
#include "ssk/raster.hpp"
#include "ssk/sketch.hpp"

// Canvas layout: propose a normalized bounding box for the main object from
// a scene description, place the object sketch inside it (aspect-preserving
// letterbox), and invert the placement by cropping the box region back out
// of the scene raster.
namespace ssk {

inline constexpr double kMinLayoutSide = 0.05;

struct LayoutSpec {
    double x = 0.0, y = 0.0, w = 1.0, h = 1.0;  // normalized, inside [0,1]²
    std::string object_phrase;
    std::string backend;
    std::uint64_t seed = 0;

    bool valid(double min_side = kMinLayoutSide) const {
        return x >= 0.0 && y >= 0.0 && w >= min_side && h >= min_side &&
               x + w <= 1.0 + 1e-9 && y + h <= 1.0 + 1e-9;
    }
    static LayoutSpec full_canvas() { return LayoutSpec{0.0, 0.0, 1.0, 1.0, "", "full-canvas", 0}; }
};

class LayoutBackend {
  public:
    virtual ~LayoutBackend() = default;
    virtual std::string name() const = 0;
    virtual LayoutSpec propose(const SceneDescription& description, std::uint64_t seed) = 0;
};

// Seeded sampler: square box with side drawn from a size prior
// (default U[0.15, 0.4]) and position uniform subject to containment.
class HeuristicLayoutBackend : public LayoutBackend {
  public:
    HeuristicLayoutBackend(double min_side = 0.15, double max_side = 0.4)
        : min_side_(min_side), max_side_(max_side) {}
    std::string name() const override { return "heuristic"; }
    LayoutSpec propose(const SceneDescription& description, std::uint64_t seed) override;

  private:
    double min_side_;
    double max_side_;
};

// Calls the backend and validates the result; on failure or an invalid box,
// falls back to the given backend if provided, otherwise rethrows.
LayoutSpec propose_layout(const SceneDescription& description, LayoutBackend& backend,
                          std::uint64_t seed, LayoutBackend* fallback = nullptr);

// Place the normalized sketch inside the layout box: uniform scale by
// min(w, h), centered (letterboxed) within the box.
VectorSketch adapt(const VectorSketch& object_sketch, const LayoutSpec& layout);

// The placement transform used by adapt, exposed for verification.
AffineTransform layout_transform(const LayoutSpec& layout);

// Crop the layout box region (pixel bounds rounded outward) out of a
// 1-channel scene raster and resize to target_res² with nearest-neighbor.
RasterImage inverse_adapt(const RasterImage& scene_sketch, const LayoutSpec& layout,
                          int target_res);

// Pixel crop rectangle used by inverse_adapt: [x0, x1) × [y0, y1).
struct CropRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};
CropRect layout_crop_rect(const LayoutSpec& layout, int width, int height);

}  // namespace ssk
