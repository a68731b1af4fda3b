#include "ssk/layout.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ssk {

LayoutSpec HeuristicLayoutBackend::propose(const SceneDescription& description,
                                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    LayoutSpec spec;
    spec.w = spec.h = min_side_ + (max_side_ - min_side_) * uniform_unit(rng);
    spec.x = (1.0 - spec.w) * uniform_unit(rng);
    spec.y = (1.0 - spec.h) * uniform_unit(rng);
    spec.object_phrase = object_phrase(description.text);
    spec.backend = name();
    spec.seed = seed;
    return spec;
}

LayoutSpec propose_layout(const SceneDescription& description, LayoutBackend& backend,
                          std::uint64_t seed, LayoutBackend* fallback) {
    try {
        LayoutSpec spec = backend.propose(description, seed);
        if (!spec.valid()) {
            throw BackendFailure("layout backend '" + backend.name() +
                                 "' returned an out-of-range box");
        }
        return spec;
    } catch (const std::runtime_error&) {
        if (!fallback) throw;
        LayoutSpec spec = fallback->propose(description, seed);
        if (!spec.valid()) throw;
        return spec;
    }
}

AffineTransform layout_transform(const LayoutSpec& layout) {
    const double sigma = std::min(layout.w, layout.h);
    const double tx = layout.x + (layout.w - sigma) / 2.0;
    const double ty = layout.y + (layout.h - sigma) / 2.0;
    return AffineTransform::translation(tx, ty).compose(AffineTransform::scale(sigma, sigma));
}

VectorSketch adapt(const VectorSketch& object_sketch, const LayoutSpec& layout) {
    if (!layout.valid()) throw InvalidArgument("adapt: layout box violates its invariants");
    return apply_affine(normalize(object_sketch), layout_transform(layout));
}

CropRect layout_crop_rect(const LayoutSpec& layout, int width, int height) {
    CropRect r;
    r.x0 = std::max(0, static_cast<int>(std::floor(layout.x * width)));
    r.y0 = std::max(0, static_cast<int>(std::floor(layout.y * height)));
    r.x1 = std::min(width, static_cast<int>(std::ceil((layout.x + layout.w) * width)));
    r.y1 = std::min(height, static_cast<int>(std::ceil((layout.y + layout.h) * height)));
    return r;
}

RasterImage inverse_adapt(const RasterImage& scene_sketch, const LayoutSpec& layout,
                          int target_res) {
    if (scene_sketch.channels != 1) {
        throw DimensionMismatch("inverse_adapt expects a 1-channel scene raster");
    }
    if (target_res < 1) throw ResolutionTooSmall("inverse_adapt: target resolution < 1");
    const CropRect r = layout_crop_rect(layout, scene_sketch.width, scene_sketch.height);
    const int cw = r.x1 - r.x0;
    const int ch = r.y1 - r.y0;
    if (cw < 1 || ch < 1) throw DegenerateCrop("layout box maps to less than one pixel");

    RasterImage out(target_res, target_res, 1);
    // Nearest-neighbor: sample the source pixel under each target pixel center.
    for (int v = 0; v < target_res; ++v) {
        const int sy = r.y0 + std::min(static_cast<int>((static_cast<std::int64_t>(v) * 2 + 1) * ch /
                                                        (2 * static_cast<std::int64_t>(target_res))),
                                       ch - 1);
        for (int u = 0; u < target_res; ++u) {
            const int sx = r.x0 + std::min(static_cast<int>((static_cast<std::int64_t>(u) * 2 + 1) * cw /
                                                            (2 * static_cast<std::int64_t>(target_res))),
                                           cw - 1);
            out.at(u, v, 0) = scene_sketch.at(sx, sy, 0);
        }
    }
    return out;
}

}  // namespace ssk
