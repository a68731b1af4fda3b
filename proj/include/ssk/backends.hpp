#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ssk/nn.hpp"
#include "ssk/raster.hpp"

// Contracts for the external pretrained capabilities (semantic embedding,
// patch features, conditioned image generation) plus deterministic stubs
// that satisfy them offline. Stubs are statistics + seeded random
// projections; the image paths are additionally differentiable through the
// autodiff graph so the training losses get gradients.
namespace ssk {

class SemanticEmbedder {
  public:
    virtual ~SemanticEmbedder() = default;
    virtual std::string name() const = 0;
    virtual int dim() const = 0;
    virtual std::vector<double> embed_text(const std::string& text) const = 0;      // unit norm
    virtual std::vector<double> embed_image(const RasterImage& image) const = 0;    // unit norm
};

// Extension implemented by backends whose image path is differentiable in
// the input pixels; input node shape {1,H,W}, output {d,1} unit vector.
class DifferentiableEmbedder : public SemanticEmbedder {
  public:
    virtual nn::NodePtr embed_image_node(const nn::NodePtr& image) const = 0;
};

class PatchFeatureExtractor {
  public:
    virtual ~PatchFeatureExtractor() = default;
    virtual std::string name() const = 0;
    virtual int grid() const = 0;
    virtual int dim() const = 0;
    // Row r = feature of patch (r / grid, r % grid); shape {grid², dim}.
    virtual nn::Tensor extract(const RasterImage& image) const = 0;
};

class DifferentiablePatchExtractor : public PatchFeatureExtractor {
  public:
    virtual nn::NodePtr extract_node(const nn::NodePtr& image) const = 0;  // {1,H,W} → {g²,d}
};

class ImageGeneratorBackend {
  public:
    virtual ~ImageGeneratorBackend() = default;
    virtual std::string name() const = 0;
    // Render a 3-channel image of the same resolution as the conditioning
    // sketch raster; deterministic given (inputs, seed).
    virtual RasterImage generate(const RasterImage& object_sketch, const std::string& scene_text,
                                 std::uint64_t seed) const = 0;
};

// ---------------------------------------------------------------------------
// Deterministic stubs

class StubEmbedder : public DifferentiableEmbedder {
  public:
    StubEmbedder(std::uint64_t seed, int dim);
    std::string name() const override { return "stub-embedder"; }
    int dim() const override { return dim_; }
    std::vector<double> embed_text(const std::string& text) const override;
    std::vector<double> embed_image(const RasterImage& image) const override;
    nn::NodePtr embed_image_node(const nn::NodePtr& image) const override;
    long call_count() const { return calls_.load(); }

    static constexpr int kBuckets = 256;  // hashed words / pooled pixels
    static constexpr int kPoolGrid = 16;

  private:
    std::vector<double> project_and_normalize(const std::vector<double>& v) const;
    int dim_;
    nn::Tensor projection_;  // dim × (kBuckets + 1), the +1 row sees a constant 1
    mutable std::atomic<long> calls_{0};
};

class StubPatchExtractor : public DifferentiablePatchExtractor {
  public:
    StubPatchExtractor(std::uint64_t seed, int grid, int dim);
    std::string name() const override { return "stub-patches"; }
    int grid() const override { return grid_; }
    int dim() const override { return dim_; }
    nn::Tensor extract(const RasterImage& image) const override;
    nn::NodePtr extract_node(const nn::NodePtr& image) const override;
    long call_count() const { return calls_.load(); }

  private:
    int grid_;
    int dim_;
    nn::Tensor projection_;  // 3 × dim (mean, variance, gradient stats in)
    mutable std::atomic<long> calls_{0};
};

// Procedural compositor: horizon gradient + per-scene-word texture blocks,
// with the sketch ink blended in as dark gray. Background luminance is kept
// above the ink level so ink pixels are always darker than their backdrop.
class StubImageGenerator : public ImageGeneratorBackend {
  public:
    std::string name() const override { return "stub-compositor"; }
    RasterImage generate(const RasterImage& object_sketch, const std::string& scene_text,
                         std::uint64_t seed) const override;
    long call_count() const { return calls_.load(); }

    static constexpr float kInkLevel = 0.2f;
    static constexpr float kMinBackground = 0.35f;

  private:
    mutable std::atomic<long> calls_{0};
};

// ---------------------------------------------------------------------------
// PCA projector (first three principal components, min/max normalized)

struct PcaProjector {
    int dim = 0;
    int k = 0;
    std::vector<double> mean;        // dim
    std::vector<double> components;  // k×dim row-major, orthonormal rows
    std::vector<double> variances;   // k, non-increasing (eigenvalues)
    std::vector<double> proj_min;    // k, from the fitting data
    std::vector<double> proj_max;    // k
};

PcaProjector pca_fit(const nn::Tensor& features, int k = 3);  // features {n,d}, n ≥ 2

// (X − mean)·componentsᵀ then per-component min/max normalization into
// [0,1]; a degenerate fitted range maps to the constant 0.5.
nn::Tensor pca_project(const PcaProjector& p, const nn::Tensor& features);
nn::NodePtr pca_project_node(const PcaProjector& p, const nn::NodePtr& features);

}  // namespace ssk
