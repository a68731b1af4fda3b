#pragma once

#include <random>
#include <vector>

#include "ssk/nn.hpp"
#include "ssk/sketch.hpp"

// Stroke-level graph construction and a small graph-convolutional encoder.
// Each stroke becomes one node carrying a rasterized patch of itself; edges
// join consecutive strokes and spatially overlapping strokes. The encoder
// embeds patches with a learned linear map, then runs L rounds of
// ReLU(Â·H·W) with Â the symmetrically normalized self-looped adjacency,
// and mean-pools node rows into one sketch embedding.
namespace ssk {

struct SketchGraph {
    int patch_size = 0;
    nn::Tensor patches;              // n × patch_size² flattened node patches
    std::vector<double> adjacency;   // n×n, symmetric, ones on the diagonal
    std::vector<int> node_order;     // original stroke indices

    int node_count() const { return patches.ndim() == 2 ? patches.dim(0) : 0; }
    double adj(int i, int j) const {
        return adjacency[static_cast<std::size_t>(i) * node_count() + j];
    }
};

struct GcnParams {
    int patch_size = 0;
    int dim = 0;
    nn::NodePtr embed_w;               // patch_size² × dim
    nn::NodePtr embed_b;               // dim
    std::vector<nn::NodePtr> layers;   // each dim × dim

    static GcnParams init(int patch_size, int dim, int n_layers, std::mt19937_64& rng);
    std::vector<nn::NodePtr> parameters() const;
    std::vector<std::pair<std::string, nn::NodePtr>> named_tensors() const;
};

struct SketchEmbedding {
    nn::NodePtr node_embeddings;  // n × dim
    nn::NodePtr pooled;           // 1 × dim (column mean of node_embeddings)
};

inline constexpr int kDefaultPatchSize = 16;
inline constexpr double kDefaultSpatialRadius = 0.02;
inline constexpr int kDefaultGcnDim = 128;
inline constexpr int kDefaultGcnLayers = 2;

// Build the stroke graph from a normalized sketch. Each node patch is the
// stroke rasterized inside its own padded square bounding box.
SketchGraph build_graph(const VectorSketch& sketch, int patch_size = kDefaultPatchSize,
                        double spatial_radius = kDefaultSpatialRadius);

// D^{-1/2} (A) D^{-1/2} for a self-looped adjacency; exposed for tests.
std::vector<double> normalized_adjacency(const std::vector<double>& adjacency, int n);

SketchEmbedding gcn_forward(const SketchGraph& graph, const GcnParams& params);

}  // namespace ssk
