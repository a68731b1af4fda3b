#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ssk/backends.hpp"
#include "ssk/layout.hpp"
#include "ssk/sketch.hpp"

// Image-to-sketch generator and its multi-term training objective:
//   - semantic term: the generated sketch embeds close to both the scene
//     text and the source image (squared L2 on unit embeddings);
//   - object term: cropping the layout box back out of the generated sketch
//     reproduces the normalized object raster (mean absolute pixel error);
//   - patch term: PCA-projected patch features of sketch and image agree
//     (mean absolute error; the projector is fitted on the image features
//     only, so it is constant with respect to generator parameters).
namespace ssk {

inline constexpr int kDefaultBaseChannels = 32;
inline constexpr int kDefaultResBlocks = 4;
inline constexpr int kDefaultStrokeWidth = 2;

struct GeneratorParams {
    int base_channels = kDefaultBaseChannels;
    int n_res_blocks = kDefaultResBlocks;

    nn::NodePtr stem_w, stem_b;    // 3 → c
    nn::NodePtr down1_w, down1_b;  // c → 2c, stride 2
    nn::NodePtr down2_w, down2_b;  // 2c → 4c, stride 2
    struct ResBlock {
        nn::NodePtr w1, b1, w2, b2;  // both 4c → 4c
    };
    std::vector<ResBlock> res;
    nn::NodePtr up1_w, up1_b;  // 4c → 2c after ×2 upsample
    nn::NodePtr up2_w, up2_b;  // 2c → c after ×2 upsample
    nn::NodePtr head_w, head_b;  // c → 1, sigmoid squash

    static GeneratorParams init(int base_channels, int n_res_blocks, std::uint64_t seed);
    std::vector<nn::NodePtr> parameters() const;
    std::vector<std::pair<std::string, nn::NodePtr>> named_tensors() const;
};

// Forward pass; input {3,H,W} with H, W divisible by 4, output {1,H,W} in [0,1].
nn::NodePtr generate_node(const nn::NodePtr& image, const GeneratorParams& params);
RasterImage generate(const RasterImage& image, const GeneratorParams& params);

struct LossWeights {
    double sfp = 1.0;
    double socp = 1.0;
    double mop = 1.0;
    bool adversarial_enabled = false;  // optional extra term, off by default

    bool any_positive() const { return sfp > 0.0 || socp > 0.0 || mop > 0.0; }
};

// Paper-pinned optimizer defaults: Adam, batch 32, learning rate 1e-4,
// 50 epochs.
struct TrainConfig {
    int batch_size = 32;
    double lr = 1.0e-4;
    int epochs = 50;
    std::uint64_t seed = 0;
};

struct LossBreakdown {
    double sfp = 0.0;
    double socp = 0.0;
    double mop = 0.0;
    double total = 0.0;
};

// Backends plus the comparison geometry shared by the loss terms. A null
// backend is only an error if the corresponding weight is positive.
struct LossBackends {
    const SemanticEmbedder* embedder = nullptr;
    const PatchFeatureExtractor* patches = nullptr;
    int socp_target_res = 64;
    int socp_stroke_width = kDefaultStrokeWidth;
};

double loss_sfp(const RasterImage& scene_sketch, const std::string& scene_text,
                const RasterImage& image, const SemanticEmbedder& embedder);
double loss_socp(const RasterImage& scene_sketch, const VectorSketch& object_sketch,
                 const LayoutSpec& layout, int target_res,
                 int stroke_width = kDefaultStrokeWidth);
double loss_mop(const RasterImage& scene_sketch, const RasterImage& image,
                const PatchFeatureExtractor& extractor);

LossBreakdown total_loss(const RasterImage& scene_sketch, const VectorSketch& object_sketch,
                         const std::string& scene_text, const RasterImage& image,
                         const LayoutSpec& layout, const LossWeights& weights,
                         const LossBackends& backends);

// Differentiable variants over a {1,H,W} generated-sketch node.
nn::NodePtr loss_sfp_node(const nn::NodePtr& scene_sketch, const std::string& scene_text,
                          const RasterImage& image, const DifferentiableEmbedder& embedder);
nn::NodePtr loss_socp_node(const nn::NodePtr& scene_sketch, const VectorSketch& object_sketch,
                           const LayoutSpec& layout, int target_res,
                           int stroke_width = kDefaultStrokeWidth);
nn::NodePtr loss_mop_node(const nn::NodePtr& scene_sketch, const RasterImage& image,
                          const DifferentiablePatchExtractor& extractor);
nn::NodePtr total_loss_node(const nn::NodePtr& scene_sketch, const VectorSketch& object_sketch,
                            const std::string& scene_text, const RasterImage& image,
                            const LayoutSpec& layout, const LossWeights& weights,
                            const LossBackends& backends);

struct TrainPair {
    VectorSketch object_sketch;
    std::string scene_text;
    RasterImage image;  // 3-channel, resolution divisible by 4
    LayoutSpec layout;
};

struct EpochLoss {
    int epoch = 0;
    double sfp = 0.0;   // per-term means over the epoch (unweighted)
    double socp = 0.0;
    double mop = 0.0;
    double total = 0.0;  // weighted objective actually optimized
};

// Requires the backends referenced by positive weights to implement the
// differentiable interfaces (throws BackendNotDifferentiable otherwise).
std::vector<EpochLoss> train_generator(const std::vector<TrainPair>& pairs,
                                       GeneratorParams& params, const TrainConfig& config,
                                       const LossWeights& weights, const LossBackends& backends);

void write_training_log_csv(const std::string& path, const std::vector<EpochLoss>& log);

}  // namespace ssk
