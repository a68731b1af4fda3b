#include "ssk/generator.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <utility>

#include "ssk/common.hpp"
#include "ssk/raster.hpp"

namespace ssk {

namespace {

constexpr int kKernel = 3;
constexpr double kAdversarialWeight = 0.1;

nn::NodePtr conv_param(int co, int ci, std::mt19937_64& rng) {
    const double stddev = std::sqrt(2.0 / (static_cast<double>(ci) * kKernel * kKernel));
    return nn::parameter(nn::Tensor::randn({co, ci, kKernel, kKernel}, rng, stddev));
}

nn::NodePtr bias_param(int co) { return nn::parameter(nn::Tensor({co}, 0.0)); }

void require_sketch_node(const nn::NodePtr& node) {
    const auto& s = node->value.shape;
    if (s.size() != 3 || s[0] != 1) {
        throw DimensionMismatch("generated sketch node must have shape {1,H,W}");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters and forward pass

GeneratorParams GeneratorParams::init(int base_channels, int n_res_blocks, std::uint64_t seed) {
    if (base_channels < 1) throw InvalidArgument("generator base_channels must be >= 1");
    if (n_res_blocks < 0) throw InvalidArgument("generator n_res_blocks must be >= 0");
    std::mt19937_64 rng(seed);
    GeneratorParams p;
    p.base_channels = base_channels;
    p.n_res_blocks = n_res_blocks;
    const int c = base_channels;
    p.stem_w = conv_param(c, 3, rng);
    p.stem_b = bias_param(c);
    p.down1_w = conv_param(2 * c, c, rng);
    p.down1_b = bias_param(2 * c);
    p.down2_w = conv_param(4 * c, 2 * c, rng);
    p.down2_b = bias_param(4 * c);
    p.res.reserve(static_cast<std::size_t>(n_res_blocks));
    for (int i = 0; i < n_res_blocks; ++i) {
        ResBlock b;
        b.w1 = conv_param(4 * c, 4 * c, rng);
        b.b1 = bias_param(4 * c);
        b.w2 = conv_param(4 * c, 4 * c, rng);
        b.b2 = bias_param(4 * c);
        p.res.push_back(std::move(b));
    }
    p.up1_w = conv_param(2 * c, 4 * c, rng);
    p.up1_b = bias_param(2 * c);
    p.up2_w = conv_param(c, 2 * c, rng);
    p.up2_b = bias_param(c);
    p.head_w = conv_param(1, c, rng);
    p.head_b = bias_param(1);
    return p;
}

std::vector<nn::NodePtr> GeneratorParams::parameters() const {
    std::vector<nn::NodePtr> out = {stem_w, stem_b, down1_w, down1_b, down2_w, down2_b};
    for (const auto& b : res) {
        out.push_back(b.w1);
        out.push_back(b.b1);
        out.push_back(b.w2);
        out.push_back(b.b2);
    }
    out.insert(out.end(), {up1_w, up1_b, up2_w, up2_b, head_w, head_b});
    return out;
}

std::vector<std::pair<std::string, nn::NodePtr>> GeneratorParams::named_tensors() const {
    std::vector<std::pair<std::string, nn::NodePtr>> out = {
        {"stem.w", stem_w},   {"stem.b", stem_b},   {"down1.w", down1_w}, {"down1.b", down1_b},
        {"down2.w", down2_w}, {"down2.b", down2_b},
    };
    for (std::size_t i = 0; i < res.size(); ++i) {
        const std::string base = "res" + std::to_string(i);
        out.emplace_back(base + ".w1", res[i].w1);
        out.emplace_back(base + ".b1", res[i].b1);
        out.emplace_back(base + ".w2", res[i].w2);
        out.emplace_back(base + ".b2", res[i].b2);
    }
    out.insert(out.end(), {{"up1.w", up1_w},
                           {"up1.b", up1_b},
                           {"up2.w", up2_w},
                           {"up2.b", up2_b},
                           {"head.w", head_w},
                           {"head.b", head_b}});
    return out;
}

nn::NodePtr generate_node(const nn::NodePtr& image, const GeneratorParams& params) {
    const auto& s = image->value.shape;
    if (s.size() != 3 || s[0] != 3) {
        throw DimensionMismatch("generator input must have shape {3,H,W}");
    }
    if (s[1] % 4 != 0 || s[2] % 4 != 0) {
        throw ResolutionMismatch("generator input resolution must be divisible by 4");
    }
    auto h = nn::relu(nn::conv2d(image, params.stem_w, params.stem_b, 1, 1));
    h = nn::relu(nn::conv2d(h, params.down1_w, params.down1_b, 2, 1));
    h = nn::relu(nn::conv2d(h, params.down2_w, params.down2_b, 2, 1));
    for (const auto& b : params.res) {
        auto inner = nn::relu(nn::conv2d(h, b.w1, b.b1, 1, 1));
        inner = nn::conv2d(inner, b.w2, b.b2, 1, 1);
        h = nn::relu(nn::add(h, inner));
    }
    h = nn::relu(nn::conv2d(nn::upsample_nearest2(h), params.up1_w, params.up1_b, 1, 1));
    h = nn::relu(nn::conv2d(nn::upsample_nearest2(h), params.up2_w, params.up2_b, 1, 1));
    return nn::sigmoid(nn::conv2d(h, params.head_w, params.head_b, 1, 1));
}

RasterImage generate(const RasterImage& image, const GeneratorParams& params) {
    if (image.channels != 3) {
        throw DimensionMismatch("generator expects a 3-channel conditioning image");
    }
    auto node = generate_node(nn::constant(nn::to_tensor(image)), params);
    return nn::to_raster(node->value);
}

// ---------------------------------------------------------------------------
// Loss terms (differentiable node variants)

nn::NodePtr loss_sfp_node(const nn::NodePtr& scene_sketch, const std::string& scene_text,
                          const RasterImage& image, const DifferentiableEmbedder& embedder) {
    require_sketch_node(scene_sketch);
    auto e_sketch = embedder.embed_image_node(scene_sketch);
    const int d = embedder.dim();
    auto e_text = nn::constant(nn::Tensor::from({d, 1}, embedder.embed_text(scene_text)));
    auto e_image = nn::constant(nn::Tensor::from({d, 1}, embedder.embed_image(image)));
    auto dt = nn::sub(e_sketch, e_text);
    auto di = nn::sub(e_sketch, e_image);
    return nn::add(nn::sum_all(nn::mul(dt, dt)), nn::sum_all(nn::mul(di, di)));
}

nn::NodePtr loss_socp_node(const nn::NodePtr& scene_sketch, const VectorSketch& object_sketch,
                           const LayoutSpec& layout, int target_res, int stroke_width) {
    require_sketch_node(scene_sketch);
    if (!layout.valid()) throw InvalidArgument("layout box is outside the unit canvas");
    const int h = scene_sketch->value.shape[1];
    const int w = scene_sketch->value.shape[2];
    const CropRect r = layout_crop_rect(layout, w, h);
    auto crop = nn::crop_resize_nearest(scene_sketch, r.x0, r.y0, r.x1, r.y1, target_res);
    RasterImage target = rasterize(normalize(object_sketch), target_res, stroke_width);
    return nn::mean_abs_diff(crop, nn::constant(nn::to_tensor(target)));
}

nn::NodePtr loss_mop_node(const nn::NodePtr& scene_sketch, const RasterImage& image,
                          const DifferentiablePatchExtractor& extractor) {
    require_sketch_node(scene_sketch);
    nn::Tensor image_features = extractor.extract(image);
    PcaProjector projector = pca_fit(image_features);
    nn::Tensor image_proj = pca_project(projector, image_features);
    auto sketch_proj = pca_project_node(projector, extractor.extract_node(scene_sketch));
    return nn::mean_abs_diff(sketch_proj, nn::constant(image_proj));
}

namespace {

void validate_weights(const LossWeights& weights, const LossBackends& backends) {
    if (weights.sfp < 0.0 || weights.socp < 0.0 || weights.mop < 0.0) {
        throw InvalidArgument("loss weights must be non-negative");
    }
    if (!weights.any_positive()) {
        throw InvalidArgument("at least one loss weight must be positive");
    }
    if (weights.sfp > 0.0 && backends.embedder == nullptr) {
        throw InvalidArgument("semantic loss requires an embedder backend");
    }
    if (weights.mop > 0.0 && backends.patches == nullptr) {
        throw InvalidArgument("patch loss requires a patch-feature backend");
    }
    if (backends.socp_target_res < 1) {
        throw InvalidArgument("object-loss target resolution must be >= 1");
    }
}

const DifferentiableEmbedder& differentiable_embedder(const LossBackends& backends) {
    auto* diff = dynamic_cast<const DifferentiableEmbedder*>(backends.embedder);
    if (diff == nullptr) {
        throw BackendNotDifferentiable("embedder '" + backends.embedder->name() +
                                       "' has no differentiable image path");
    }
    return *diff;
}

const DifferentiablePatchExtractor& differentiable_extractor(const LossBackends& backends) {
    auto* diff = dynamic_cast<const DifferentiablePatchExtractor*>(backends.patches);
    if (diff == nullptr) {
        throw BackendNotDifferentiable("patch extractor '" + backends.patches->name() +
                                       "' has no differentiable path");
    }
    return *diff;
}

}  // namespace

nn::NodePtr total_loss_node(const nn::NodePtr& scene_sketch, const VectorSketch& object_sketch,
                            const std::string& scene_text, const RasterImage& image,
                            const LayoutSpec& layout, const LossWeights& weights,
                            const LossBackends& backends) {
    validate_weights(weights, backends);
    nn::NodePtr total;
    auto accumulate = [&total](const nn::NodePtr& term, double weight) {
        auto scaled = nn::scale(term, weight);
        total = total ? nn::add(total, scaled) : scaled;
    };
    if (weights.sfp > 0.0) {
        accumulate(loss_sfp_node(scene_sketch, scene_text, image, differentiable_embedder(backends)),
                   weights.sfp);
    }
    if (weights.socp > 0.0) {
        accumulate(loss_socp_node(scene_sketch, object_sketch, layout, backends.socp_target_res,
                                  backends.socp_stroke_width),
                   weights.socp);
    }
    if (weights.mop > 0.0) {
        accumulate(loss_mop_node(scene_sketch, image, differentiable_extractor(backends)),
                   weights.mop);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Loss terms (plain variants, usable with non-differentiable backends)

double loss_sfp(const RasterImage& scene_sketch, const std::string& scene_text,
                const RasterImage& image, const SemanticEmbedder& embedder) {
    if (scene_sketch.channels != 1) {
        throw DimensionMismatch("semantic loss expects a 1-channel sketch raster");
    }
    const std::vector<double> e_sketch = embedder.embed_image(scene_sketch);
    const std::vector<double> e_text = embedder.embed_text(scene_text);
    const std::vector<double> e_image = embedder.embed_image(image);
    if (e_sketch.size() != e_text.size() || e_sketch.size() != e_image.size()) {
        throw DimensionMismatch("embedder returned vectors of inconsistent dimension");
    }
    double to_text = 0.0;
    for (std::size_t i = 0; i < e_sketch.size(); ++i) {
        const double d = e_sketch[i] - e_text[i];
        to_text += d * d;
    }
    double to_image = 0.0;
    for (std::size_t i = 0; i < e_sketch.size(); ++i) {
        const double d = e_sketch[i] - e_image[i];
        to_image += d * d;
    }
    return to_text + to_image;
}

double loss_socp(const RasterImage& scene_sketch, const VectorSketch& object_sketch,
                 const LayoutSpec& layout, int target_res, int stroke_width) {
    RasterImage crop = inverse_adapt(scene_sketch, layout, target_res);
    RasterImage target = rasterize(normalize(object_sketch), target_res, stroke_width);
    double sum = 0.0;
    for (std::size_t i = 0; i < crop.pixels.size(); ++i) {
        sum += std::abs(static_cast<double>(crop.pixels[i]) - target.pixels[i]);
    }
    return sum / static_cast<double>(crop.pixels.size());
}

double loss_mop(const RasterImage& scene_sketch, const RasterImage& image,
                const PatchFeatureExtractor& extractor) {
    if (scene_sketch.channels != 1) {
        throw DimensionMismatch("patch loss expects a 1-channel sketch raster");
    }
    nn::Tensor image_features = extractor.extract(image);
    PcaProjector projector = pca_fit(image_features);
    nn::Tensor image_proj = pca_project(projector, image_features);
    nn::Tensor sketch_proj = pca_project(projector, extractor.extract(scene_sketch));
    if (!sketch_proj.same_shape(image_proj)) {
        throw DimensionMismatch("patch features of sketch and image disagree in shape");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < sketch_proj.data.size(); ++i) {
        sum += std::abs(sketch_proj.data[i] - image_proj.data[i]);
    }
    return sum / static_cast<double>(sketch_proj.data.size());
}

LossBreakdown total_loss(const RasterImage& scene_sketch, const VectorSketch& object_sketch,
                         const std::string& scene_text, const RasterImage& image,
                         const LayoutSpec& layout, const LossWeights& weights,
                         const LossBackends& backends) {
    validate_weights(weights, backends);
    LossBreakdown out;
    if (weights.sfp > 0.0) {
        out.sfp = loss_sfp(scene_sketch, scene_text, image, *backends.embedder);
        out.total += weights.sfp * out.sfp;
    }
    if (weights.socp > 0.0) {
        out.socp = loss_socp(scene_sketch, object_sketch, layout, backends.socp_target_res,
                             backends.socp_stroke_width);
        out.total += weights.socp * out.socp;
    }
    if (weights.mop > 0.0) {
        out.mop = loss_mop(scene_sketch, image, *backends.patches);
        out.total += weights.mop * out.mop;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Small strided-conv critic for the optional least-squares adversarial term.
struct DiscriminatorParams {
    nn::NodePtr w1, b1;  // 1 → 8, stride 2
    nn::NodePtr w2, b2;  // 8 → 16, stride 2
    nn::NodePtr w3, b3;  // 16 → 1 patch scores

    static DiscriminatorParams init(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        DiscriminatorParams d;
        d.w1 = conv_param(8, 1, rng);
        d.b1 = bias_param(8);
        d.w2 = conv_param(16, 8, rng);
        d.b2 = bias_param(16);
        d.w3 = conv_param(1, 16, rng);
        d.b3 = bias_param(1);
        return d;
    }
    std::vector<nn::NodePtr> parameters() const { return {w1, b1, w2, b2, w3, b3}; }
};

nn::NodePtr discriminate(const nn::NodePtr& sketch, const DiscriminatorParams& d) {
    auto h = nn::relu(nn::conv2d(sketch, d.w1, d.b1, 2, 1));
    h = nn::relu(nn::conv2d(h, d.w2, d.b2, 2, 1));
    return nn::conv2d(h, d.w3, d.b3, 1, 1);
}

nn::NodePtr mean_squared_gap(const nn::NodePtr& scores, double target) {
    if (target == 0.0) return nn::mean_all(nn::mul(scores, scores));
    auto gap = nn::sub(scores, nn::constant(nn::Tensor(scores->value.shape, target)));
    return nn::mean_all(nn::mul(gap, gap));
}

struct PairContext {
    nn::Tensor image;        // {3,H,W}
    RasterImage real_sketch; // adversarial exemplar, square canvas only
};

}  // namespace

std::vector<EpochLoss> train_generator(const std::vector<TrainPair>& pairs,
                                       GeneratorParams& params, const TrainConfig& config,
                                       const LossWeights& weights, const LossBackends& backends) {
    if (pairs.empty()) throw EmptyDataset("generator training needs at least one pair");
    validate_weights(weights, backends);
    if (config.batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (config.lr <= 0.0) throw InvalidArgument("learning rate must be positive");
    if (config.epochs < 0) throw InvalidArgument("epochs must be >= 0");

    const DifferentiableEmbedder* embedder =
        weights.sfp > 0.0 ? &differentiable_embedder(backends) : nullptr;
    const DifferentiablePatchExtractor* extractor =
        weights.mop > 0.0 ? &differentiable_extractor(backends) : nullptr;

    std::vector<PairContext> contexts;
    contexts.reserve(pairs.size());
    for (const auto& pair : pairs) {
        if (pair.image.channels != 3) {
            throw DimensionMismatch("training images must be 3-channel");
        }
        if (pair.image.width % 4 != 0 || pair.image.height % 4 != 0) {
            throw ResolutionMismatch("training image resolution must be divisible by 4");
        }
        PairContext ctx;
        ctx.image = nn::to_tensor(pair.image);
        if (weights.adversarial_enabled) {
            if (pair.image.width != pair.image.height) {
                throw ResolutionMismatch("adversarial training needs square images");
            }
            ctx.real_sketch = rasterize(adapt(pair.object_sketch, pair.layout), pair.image.width,
                                        backends.socp_stroke_width);
        }
        contexts.push_back(std::move(ctx));
    }

    nn::Adam optimizer(params.parameters(), nn::AdamConfig{config.lr, 0.9, 0.999, 1e-8});
    DiscriminatorParams critic;
    std::unique_ptr<nn::Adam> critic_optimizer;
    if (weights.adversarial_enabled) {
        critic = DiscriminatorParams::init(hash_combine(config.seed, fnv1a64("critic")));
        critic_optimizer = std::make_unique<nn::Adam>(critic.parameters(),
                                                      nn::AdamConfig{config.lr, 0.9, 0.999, 1e-8});
    }

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<EpochLoss> log;
    log.reserve(static_cast<std::size_t>(config.epochs));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng() % i]);
        }
        EpochLoss entry;
        entry.epoch = epoch;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(stop - start);

            std::vector<nn::NodePtr> sketches;
            std::vector<std::size_t> batch_ids;
            sketches.reserve(stop - start);
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t id = order[b];
                sketches.push_back(generate_node(nn::constant(contexts[id].image), params));
                batch_ids.push_back(id);
            }

            if (weights.adversarial_enabled) {
                critic_optimizer->zero_grad();
                nn::NodePtr critic_loss;
                for (std::size_t b = 0; b < sketches.size(); ++b) {
                    auto real = nn::constant(nn::to_tensor(contexts[batch_ids[b]].real_sketch));
                    auto fake = nn::constant(sketches[b]->value);
                    auto term = nn::add(mean_squared_gap(discriminate(real, critic), 1.0),
                                        mean_squared_gap(discriminate(fake, critic), 0.0));
                    critic_loss = critic_loss ? nn::add(critic_loss, term) : term;
                }
                nn::backward(nn::scale(critic_loss, inv_batch));
                critic_optimizer->step();
            }

            optimizer.zero_grad();
            nn::NodePtr batch_loss;
            for (std::size_t b = 0; b < sketches.size(); ++b) {
                const TrainPair& pair = pairs[batch_ids[b]];
                nn::NodePtr sample;
                auto accumulate = [&sample, &entry](const nn::NodePtr& term, double weight,
                                                    double EpochLoss::* slot) {
                    entry.*slot += term->value.data[0];
                    auto scaled = nn::scale(term, weight);
                    sample = sample ? nn::add(sample, scaled) : scaled;
                };
                if (weights.sfp > 0.0) {
                    accumulate(loss_sfp_node(sketches[b], pair.scene_text, pair.image, *embedder),
                               weights.sfp, &EpochLoss::sfp);
                }
                if (weights.socp > 0.0) {
                    accumulate(loss_socp_node(sketches[b], pair.object_sketch, pair.layout,
                                              backends.socp_target_res, backends.socp_stroke_width),
                               weights.socp, &EpochLoss::socp);
                }
                if (weights.mop > 0.0) {
                    accumulate(loss_mop_node(sketches[b], pair.image, *extractor), weights.mop,
                               &EpochLoss::mop);
                }
                if (weights.adversarial_enabled) {
                    auto adv = nn::scale(mean_squared_gap(discriminate(sketches[b], critic), 1.0),
                                         kAdversarialWeight);
                    sample = nn::add(sample, adv);
                }
                entry.total += sample->value.data[0];
                batch_loss = batch_loss ? nn::add(batch_loss, sample) : sample;
            }
            nn::backward(nn::scale(batch_loss, inv_batch));
            optimizer.step();
        }
        const double inv_n = 1.0 / static_cast<double>(pairs.size());
        entry.sfp *= inv_n;
        entry.socp *= inv_n;
        entry.mop *= inv_n;
        entry.total *= inv_n;
        log.push_back(entry);
    }
    return log;
}

void write_training_log_csv(const std::string& path, const std::vector<EpochLoss>& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw MissingFile("cannot open training log for writing: " + path);
    out << "epoch,sfp,socp,mop,total\n";
    char line[160];
    for (const auto& e : log) {
        std::snprintf(line, sizeof(line), "%d,%.10g,%.10g,%.10g,%.10g\n", e.epoch, e.sfp, e.socp,
                      e.mop, e.total);
        out << line;
    }
}

}  // namespace ssk
