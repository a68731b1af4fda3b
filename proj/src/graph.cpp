#include "ssk/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ssk/raster.hpp"

namespace ssk {

namespace {

constexpr double kPatchPadFraction = 0.1;   // margin around each stroke box
constexpr double kMinPatchExtent = 1e-6;    // keeps single-point strokes rasterizable

struct StrokePoints {
    std::vector<AbsolutePoint> points;
    BoundingBox box{0.0, 0.0, 0.0, 0.0};
};

std::vector<StrokePoints> split_strokes(const VectorSketch& sketch) {
    std::vector<StrokePoints> strokes;
    StrokePoints cur;
    bool first = true;
    for (const AbsolutePoint& p : absolute_points(sketch)) {
        if (!cur.points.empty() && p.stroke_index != cur.points.back().stroke_index) {
            strokes.push_back(std::move(cur));
            cur = StrokePoints{};
            first = true;
        }
        if (first) {
            cur.box = BoundingBox{p.x, p.y, p.x, p.y};
            first = false;
        } else {
            cur.box.x_min = std::min(cur.box.x_min, p.x);
            cur.box.y_min = std::min(cur.box.y_min, p.y);
            cur.box.x_max = std::max(cur.box.x_max, p.x);
            cur.box.y_max = std::max(cur.box.y_max, p.y);
        }
        cur.points.push_back(p);
    }
    if (!cur.points.empty()) strokes.push_back(std::move(cur));
    return strokes;
}

// Square canvas box around a stroke: longest side plus a small margin,
// centered on the stroke box.
BoundingBox patch_canvas(const BoundingBox& box) {
    const double side = std::max({box.width(), box.height(), kMinPatchExtent});
    const double padded = side * (1.0 + 2.0 * kPatchPadFraction);
    const double cx = 0.5 * (box.x_min + box.x_max);
    const double cy = 0.5 * (box.y_min + box.y_max);
    return BoundingBox{cx - padded / 2.0, cy - padded / 2.0, cx + padded / 2.0, cy + padded / 2.0};
}

VectorSketch stroke_as_sketch(const StrokePoints& stroke) {
    VectorSketch s;
    s.moves.reserve(stroke.points.size());
    double px = 0.0, py = 0.0;
    for (std::size_t k = 0; k < stroke.points.size(); ++k) {
        const auto& p = stroke.points[k];
        s.moves.push_back(PenMove{p.x - px, p.y - py, 0});
        px = p.x;
        py = p.y;
    }
    s.moves.back().pen_lift = 1;
    return s;
}

}  // namespace

SketchGraph build_graph(const VectorSketch& sketch, int patch_size, double spatial_radius) {
    const auto strokes = split_strokes(sketch);
    const int n = static_cast<int>(strokes.size());
    SketchGraph g;
    g.patch_size = patch_size;
    g.patches = nn::Tensor({n, patch_size * patch_size});
    g.adjacency.assign(static_cast<std::size_t>(n) * n, 0.0);
    g.node_order.resize(static_cast<std::size_t>(n));

    for (int i = 0; i < n; ++i) {
        g.node_order[static_cast<std::size_t>(i)] = i;
        const RasterImage patch =
            rasterize(stroke_as_sketch(strokes[static_cast<std::size_t>(i)]), patch_size, 1,
                      patch_canvas(strokes[static_cast<std::size_t>(i)].box));
        for (int k = 0; k < patch_size * patch_size; ++k) {
            g.patches.at(i, k) = static_cast<double>(patch.pixels[static_cast<std::size_t>(k)]);
        }
    }

    auto set_edge = [&](int i, int j) {
        g.adjacency[static_cast<std::size_t>(i) * n + j] = 1.0;
        g.adjacency[static_cast<std::size_t>(j) * n + i] = 1.0;
    };
    for (int i = 0; i < n; ++i) set_edge(i, i);
    for (int i = 0; i + 1 < n; ++i) set_edge(i, i + 1);
    for (int i = 0; i < n; ++i) {
        const BoundingBox bi = strokes[static_cast<std::size_t>(i)].box.inflated(spatial_radius);
        for (int j = i + 1; j < n; ++j) {
            const BoundingBox bj = strokes[static_cast<std::size_t>(j)].box.inflated(spatial_radius);
            if (bi.intersects(bj)) set_edge(i, j);
        }
    }
    return g;
}

std::vector<double> normalized_adjacency(const std::vector<double>& adjacency, int n) {
    if (static_cast<int>(adjacency.size()) != n * n) {
        throw DimensionMismatch("normalized_adjacency: size mismatch");
    }
    std::vector<double> inv_sqrt_deg(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double deg = 0.0;
        for (int j = 0; j < n; ++j) deg += adjacency[static_cast<std::size_t>(i) * n + j];
        inv_sqrt_deg[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(deg);
    }
    std::vector<double> out(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            out[static_cast<std::size_t>(i) * n + j] =
                adjacency[static_cast<std::size_t>(i) * n + j] * inv_sqrt_deg[static_cast<std::size_t>(i)] *
                inv_sqrt_deg[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

GcnParams GcnParams::init(int patch_size, int dim, int n_layers, std::mt19937_64& rng) {
    GcnParams p;
    p.patch_size = patch_size;
    p.dim = dim;
    const int in = patch_size * patch_size;
    p.embed_w = nn::parameter(nn::Tensor::randn({in, dim}, rng, std::sqrt(2.0 / in)));
    p.embed_b = nn::parameter(nn::Tensor({dim}, 0.0));
    for (int l = 0; l < n_layers; ++l) {
        p.layers.push_back(nn::parameter(nn::Tensor::randn({dim, dim}, rng, std::sqrt(2.0 / dim))));
    }
    return p;
}

std::vector<nn::NodePtr> GcnParams::parameters() const {
    std::vector<nn::NodePtr> out{embed_w, embed_b};
    out.insert(out.end(), layers.begin(), layers.end());
    return out;
}

std::vector<std::pair<std::string, nn::NodePtr>> GcnParams::named_tensors() const {
    std::vector<std::pair<std::string, nn::NodePtr>> out{{"embed_w", embed_w}, {"embed_b", embed_b}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        out.emplace_back("layer_" + std::to_string(l), layers[l]);
    }
    return out;
}

SketchEmbedding gcn_forward(const SketchGraph& graph, const GcnParams& params) {
    const int n = graph.node_count();
    if (n < 1) throw EmptySketch("gcn_forward: graph has no nodes");
    if (graph.patches.dim(1) != params.patch_size * params.patch_size) {
        throw DimensionMismatch("gcn_forward: patch size does not match embedding input");
    }
    const auto ahat_data = normalized_adjacency(graph.adjacency, n);
    const auto ahat = nn::constant(nn::Tensor::from({n, n}, ahat_data));

    auto h = nn::relu(nn::add_bias_rows(nn::matmul(nn::constant(graph.patches), params.embed_w),
                                        params.embed_b));
    for (const auto& w : params.layers) {
        h = nn::relu(nn::matmul(nn::matmul(ahat, h), w));
    }
    auto ones = nn::constant(nn::Tensor({1, n}, 1.0));
    SketchEmbedding emb;
    emb.node_embeddings = h;
    emb.pooled = nn::scale(nn::matmul(ones, h), 1.0 / n);
    return emb;
}

}  // namespace ssk
