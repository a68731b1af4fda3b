#include "ssk/backends.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "ssk/linalg.hpp"

namespace ssk {

namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

nn::Tensor gray_tensor(const RasterImage& image) {
    return nn::to_tensor(image.channels == 1 ? image : image.to_gray());
}

}  // namespace

// ---------------------------------------------------------------------------
// StubEmbedder

StubEmbedder::StubEmbedder(std::uint64_t seed, int dim) : dim_(dim) {
    if (dim < 8) throw InvalidArgument("stub embedder dim must be >= 8");
    std::mt19937_64 rng(seed);
    projection_ = nn::Tensor::randn({dim, kBuckets + 1}, rng, 1.0 / std::sqrt(kBuckets + 1.0));
}

std::vector<double> StubEmbedder::project_and_normalize(const std::vector<double>& v) const {
    std::vector<double> out(static_cast<std::size_t>(dim_), 0.0);
    nn::gemm(dim_, 1, kBuckets + 1, projection_.data.data(), v.data(), out.data(), false);
    double sq = 0.0;
    for (double x : out) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) throw BackendFailure("stub embedder produced a zero vector");
    for (double& x : out) x /= norm;
    return out;
}

std::vector<double> StubEmbedder::embed_text(const std::string& text) const {
    ++calls_;
    std::vector<double> buckets(static_cast<std::size_t>(kBuckets) + 1, 0.0);
    for (const auto& w : split_words(text)) {
        buckets[static_cast<std::size_t>(fnv1a64(w) % kBuckets)] += 1.0;
    }
    buckets.back() = 1.0;
    return project_and_normalize(buckets);
}

nn::NodePtr StubEmbedder::embed_image_node(const nn::NodePtr& image) const {
    ++calls_;
    auto pooled = nn::reshape(nn::pool_grid(image, kPoolGrid), {kBuckets, 1});
    auto v = nn::concat_rows(pooled, nn::constant(nn::Tensor({1, 1}, 1.0)));
    return nn::l2_normalize_all(nn::matmul(nn::constant(projection_), v));
}

std::vector<double> StubEmbedder::embed_image(const RasterImage& image) const {
    auto node = embed_image_node(nn::constant(gray_tensor(image)));
    return node->value.data;
}

// ---------------------------------------------------------------------------
// StubPatchExtractor

StubPatchExtractor::StubPatchExtractor(std::uint64_t seed, int grid, int dim)
    : grid_(grid), dim_(dim) {
    if (grid < 1) throw InvalidArgument("stub patch extractor grid must be >= 1");
    if (dim < 1) throw InvalidArgument("stub patch extractor dim must be >= 1");
    std::mt19937_64 rng(seed);
    projection_ = nn::Tensor::randn({3, dim}, rng, 1.0 / std::sqrt(3.0));
}

nn::NodePtr StubPatchExtractor::extract_node(const nn::NodePtr& image) const {
    ++calls_;
    return nn::matmul(nn::patch_stats(image, grid_), nn::constant(projection_));
}

nn::Tensor StubPatchExtractor::extract(const RasterImage& image) const {
    auto node = extract_node(nn::constant(gray_tensor(image)));
    return node->value;
}

// ---------------------------------------------------------------------------
// StubImageGenerator

RasterImage StubImageGenerator::generate(const RasterImage& object_sketch,
                                         const std::string& scene_text,
                                         std::uint64_t seed) const {
    ++calls_;
    if (object_sketch.channels != 1) {
        throw DimensionMismatch("stub generator expects a 1-channel sketch raster");
    }
    const int w = object_sketch.width, h = object_sketch.height;
    RasterImage out(w, h, 3);

    std::mt19937_64 rng(hash_combine(fnv1a64(scene_text), seed));
    auto color_in_range = [&](float lo, float hi) {
        std::array<float, 3> c;
        for (auto& v : c) v = lo + (hi - lo) * static_cast<float>(uniform_unit(rng));
        return c;
    };
    const auto sky_top = color_in_range(0.6f, 0.95f);
    const auto sky_low = color_in_range(kMinBackground, 0.9f);
    const auto ground_top = color_in_range(kMinBackground, 0.8f);
    const auto ground_low = color_in_range(kMinBackground, 0.7f);
    const int horizon = static_cast<int>((0.4 + 0.2 * uniform_unit(rng)) * h);

    for (int y = 0; y < h; ++y) {
        std::array<float, 3> row;
        if (y < horizon && horizon > 0) {
            const float t = static_cast<float>(y) / static_cast<float>(horizon);
            for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(c)] =
                sky_top[static_cast<std::size_t>(c)] * (1.0f - t) + sky_low[static_cast<std::size_t>(c)] * t;
        } else {
            const float t = h > horizon ? static_cast<float>(y - horizon) / static_cast<float>(h - horizon) : 0.0f;
            for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(c)] =
                ground_top[static_cast<std::size_t>(c)] * (1.0f - t) + ground_low[static_cast<std::size_t>(c)] * t;
        }
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = row[static_cast<std::size_t>(c)];
    }

    // One texture block per scene word, placed and tinted by the word hash.
    auto words = split_words(scene_text);
    if (words.size() > 8) words.resize(8);
    for (const auto& word : words) {
        const std::uint64_t hash = fnv1a64(word);
        const int bw = std::max(2, w / 8 + static_cast<int>((hash >> 40) % static_cast<std::uint64_t>(std::max(1, w / 8))));
        const int bh = std::max(2, h / 8 + static_cast<int>((hash >> 52) % static_cast<std::uint64_t>(std::max(1, h / 8))));
        const int bx = static_cast<int>((hash >> 8) % static_cast<std::uint64_t>(std::max(1, w - bw)));
        const int by = static_cast<int>((hash >> 24) % static_cast<std::uint64_t>(std::max(1, h - bh)));
        const float shift = ((hash & 1) ? 0.12f : -0.12f);
        const int channel = static_cast<int>((hash >> 4) % 3);
        for (int y = by; y < std::min(h, by + bh); ++y) {
            for (int x = bx; x < std::min(w, bx + bw); ++x) {
                const float checker = ((x + y) & 1) ? shift : shift * 0.5f;
                float v = out.at(x, y, channel) + checker;
                out.at(x, y, channel) = std::clamp(v, kMinBackground, 0.95f);
            }
        }
    }

    // Blend the sketch ink last so it stays darker than any backdrop value.
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float ink = object_sketch.at(x, y, 0);
            if (ink <= 0.0f) continue;
            for (int c = 0; c < 3; ++c) {
                out.at(x, y, c) = (1.0f - ink) * out.at(x, y, c) + ink * kInkLevel;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// PCA

PcaProjector pca_fit(const nn::Tensor& features, int k) {
    if (features.ndim() != 2) throw DimensionMismatch("pca_fit expects an n×d matrix");
    const int n = features.dim(0), d = features.dim(1);
    if (n < 2) throw TooFewSamples("pca_fit needs at least 2 samples");
    if (k < 1 || k > d) throw InvalidArgument("pca_fit: component count out of range");

    PcaProjector p;
    p.dim = d;
    p.k = k;
    const auto cov = linalg::covariance(features.data, n, d, &p.mean);
    const auto eig = linalg::eigh(cov, d);

    p.components.assign(static_cast<std::size_t>(k) * d, 0.0);
    p.variances.assign(static_cast<std::size_t>(k), 0.0);
    for (int c = 0; c < k; ++c) {
        const int col = d - 1 - c;  // eigh sorts ascending
        p.variances[static_cast<std::size_t>(c)] =
            std::max(0.0, eig.values[static_cast<std::size_t>(col)]);
        // Deterministic sign: the largest-magnitude entry is positive.
        int arg = 0;
        double best = 0.0;
        for (int r = 0; r < d; ++r) {
            const double v = std::abs(eig.vectors[static_cast<std::size_t>(r) * d + col]);
            if (v > best) {
                best = v;
                arg = r;
            }
        }
        const double sign = eig.vectors[static_cast<std::size_t>(arg) * d + col] < 0.0 ? -1.0 : 1.0;
        for (int r = 0; r < d; ++r) {
            p.components[static_cast<std::size_t>(c) * d + r] =
                sign * eig.vectors[static_cast<std::size_t>(r) * d + col];
        }
    }

    // Fitted projection ranges for the min/max normalization.
    p.proj_min.assign(static_cast<std::size_t>(k), 0.0);
    p.proj_max.assign(static_cast<std::size_t>(k), 0.0);
    for (int c = 0; c < k; ++c) {
        double lo = 0.0, hi = 0.0;
        for (int i = 0; i < n; ++i) {
            double v = 0.0;
            for (int r = 0; r < d; ++r) {
                v += (features.at(i, r) - p.mean[static_cast<std::size_t>(r)]) *
                     p.components[static_cast<std::size_t>(c) * d + r];
            }
            if (i == 0 || v < lo) lo = v;
            if (i == 0 || v > hi) hi = v;
        }
        p.proj_min[static_cast<std::size_t>(c)] = lo;
        p.proj_max[static_cast<std::size_t>(c)] = hi;
    }
    return p;
}

nn::NodePtr pca_project_node(const PcaProjector& p, const nn::NodePtr& features) {
    if (features->value.ndim() != 2 || features->value.dim(1) != p.dim) {
        throw DimensionMismatch("pca_project: feature dim mismatch");
    }
    nn::Tensor ones({p.dim}, 1.0);
    nn::Tensor neg_mean({p.dim});
    for (int r = 0; r < p.dim; ++r) neg_mean[r] = -p.mean[static_cast<std::size_t>(r)];
    auto centered = nn::colwise_affine(features, ones, neg_mean);
    auto comp = nn::constant(nn::Tensor::from({p.k, p.dim}, p.components));
    auto proj = nn::matmul(centered, comp, false, true);

    nn::Tensor scl({p.k});
    nn::Tensor shift({p.k});
    for (int c = 0; c < p.k; ++c) {
        const double range = p.proj_max[static_cast<std::size_t>(c)] - p.proj_min[static_cast<std::size_t>(c)];
        if (range <= 1e-12) {
            scl[c] = 0.0;
            shift[c] = 0.5;
        } else {
            scl[c] = 1.0 / range;
            shift[c] = -p.proj_min[static_cast<std::size_t>(c)] / range;
        }
    }
    return nn::clamp01(nn::colwise_affine(proj, scl, shift));
}

nn::Tensor pca_project(const PcaProjector& p, const nn::Tensor& features) {
    return pca_project_node(p, nn::constant(features))->value;
}

}  // namespace ssk
