#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ssk/backends.hpp"
#include "ssk/common.hpp"
#include "ssk/nn.hpp"
#include "ssk/raster.hpp"
#include "test_support.hpp"

#ifdef SSK_HAVE_EIGEN
#include <Eigen/Dense>
#endif

using namespace ssk;
namespace test = ssk::test;

namespace {

double norm_of(const std::vector<double>& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    return std::sqrt(sq);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// StubEmbedder

TEST_CASE("text embeddings are unit-norm, deterministic, and seed-dependent") {
    StubEmbedder a(42, 16), b(42, 16), c(43, 16);
    auto va = a.embed_text("a cat in a park");
    auto vb = b.embed_text("a cat in a park");
    auto vc = c.embed_text("a cat in a park");
    CHECK(va.size() == 16);
    CHECK(norm_of(va) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(va == vb);
    CHECK(va != vc);
    CHECK(a.dim() == 16);
}

TEST_CASE("text embedding is a bag of lowercased words") {
    StubEmbedder e(7, 16);
    CHECK(e.embed_text("A Cat!") == e.embed_text("a cat"));
    CHECK(e.embed_text("cat dog") == e.embed_text("dog cat"));
    // Word multiplicity matters: the bucket histogram differs.
    CHECK(e.embed_text("cat cat") != e.embed_text("cat"));
    CHECK(e.embed_text("a cat") != e.embed_text("a dog"));
}

TEST_CASE("image embeddings are unit-norm and channel-averaged") {
    StubEmbedder e(42, 16);
    RasterImage rgb = test::gradient_image(32, 32, 3);
    auto v = e.embed_image(rgb);
    CHECK(v.size() == 16);
    CHECK(norm_of(v) == doctest::Approx(1.0).epsilon(1e-9));
    // A 3-channel image embeds like its per-pixel channel mean.
    CHECK(v == e.embed_image(rgb.to_gray()));
    // Sensitivity: a different image lands elsewhere on the sphere.
    auto w = e.embed_image(test::gradient_image(32, 32, 4));
    CHECK(std::abs(dot(v, w)) < 1.0 - 1e-6);
}

TEST_CASE("embedder counts every embed call") {
    StubEmbedder e(1, 16);
    CHECK(e.call_count() == 0);
    e.embed_text("hello");
    CHECK(e.call_count() == 1);
    e.embed_image(test::gradient_image(16, 16, 0));
    CHECK(e.call_count() == 2);
    auto img = nn::constant(nn::to_tensor(test::gradient_image(16, 16, 0).to_gray()));
    e.embed_image_node(img);
    CHECK(e.call_count() == 3);
}

TEST_CASE("embedder rejects tiny dimensions") {
    CHECK_THROWS_AS(StubEmbedder(1, 7), InvalidArgument);
    CHECK_NOTHROW(StubEmbedder(1, 8));
}

TEST_CASE("image embedding node matches the raster entry point and is differentiable") {
    StubEmbedder e(11, 8);
    RasterImage img = test::gradient_image(16, 16, 2).to_gray();
    auto node = e.embed_image_node(nn::constant(nn::to_tensor(img)));
    CHECK(node->value.dim(0) == 8);
    CHECK(node->value.data == e.embed_image(img));

    auto pixels = nn::parameter(nn::to_tensor(img));
    std::mt19937_64 rng(5);
    auto weights = nn::constant(nn::Tensor::randn({8, 1}, rng, 1.0));
    auto build = [&] { return nn::sum_all(nn::mul(e.embed_image_node(pixels), weights)); };
    CHECK(test::gradient_max_rel_error({pixels}, build) < 1e-4);
}

// ---------------------------------------------------------------------------
// StubPatchExtractor

TEST_CASE("patch features have shape grid^2 x dim and are deterministic") {
    StubPatchExtractor a(9, 4, 6), b(9, 4, 6), c(10, 4, 6);
    RasterImage img = test::gradient_image(32, 32, 1);
    nn::Tensor fa = a.extract(img);
    CHECK(fa.dim(0) == 16);
    CHECK(fa.dim(1) == 6);
    CHECK(fa.data == b.extract(img).data);
    CHECK(fa.data != c.extract(img).data);
    CHECK(a.grid() == 4);
    CHECK(a.dim() == 6);
}

TEST_CASE("a constant image yields identical patch features everywhere") {
    StubPatchExtractor e(3, 4, 5);
    RasterImage flat(32, 32, 1, 0.25f);
    nn::Tensor f = e.extract(flat);
    for (int r = 1; r < 16; ++r)
        for (int c = 0; c < 5; ++c) CHECK(f.at(r, c) == doctest::Approx(f.at(0, c)).epsilon(1e-12));
    // Brightness moves the features: ink changes the patch statistics.
    RasterImage bright(32, 32, 1, 0.9f);
    CHECK(e.extract(bright).data != f.data);
}

TEST_CASE("patch features are a linear map of (mean, variance, edge) statistics") {
    // A constant image has statistics (c, 0, 0) in every patch, so its
    // features are c times the projection's first row: scaling the image
    // scales the features proportionally.
    StubPatchExtractor e(21, 2, 4);
    RasterImage quarter(8, 8, 1, 0.25f);
    RasterImage half(8, 8, 1, 0.5f);
    nn::Tensor fq = e.extract(quarter);
    nn::Tensor fh = e.extract(half);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            CHECK(fh.at(r, c) == doctest::Approx(2.0 * fq.at(r, c)).epsilon(1e-9));

    // The node entry point computes the same values as the raster one.
    RasterImage img = test::gradient_image(8, 8, 6).to_gray();
    auto node = e.extract_node(nn::constant(nn::to_tensor(img)));
    nn::Tensor direct = e.extract(img);
    CHECK(node->value.dim(0) == 4);
    CHECK(node->value.dim(1) == 4);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) CHECK(node->value.at(r, c) == doctest::Approx(direct.at(r, c)));
}

TEST_CASE("patch extractor validates its arguments and counts calls") {
    CHECK_THROWS_AS(StubPatchExtractor(1, 0, 4), InvalidArgument);
    CHECK_THROWS_AS(StubPatchExtractor(1, 4, 0), InvalidArgument);
    StubPatchExtractor e(1, 2, 3);
    CHECK(e.call_count() == 0);
    e.extract(test::gradient_image(8, 8, 0));
    CHECK(e.call_count() == 1);
    e.extract_node(nn::constant(nn::to_tensor(test::gradient_image(8, 8, 0).to_gray())));
    CHECK(e.call_count() == 2);
}

TEST_CASE("patch extraction node is differentiable in the pixels") {
    StubPatchExtractor e(13, 2, 3);
    auto pixels = nn::parameter(nn::to_tensor(test::gradient_image(8, 8, 5).to_gray()));
    std::mt19937_64 rng(17);
    auto weights = nn::constant(nn::Tensor::randn({4, 3}, rng, 1.0));
    auto build = [&] { return nn::sum_all(nn::mul(e.extract_node(pixels), weights)); };
    CHECK(test::gradient_max_rel_error({pixels}, build) < 1e-4);
}

// ---------------------------------------------------------------------------
// StubImageGenerator

TEST_CASE("generated scenes are 3-channel, deterministic, and input-sensitive") {
    StubImageGenerator g;
    RasterImage sketch = rasterize(test::square_and_diagonal(), 48, 2);
    RasterImage a = g.generate(sketch, "a park with trees", 5);
    CHECK(a.width == 48);
    CHECK(a.height == 48);
    CHECK(a.channels == 3);
    CHECK(a.pixels == g.generate(sketch, "a park with trees", 5).pixels);
    CHECK(a.pixels != g.generate(sketch, "a park with trees", 6).pixels);
    CHECK(a.pixels != g.generate(sketch, "a busy street", 5).pixels);
    CHECK(g.call_count() == 4);
}

TEST_CASE("sketch ink renders darker than every background pixel") {
    StubImageGenerator g;
    RasterImage sketch = rasterize(test::square_and_diagonal(), 64, 2);
    RasterImage out = g.generate(sketch, "a quiet kitchen with a wooden table", 3);
    int ink_pixels = 0;
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            if (sketch.at(x, y) > 0.0f) {
                ++ink_pixels;
                for (int c = 0; c < 3; ++c)
                    CHECK(out.at(x, y, c) == StubImageGenerator::kInkLevel);
            } else {
                for (int c = 0; c < 3; ++c) {
                    CHECK(out.at(x, y, c) >= StubImageGenerator::kMinBackground - 1e-6f);
                    CHECK(out.at(x, y, c) <= 0.95f + 1e-6f);
                }
            }
        }
    }
    CHECK(ink_pixels > 0);
}

TEST_CASE("the compositor requires a 1-channel conditioning raster") {
    StubImageGenerator g;
    CHECK_THROWS_AS(g.generate(test::gradient_image(16, 16, 0), "scene", 1), DimensionMismatch);
}

// ---------------------------------------------------------------------------
// PCA

TEST_CASE("pca_fit recovers a known 1-D subspace") {
    // Five points along the direction (0.6, 0.8) around mean (1, 2).
    nn::Tensor data({5, 2});
    const double ts[5] = {-2.0, -1.0, 0.0, 1.0, 2.0};
    for (int i = 0; i < 5; ++i) {
        data.at(i, 0) = 1.0 + ts[i] * 0.6;
        data.at(i, 1) = 2.0 + ts[i] * 0.8;
    }
    PcaProjector p = pca_fit(data, 2);
    CHECK(p.mean[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.mean[1] == doctest::Approx(2.0).epsilon(1e-12));
    // Leading component is the line direction, sign-fixed so the
    // largest-magnitude entry is positive.
    CHECK(p.components[0] == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(p.components[1] == doctest::Approx(0.8).epsilon(1e-9));
    // Unbiased variance of t over {-2..2} is 2.5; nothing off-line.
    CHECK(p.variances[0] == doctest::Approx(2.5).epsilon(1e-9));
    CHECK(p.variances[1] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(p.proj_min[0] == doctest::Approx(-2.0).epsilon(1e-9));
    CHECK(p.proj_max[0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("fitted components are orthonormal rows") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        nn::Tensor data = nn::Tensor::randn({20, 5}, rng, 1.0);
        PcaProjector p = pca_fit(data, 3);
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                double s = 0.0;
                for (int r = 0; r < 5; ++r)
                    s += p.components[static_cast<std::size_t>(a) * 5 + r] *
                         p.components[static_cast<std::size_t>(b) * 5 + r];
                CHECK(std::abs(s - (a == b ? 1.0 : 0.0)) < 1e-9);
            }
        }
        // Explained variance is reported largest-first.
        CHECK(p.variances[0] >= p.variances[1]);
        CHECK(p.variances[1] >= p.variances[2]);
    }
}

#ifdef SSK_HAVE_EIGEN
TEST_CASE("pca_fit matches an independent eigendecomposition of the covariance") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 20, d = 5;
        nn::Tensor data = nn::Tensor::randn({n, d}, rng, 1.0);
        PcaProjector p = pca_fit(data, 3);

        Eigen::MatrixXd m(n, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) m(i, j) = data.at(i, j);
        Eigen::RowVectorXd mean = m.colwise().mean();
        Eigen::MatrixXd centered = m.rowwise() - mean;
        Eigen::MatrixXd cov = centered.transpose() * centered / (n - 1);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
        REQUIRE(solver.info() == Eigen::Success);

        for (int c = 0; c < 3; ++c) {
            const int col = d - 1 - c;  // Eigen sorts ascending too
            CHECK(p.variances[static_cast<std::size_t>(c)] ==
                  doctest::Approx(solver.eigenvalues()(col)).epsilon(1e-9));
            double dot_cv = 0.0;
            for (int r = 0; r < d; ++r)
                dot_cv += p.components[static_cast<std::size_t>(c) * d + r] *
                          solver.eigenvectors()(r, col);
            CHECK(std::abs(std::abs(dot_cv) - 1.0) < 1e-9);
        }
    }
}
#endif

TEST_CASE("pca_project normalizes fitted data into [0,1] with the extremes hit") {
    std::mt19937_64 rng(55);
    nn::Tensor data = nn::Tensor::randn({12, 4}, rng, 2.0);
    PcaProjector p = pca_fit(data, 3);
    nn::Tensor proj = pca_project(p, data);
    CHECK(proj.dim(0) == 12);
    CHECK(proj.dim(1) == 3);
    for (int c = 0; c < 3; ++c) {
        double lo = 1.0, hi = 0.0;
        for (int i = 0; i < 12; ++i) {
            CHECK(proj.at(i, c) >= -1e-12);
            CHECK(proj.at(i, c) <= 1.0 + 1e-12);
            lo = std::min(lo, proj.at(i, c));
            hi = std::max(hi, proj.at(i, c));
        }
        CHECK(lo == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(hi == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("pca_project matches a by-hand centered projection") {
    std::mt19937_64 rng(61);
    nn::Tensor data = nn::Tensor::randn({10, 4}, rng, 1.5);
    PcaProjector p = pca_fit(data, 2);
    nn::Tensor fresh = nn::Tensor::randn({6, 4}, rng, 1.5);
    nn::Tensor proj = pca_project(p, fresh);
    for (int i = 0; i < 6; ++i) {
        for (int c = 0; c < 2; ++c) {
            double v = 0.0;
            for (int r = 0; r < 4; ++r)
                v += (fresh.at(i, r) - p.mean[static_cast<std::size_t>(r)]) *
                     p.components[static_cast<std::size_t>(c) * 4 + r];
            const double range = p.proj_max[static_cast<std::size_t>(c)] -
                                 p.proj_min[static_cast<std::size_t>(c)];
            double expect = (v - p.proj_min[static_cast<std::size_t>(c)]) / range;
            expect = std::clamp(expect, 0.0, 1.0);
            CHECK(proj.at(i, c) == doctest::Approx(expect).epsilon(1e-9));
        }
    }
}

TEST_CASE("a degenerate fitted range projects to the constant 0.5") {
    nn::Tensor data({4, 2});
    for (int i = 0; i < 4; ++i) {
        data.at(i, 0) = static_cast<double>(i);
        data.at(i, 1) = 3.0;  // constant: zero variance on the second axis
    }
    PcaProjector p = pca_fit(data, 2);
    nn::Tensor proj = pca_project(p, data);
    for (int i = 0; i < 4; ++i) CHECK(proj.at(i, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pca argument validation") {
    nn::Tensor one({1, 3}, 0.0);
    CHECK_THROWS_AS(pca_fit(one, 1), TooFewSamples);
    nn::Tensor flat({6}, 0.0);
    CHECK_THROWS_AS(pca_fit(flat, 1), DimensionMismatch);
    nn::Tensor ok({4, 3}, 0.0);
    CHECK_THROWS_AS(pca_fit(ok, 0), InvalidArgument);
    CHECK_THROWS_AS(pca_fit(ok, 4), InvalidArgument);

    std::mt19937_64 rng(2);
    nn::Tensor data = nn::Tensor::randn({5, 3}, rng, 1.0);
    PcaProjector p = pca_fit(data, 2);
    nn::Tensor wrong({5, 4}, 0.0);
    CHECK_THROWS_AS(pca_project(p, wrong), DimensionMismatch);
}

TEST_CASE("pca projection through the graph is differentiable") {
    std::mt19937_64 rng(8);
    nn::Tensor data = nn::Tensor::randn({8, 3}, rng, 1.0);
    PcaProjector p = pca_fit(data, 2);
    // Probe strictly inside the fitted range so clamp01 is differentiable.
    auto x = nn::parameter(nn::Tensor::from({1, 3}, {data.at(0, 0) * 0.5 + data.at(1, 0) * 0.5,
                                                     data.at(0, 1) * 0.5 + data.at(1, 1) * 0.5,
                                                     data.at(0, 2) * 0.5 + data.at(1, 2) * 0.5}));
    auto build = [&] { return nn::sum_all(pca_project_node(p, x)); };
    CHECK(test::gradient_max_rel_error({x}, build) < 1e-4);
}
