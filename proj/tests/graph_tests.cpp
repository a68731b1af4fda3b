#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ssk/graph.hpp"
#include "ssk/sketch.hpp"
#include "test_support.hpp"

using namespace ssk;

namespace {

// Three horizontal strokes, vertically stacked with the given gap between
// them; stroke k spans x in [0.1, 0.4] at y = 0.1 + k * gap.
VectorSketch stacked_strokes(double gap) {
    VectorSketch s;
    double prev_x = 0.0, prev_y = 0.0;
    for (int k = 0; k < 3; ++k) {
        const double y = 0.1 + k * gap;
        s.moves.push_back({0.1 - prev_x, y - prev_y, 0});
        s.moves.push_back({0.3, 0.0, 1});
        prev_x = 0.4;
        prev_y = y;
    }
    return s;
}

}  // namespace

TEST_CASE("build_graph makes one node per stroke with self-loops") {
    VectorSketch s = normalize(test::random_sketch(5));
    SketchGraph g = build_graph(s, 8);
    CHECK(g.node_count() == static_cast<int>(s.stroke_count()));
    CHECK(g.patch_size == 8);
    CHECK(g.patches.dim(1) == 64);
    for (int i = 0; i < g.node_count(); ++i) CHECK(g.adj(i, i) == 1.0);
    // Symmetry.
    for (int i = 0; i < g.node_count(); ++i)
        for (int j = 0; j < g.node_count(); ++j) CHECK(g.adj(i, j) == g.adj(j, i));
}

TEST_CASE("consecutive strokes are always connected") {
    // Distant strokes: only sequential and self edges remain.
    SketchGraph g = build_graph(stacked_strokes(0.4), 8, 0.02);
    REQUIRE(g.node_count() == 3);
    CHECK(g.adj(0, 1) == 1.0);
    CHECK(g.adj(1, 2) == 1.0);
    CHECK(g.adj(0, 2) == 0.0);  // far apart, not sequential
}

TEST_CASE("spatially close strokes gain an edge") {
    // With a tiny gap every pair of inflated boxes overlaps.
    SketchGraph g = build_graph(stacked_strokes(0.01), 8, 0.02);
    REQUIRE(g.node_count() == 3);
    CHECK(g.adj(0, 2) == 1.0);
}

TEST_CASE("spatial radius controls the overlap test") {
    // Strokes 0 and 2 sit 0.1 apart: boxes inflated by 0.02 do not meet,
    // inflated by 0.06 they do.
    SketchGraph near_miss = build_graph(stacked_strokes(0.05), 8, 0.02);
    CHECK(near_miss.adj(0, 2) == 0.0);
    SketchGraph touching = build_graph(stacked_strokes(0.05), 8, 0.06);
    CHECK(touching.adj(0, 2) == 1.0);
}

TEST_CASE("node patches contain ink") {
    SketchGraph g = build_graph(normalize(test::square_and_diagonal()), 16);
    REQUIRE(g.node_count() == 2);
    for (int i = 0; i < g.node_count(); ++i) {
        double sum = 0.0;
        for (int k = 0; k < g.patches.dim(1); ++k) sum += g.patches.at(i, k);
        CHECK(sum > 0.0);
    }
}

TEST_CASE("single-point strokes still produce a patch") {
    VectorSketch s;
    s.moves = {{0.5, 0.5, 1}, {0.2, 0.0, 1}};
    SketchGraph g = build_graph(s, 8);
    CHECK(g.node_count() == 2);
    double sum = 0.0;
    for (int k = 0; k < g.patches.dim(1); ++k) sum += g.patches.at(0, k);
    CHECK(sum > 0.0);
}

TEST_CASE("normalized adjacency matches the explicit D^-1/2 A D^-1/2") {
    // Path graph on 3 nodes with self-loops:
    // degrees (2, 3, 2).
    std::vector<double> a = {1, 1, 0,
                             1, 1, 1,
                             0, 1, 1};
    auto norm = normalized_adjacency(a, 3);
    CHECK(norm[0] == doctest::Approx(1.0 / 2.0));                    // 1/sqrt(2*2)
    CHECK(norm[1] == doctest::Approx(1.0 / std::sqrt(6.0)));         // 1/sqrt(2*3)
    CHECK(norm[4] == doctest::Approx(1.0 / 3.0));                    // 1/sqrt(3*3)
    CHECK(norm[2] == doctest::Approx(0.0));
    // Row i sums to sum_j a_ij / sqrt(d_i d_j); spot = symmetric.
    CHECK(norm[3] == doctest::Approx(norm[1]));
}

TEST_CASE("normalized adjacency of the identity is the identity") {
    auto norm = normalized_adjacency({1, 0, 0, 1}, 2);
    CHECK(norm == std::vector<double>{1, 0, 0, 1});
}

TEST_CASE("gcn_forward shapes and pooling") {
    std::mt19937_64 rng(31);
    GcnParams params = GcnParams::init(8, 12, 2, rng);
    SketchGraph g = build_graph(normalize(test::random_sketch(6)), 8);
    SketchEmbedding emb = gcn_forward(g, params);
    REQUIRE(emb.node_embeddings->value.shape == std::vector<int>{g.node_count(), 12});
    REQUIRE(emb.pooled->value.shape == std::vector<int>{1, 12});
    // Pooled row is the column mean of the node embeddings.
    for (int c = 0; c < 12; ++c) {
        double mean = 0.0;
        for (int r = 0; r < g.node_count(); ++r) mean += emb.node_embeddings->value.at(r, c);
        mean /= g.node_count();
        CHECK(emb.pooled->value.data[static_cast<std::size_t>(c)] == doctest::Approx(mean));
    }
}

TEST_CASE("gcn_forward respects graph symmetry") {
    // Hand-built path graph whose end nodes carry identical patches: the
    // propagation rule must embed them identically, while the middle node
    // (different patch, different degree) differs.
    std::mt19937_64 rng(32);
    GcnParams params = GcnParams::init(2, 10, 2, rng);

    SketchGraph g;
    g.patch_size = 2;
    g.patches = nn::Tensor::from({3, 4}, {1, 0, 0, 1,
                                          0, 1, 1, 0,
                                          1, 0, 0, 1});
    g.adjacency = {1, 1, 0,
                   1, 1, 1,
                   0, 1, 1};
    g.node_order = {0, 1, 2};
    auto emb = gcn_forward(g, params);
    double diff02 = 0.0, diff01 = 0.0;
    for (int c = 0; c < 10; ++c) {
        diff02 += std::abs(emb.node_embeddings->value.at(0, c) - emb.node_embeddings->value.at(2, c));
        diff01 += std::abs(emb.node_embeddings->value.at(0, c) - emb.node_embeddings->value.at(1, c));
    }
    CHECK(diff02 < 1e-12);
    CHECK(diff01 > 1e-9);
}

TEST_CASE("gcn_forward rejects mismatched patch size") {
    std::mt19937_64 rng(33);
    GcnParams params = GcnParams::init(16, 8, 1, rng);
    SketchGraph g = build_graph(normalize(test::random_sketch(7)), 8);
    CHECK_THROWS_AS(gcn_forward(g, params), DimensionMismatch);
}

TEST_CASE("gcn parameter count and naming") {
    std::mt19937_64 rng(34);
    GcnParams params = GcnParams::init(8, 12, 3, rng);
    CHECK(params.parameters().size() == 5);  // embed_w, embed_b, 3 layers
    auto named = params.named_tensors();
    CHECK(named.size() == 5);
    CHECK(named[0].first == "embed_w");
    CHECK(named[4].first == "layer_2");
}

TEST_CASE("gcn pooled norm gradient matches finite differences") {
    std::mt19937_64 rng(35);
    GcnParams params = GcnParams::init(8, 6, 2, rng);
    SketchGraph g = build_graph(normalize(test::random_sketch(8)), 8);
    auto build = [&] {
        auto emb = gcn_forward(g, params);
        return nn::sum_all(nn::mul(emb.pooled, emb.pooled));
    };
    CHECK(test::gradient_max_rel_error(params.parameters(), build) < 1e-4);
}
