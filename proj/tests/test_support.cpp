#include "test_support.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssk/common.hpp"

namespace fs = std::filesystem;

namespace ssk::test {

std::string fixture_path(const std::string& rel) {
    return (fs::path(SSK_TEST_FIXTURE_DIR) / rel).string();
}

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const fs::path base = fs::temp_directory_path();
    const int id = counter.fetch_add(1);
    fs::path p;
    do {
        p = base / ("ssk_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(id) +
                    "_" + std::to_string(std::random_device{}()));
    } while (fs::exists(p));
    fs::create_directories(p);
    path_ = p.string();
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

std::string TempDir::file(const std::string& rel) const {
    return (fs::path(path_) / rel).string();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    out << content;
}

VectorSketch random_sketch(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> n_strokes(2, 5);
    std::uniform_int_distribution<int> n_points(2, 9);
    std::uniform_int_distribution<int> delta(-30, 30);
    VectorSketch s;
    const int strokes = n_strokes(rng);
    for (int k = 0; k < strokes; ++k) {
        const int points = n_points(rng);
        for (int t = 0; t < points; ++t) {
            PenMove m;
            m.dx = delta(rng);
            m.dy = delta(rng);
            m.pen_lift = (t == points - 1) ? 1 : 0;
            s.moves.push_back(m);
        }
    }
    // Guard against the (unlikely) all-zero walk; normalize() needs extent.
    s.moves.front().dx += 1.0;
    return s;
}

VectorSketch square_and_diagonal() {
    VectorSketch s;
    s.moves = {
        {0.0, 0.0, 0},  {1.0, 0.0, 0}, {0.0, 1.0, 0}, {-1.0, 0.0, 0}, {0.0, -1.0, 1},
        {0.0, 0.0, 0},  {1.0, 1.0, 1},
    };
    s.source_id = "square_and_diagonal";
    return s;
}

RasterImage gradient_image(int width, int height, std::uint64_t seed) {
    RasterImage img(width, height, 3);
    const double phase = static_cast<double>(seed % 17) / 17.0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double u = (x + 0.5) / width;
            const double v = (y + 0.5) / height;
            img.at(x, y, 0) = static_cast<float>(0.5 + 0.5 * std::sin(6.0 * (u + phase)));
            img.at(x, y, 1) = static_cast<float>(v);
            img.at(x, y, 2) = static_cast<float>(0.5 + 0.5 * std::cos(5.0 * (u * v + phase)));
        }
    }
    return img;
}

double gradient_max_rel_error(const std::vector<nn::NodePtr>& params,
                              const std::function<nn::NodePtr()>& build, double eps) {
    // Analytic pass.
    for (const auto& p : params) {
        p->ensure_grad();
        std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
    }
    nn::backward(build());

    double worst = 0.0;
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p->value.data.size(); ++i) {
            const double saved = p->value.data[i];
            p->value.data[i] = saved + eps;
            const double up = build()->scalar();
            p->value.data[i] = saved - eps;
            const double down = build()->scalar();
            p->value.data[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = p->grad.data[i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1.0});
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
        }
    }
    return worst;
}

}  // namespace ssk::test
