#include "ssk/sketch_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace ssk {

namespace {

bool looks_nested(const nlohmann::json& record) {
    // Nested strokes are arrays of two coordinate arrays; flat moves are
    // arrays of three numbers.
    if (!record.is_array() || record.empty()) return false;
    const auto& first = record.front();
    return first.is_array() && first.size() == 2 && first.front().is_array();
}

std::vector<RawMove> nested_to_raw(const nlohmann::json& record) {
    std::vector<RawMove> raw;
    double px = 0.0, py = 0.0;
    bool first_point = true;
    for (const auto& stroke : record) {
        if (!stroke.is_array() || stroke.size() != 2) {
            throw InvalidArgument("nested stroke record must hold [xs, ys]");
        }
        const auto& xs = stroke[0];
        const auto& ys = stroke[1];
        if (xs.size() != ys.size() || xs.empty()) {
            throw InvalidArgument("nested stroke coordinate lists must be non-empty and equal length");
        }
        for (std::size_t k = 0; k < xs.size(); ++k) {
            const double x = xs[k].get<double>();
            const double y = ys[k].get<double>();
            if (first_point) {
                raw.push_back({x, y, 0.0});
                first_point = false;
            } else {
                raw.push_back({x - px, y - py, 0.0});
            }
            px = x;
            py = y;
        }
        raw.back()[2] = 1.0;
    }
    return raw;
}

std::vector<RawMove> flat_to_raw(const nlohmann::json& record) {
    std::vector<RawMove> raw;
    raw.reserve(record.size());
    for (const auto& mv : record) {
        if (!mv.is_array() || mv.size() != 3) {
            throw InvalidArgument("flat stroke-3 move must hold [dx, dy, p]");
        }
        raw.push_back({mv[0].get<double>(), mv[1].get<double>(), mv[2].get<double>()});
    }
    return raw;
}

nlohmann::json number_to_json(double v) {
    if (v == std::floor(v) && std::abs(v) < 9.0e15) {
        return nlohmann::json(static_cast<std::int64_t>(v));
    }
    return nlohmann::json(v);
}

}  // namespace

VectorSketch sketch_from_json(const nlohmann::json& record, ParseStats* stats) {
    if (!record.is_array()) throw InvalidArgument("sketch record must be a JSON array");
    if (record.empty()) throw EmptySketch();
    const auto raw = looks_nested(record) ? nested_to_raw(record) : flat_to_raw(record);
    return parse_stroke3(raw, stats);
}

nlohmann::json sketch_to_json(const VectorSketch& sketch) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& raw : serialize_stroke3(sketch)) {
        out.push_back({number_to_json(raw[0]), number_to_json(raw[1]),
                       nlohmann::json(static_cast<std::int64_t>(raw[2]))});
    }
    return out;
}

VectorSketch load_sketch(const std::string& path, ParseStats* stats) {
    std::ifstream in(path);
    if (!in) throw MissingFile("cannot open sketch file: " + path);
    nlohmann::json record;
    in >> record;
    VectorSketch sk = sketch_from_json(record, stats);
    sk.source_id = std::filesystem::path(path).stem().string();
    return sk;
}

void save_sketch(const VectorSketch& sketch, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw MissingFile("cannot write sketch file: " + path);
    out << sketch_to_json(sketch) << "\n";
}

std::vector<VectorSketch> load_sketches_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile("cannot open sketch file: " + path);
    std::vector<VectorSketch> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        VectorSketch sk = sketch_from_json(nlohmann::json::parse(line));
        sk.source_id = std::filesystem::path(path).stem().string() + ":" + std::to_string(lineno);
        out.push_back(std::move(sk));
    }
    return out;
}

}  // namespace ssk
