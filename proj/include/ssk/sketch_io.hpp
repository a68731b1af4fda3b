#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ssk/sketch.hpp"

namespace ssk {

// Disk forms accepted for one sketch record:
//  - flat:   [[dx, dy, p], ...]              (stroke-3, the native form)
//  - nested: [[[x...], [y...]], ...]         (per-stroke absolute coordinate
//                                             lists, converted on load)
// Serialization always emits the flat form; integral values are written as
// JSON integers so that integer-valued files round-trip textually.
VectorSketch sketch_from_json(const nlohmann::json& record, ParseStats* stats = nullptr);
nlohmann::json sketch_to_json(const VectorSketch& sketch);

// One JSON record in the whole file. source_id is the file stem.
VectorSketch load_sketch(const std::string& path, ParseStats* stats = nullptr);
void save_sketch(const VectorSketch& sketch, const std::string& path);

// One record per line.
std::vector<VectorSketch> load_sketches_jsonl(const std::string& path);

}  // namespace ssk
