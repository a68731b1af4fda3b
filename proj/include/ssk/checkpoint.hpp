#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ssk/nn.hpp"

// Binary model snapshot: magic + version header, then named sections, each a
// list of named shape-prefixed tensors. Values are stored as little-endian
// f32 regardless of host byte order, so files transfer across machines and
// save(load(f)) reproduces f byte for byte.
namespace ssk {

inline constexpr char kCheckpointMagic[8] = {'S', 'S', 'K', 'C', 'H', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
    std::string name;
    nn::Tensor value;
};

struct CheckpointSection {
    std::string name;
    std::vector<CheckpointTensor> tensors;

    const CheckpointTensor* find(const std::string& tensor_name) const;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::vector<CheckpointSection> sections;

    const CheckpointSection* find(const std::string& section_name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);  // throws MissingFile / InvalidArgument

// Bridge to parameter structs exposing named_tensors().
CheckpointSection section_from_params(
    const std::string& name, const std::vector<std::pair<std::string, nn::NodePtr>>& named);
// Copies matching tensors into the parameter nodes; every parameter must be
// present with the exact shape (DimensionMismatch / InvalidArgument).
void load_params(const CheckpointSection& section,
                 const std::vector<std::pair<std::string, nn::NodePtr>>& named);

// Strings ride along as {length} byte-valued tensors (exact in f32).
CheckpointTensor tensor_from_string(const std::string& name, const std::string& text);
std::string string_from_tensor(const CheckpointTensor& tensor);

}  // namespace ssk
