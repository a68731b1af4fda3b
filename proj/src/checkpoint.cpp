#include "ssk/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "ssk/common.hpp"

namespace ssk {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_string(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

void put_f32(std::string& out, double v) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

struct Reader {
    const std::string& bytes;
    std::size_t pos = 0;

    std::uint32_t u32() {
        if (pos + 4 > bytes.size()) throw InvalidArgument("checkpoint truncated");
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
        pos += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    std::string str() {
        const std::uint32_t len = u32();
        if (pos + len > bytes.size()) throw InvalidArgument("checkpoint truncated");
        std::string s = bytes.substr(pos, len);
        pos += len;
        return s;
    }
    double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
};

}  // namespace

const CheckpointTensor* CheckpointSection::find(const std::string& tensor_name) const {
    for (const auto& t : tensors) {
        if (t.name == tensor_name) return &t;
    }
    return nullptr;
}

const CheckpointSection* Checkpoint::find(const std::string& section_name) const {
    for (const auto& s : sections) {
        if (s.name == section_name) return &s;
    }
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
    std::string out;
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_u32(out, checkpoint.version);
    put_u32(out, static_cast<std::uint32_t>(checkpoint.sections.size()));
    for (const auto& section : checkpoint.sections) {
        put_string(out, section.name);
        put_u32(out, static_cast<std::uint32_t>(section.tensors.size()));
        for (const auto& tensor : section.tensors) {
            put_string(out, tensor.name);
            put_u32(out, static_cast<std::uint32_t>(tensor.value.shape.size()));
            for (int d : tensor.value.shape) put_u32(out, static_cast<std::uint32_t>(d));
            for (double v : tensor.value.data) put_f32(out, v);
        }
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw MissingFile("cannot open checkpoint for writing: " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw MissingFile("short write while saving checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw MissingFile("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    if (bytes.size() < sizeof(kCheckpointMagic) ||
        std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw InvalidArgument("not a checkpoint file (bad magic): " + path);
    }
    Reader r{bytes, sizeof(kCheckpointMagic)};

    Checkpoint out;
    out.version = r.u32();
    if (out.version != kCheckpointVersion) {
        throw InvalidArgument("unsupported checkpoint version " + std::to_string(out.version));
    }
    const std::uint32_t n_sections = r.u32();
    out.sections.reserve(n_sections);
    for (std::uint32_t s = 0; s < n_sections; ++s) {
        CheckpointSection section;
        section.name = r.str();
        const std::uint32_t n_tensors = r.u32();
        section.tensors.reserve(n_tensors);
        for (std::uint32_t t = 0; t < n_tensors; ++t) {
            CheckpointTensor tensor;
            tensor.name = r.str();
            const std::uint32_t ndim = r.u32();
            if (ndim > 8) throw InvalidArgument("checkpoint tensor rank out of range");
            std::vector<int> shape;
            std::size_t numel = 1;
            for (std::uint32_t i = 0; i < ndim; ++i) {
                const std::uint32_t d = r.u32();
                if (d > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
                    throw InvalidArgument("checkpoint tensor dimension out of range");
                }
                shape.push_back(static_cast<int>(d));
                numel *= d;
            }
            if (r.pos + numel * 4 > bytes.size()) {
                throw InvalidArgument("checkpoint truncated");
            }
            tensor.value = nn::Tensor(shape);
            for (std::size_t i = 0; i < numel; ++i) tensor.value.data[i] = r.f32();
            section.tensors.push_back(std::move(tensor));
        }
        out.sections.push_back(std::move(section));
    }
    if (r.pos != bytes.size()) {
        throw InvalidArgument("trailing bytes after checkpoint payload: " + path);
    }
    return out;
}

CheckpointSection section_from_params(
    const std::string& name, const std::vector<std::pair<std::string, nn::NodePtr>>& named) {
    CheckpointSection section;
    section.name = name;
    section.tensors.reserve(named.size());
    for (const auto& [tensor_name, node] : named) {
        section.tensors.push_back({tensor_name, node->value});
    }
    return section;
}

void load_params(const CheckpointSection& section,
                 const std::vector<std::pair<std::string, nn::NodePtr>>& named) {
    for (const auto& [tensor_name, node] : named) {
        const CheckpointTensor* tensor = section.find(tensor_name);
        if (tensor == nullptr) {
            throw InvalidArgument("checkpoint section '" + section.name + "' is missing tensor '" +
                                  tensor_name + "'");
        }
        if (!tensor->value.same_shape(node->value)) {
            throw DimensionMismatch("checkpoint tensor '" + tensor_name +
                                    "' has a different shape than the model parameter");
        }
        node->value.data = tensor->value.data;
    }
}

CheckpointTensor tensor_from_string(const std::string& name, const std::string& text) {
    CheckpointTensor out;
    out.name = name;
    out.value = nn::Tensor({static_cast<int>(text.size())});
    for (std::size_t i = 0; i < text.size(); ++i) {
        out.value.data[i] = static_cast<double>(static_cast<unsigned char>(text[i]));
    }
    return out;
}

std::string string_from_tensor(const CheckpointTensor& tensor) {
    std::string out;
    out.reserve(tensor.value.numel());
    for (double v : tensor.value.data) {
        if (v < 0.0 || v > 255.0) throw InvalidArgument("string tensor byte out of range");
        out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    }
    return out;
}

}  // namespace ssk
