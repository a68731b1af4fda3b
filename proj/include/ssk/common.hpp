#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ssk {

// Error types thrown across the library. Each names the contract it guards.
struct EmptySketch : std::runtime_error {
    explicit EmptySketch(const std::string& m = "sketch has no moves") : std::runtime_error(m) {}
};
struct InvalidPenFlag : std::runtime_error {
    explicit InvalidPenFlag(const std::string& m) : std::runtime_error(m) {}
};
struct DegenerateExtent : std::runtime_error {
    explicit DegenerateExtent(const std::string& m = "all sketch points coincide") : std::runtime_error(m) {}
};
struct SingularTransform : std::runtime_error {
    explicit SingularTransform(const std::string& m = "affine scale block is singular") : std::runtime_error(m) {}
};
struct ResolutionTooSmall : std::runtime_error {
    explicit ResolutionTooSmall(const std::string& m) : std::runtime_error(m) {}
};
struct ResolutionMismatch : std::runtime_error {
    explicit ResolutionMismatch(const std::string& m) : std::runtime_error(m) {}
};
struct DimensionMismatch : std::runtime_error {
    explicit DimensionMismatch(const std::string& m) : std::runtime_error(m) {}
};
struct UnknownToken : std::runtime_error {
    explicit UnknownToken(const std::string& m) : std::runtime_error(m) {}
};
struct EmptyDataset : std::runtime_error {
    explicit EmptyDataset(const std::string& m = "dataset is empty") : std::runtime_error(m) {}
};
struct MissingFile : std::runtime_error {
    explicit MissingFile(const std::string& m) : std::runtime_error(m) {}
};
struct EmptyCorpus : std::runtime_error {
    explicit EmptyCorpus(const std::string& m) : std::runtime_error(m) {}
};
struct EmptyCaption : std::runtime_error {
    explicit EmptyCaption(const std::string& m = "caption text is empty") : std::runtime_error(m) {}
};
struct BackendFailure : std::runtime_error {
    explicit BackendFailure(const std::string& m) : std::runtime_error(m) {}
};
struct BackendNotDifferentiable : std::runtime_error {
    explicit BackendNotDifferentiable(const std::string& m) : std::runtime_error(m) {}
};
struct DegenerateCrop : std::runtime_error {
    explicit DegenerateCrop(const std::string& m) : std::runtime_error(m) {}
};
struct TooFewSamples : std::runtime_error {
    explicit TooFewSamples(const std::string& m) : std::runtime_error(m) {}
};
struct InvalidDistribution : std::runtime_error {
    explicit InvalidDistribution(const std::string& m) : std::runtime_error(m) {}
};
struct InvalidArgument : std::runtime_error {
    explicit InvalidArgument(const std::string& m) : std::runtime_error(m) {}
};

// FNV-1a, used wherever a stable cross-run hash is needed (cache keys,
// derived seeds, config hashes). std::hash is not stable across builds.
inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    return fnv1a64(&v, sizeof(v), h == 0 ? 0xcbf29ce484222325ull : h);
}

// Per-pair seed stream: hash(master_seed, i, j).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t i, std::uint64_t j) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    h = fnv1a64(&master, sizeof(master), h);
    h = fnv1a64(&i, sizeof(i), h);
    h = fnv1a64(&j, sizeof(j), h);
    return h;
}

// Uniform draw in [0,1) from the top 53 bits of the generator output.
// std::uniform_real_distribution is implementation-defined; this is not.
template <class Rng>
inline double uniform_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

}  // namespace ssk
