#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssk/backends.hpp"
#include "ssk/expansion.hpp"
#include "ssk/layout.hpp"

// JSON-over-HTTP adapters for the external-model contracts. Every response
// is cached on disk keyed by a hash of the request inputs, so repeated runs
// are reproducible and cheap. All adapters raise BackendFailure on transport
// or protocol errors; callers decide whether to fall back.
namespace ssk {

std::string base64_encode(const std::uint8_t* data, std::size_t len);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// One file per key hash; concurrent writers of the same key race benignly
// (identical content, last write wins).
class DiskCache {
  public:
    explicit DiskCache(std::string dir);
    std::optional<std::string> get(const std::string& key) const;
    void put(const std::string& key, const std::string& value) const;

  private:
    std::string entry_path(const std::string& key) const;
    std::string dir_;
};

struct HttpEndpoint {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string path = "/";
    int timeout_seconds = 10;
};

// POST {object, scene, prompt, prompt_version} → {text}.
class HttpChatFusionBackend : public FusionBackend {
  public:
    static constexpr int kPromptVersion = 1;
    HttpChatFusionBackend(HttpEndpoint endpoint, const std::string& cache_dir);
    std::string name() const override { return "http-chat"; }
    std::string fuse(const std::string& object_caption, const std::string& scene_caption) override;

  private:
    HttpEndpoint endpoint_;
    DiskCache cache_;
};

// POST {description, seed} → {x, y, w, h} (normalized canvas units).
class HttpLayoutBackend : public LayoutBackend {
  public:
    HttpLayoutBackend(HttpEndpoint endpoint, const std::string& cache_dir);
    std::string name() const override { return "http-layout"; }
    LayoutSpec propose(const SceneDescription& description, std::uint64_t seed) override;

  private:
    HttpEndpoint endpoint_;
    DiskCache cache_;
};

// POST {text} or {image_png_base64} → {vector}; vectors are re-normalized
// on receipt so the unit-norm contract holds regardless of the server.
class HttpEmbedderBackend : public SemanticEmbedder {
  public:
    HttpEmbedderBackend(HttpEndpoint endpoint, int dim, const std::string& cache_dir);
    std::string name() const override { return "http-embedder"; }
    int dim() const override { return dim_; }
    std::vector<double> embed_text(const std::string& text) const override;
    std::vector<double> embed_image(const RasterImage& image) const override;

  private:
    std::vector<double> request_vector(const std::string& body, const std::string& cache_key) const;
    HttpEndpoint endpoint_;
    int dim_;
    DiskCache cache_;
};

// POST {image_png_base64, text, seed} → {image_png_base64} (3-channel).
class HttpImageGeneratorBackend : public ImageGeneratorBackend {
  public:
    HttpImageGeneratorBackend(HttpEndpoint endpoint, const std::string& cache_dir);
    std::string name() const override { return "http-generator"; }
    RasterImage generate(const RasterImage& object_sketch, const std::string& scene_text,
                         std::uint64_t seed) const override;

  private:
    HttpEndpoint endpoint_;
    DiskCache cache_;
};

}  // namespace ssk
