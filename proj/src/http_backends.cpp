#include "ssk/http_backends.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "httplib.h"
#include "json.hpp"

#include "ssk/png_io.hpp"

namespace ssk {

namespace {

constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

nlohmann::json post_json(const HttpEndpoint& ep, const nlohmann::json& request) {
    httplib::Client client(ep.host, ep.port);
    client.set_connection_timeout(ep.timeout_seconds, 0);
    client.set_read_timeout(ep.timeout_seconds, 0);
    auto res = client.Post(ep.path, request.dump(), "application/json");
    if (!res) {
        throw BackendFailure("http backend unreachable: " + ep.host + ":" +
                             std::to_string(ep.port) + ep.path);
    }
    if (res->status != 200) {
        throw BackendFailure("http backend returned status " + std::to_string(res->status));
    }
    auto body = nlohmann::json::parse(res->body, nullptr, /*allow_exceptions=*/false);
    if (body.is_discarded()) throw BackendFailure("http backend returned invalid JSON");
    return body;
}

}  // namespace

std::string base64_encode(const std::uint8_t* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        const std::uint32_t b0 = data[i];
        const std::uint32_t b1 = i + 1 < len ? data[i + 1] : 0;
        const std::uint32_t b2 = i + 2 < len ? data[i + 2] : 0;
        const std::uint32_t triple = (b0 << 16) | (b1 << 8) | b2;
        out.push_back(kB64Alphabet[(triple >> 18) & 0x3f]);
        out.push_back(kB64Alphabet[(triple >> 12) & 0x3f]);
        out.push_back(i + 1 < len ? kB64Alphabet[(triple >> 6) & 0x3f] : '=');
        out.push_back(i + 2 < len ? kB64Alphabet[triple & 0x3f] : '=');
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        const int v = b64_value(c);
        if (v < 0) throw InvalidArgument("base64: invalid character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// DiskCache

DiskCache::DiskCache(std::string dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::string DiskCache::entry_path(const std::string& key) const {
    return dir_ + "/" + hex64(fnv1a64(key)) + ".txt";
}

std::optional<std::string> DiskCache::get(const std::string& key) const {
    std::ifstream in(entry_path(key), std::ios::binary);
    if (!in) return std::nullopt;
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void DiskCache::put(const std::string& key, const std::string& value) const {
    const std::string path = entry_path(key);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << value;
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Chat fusion

HttpChatFusionBackend::HttpChatFusionBackend(HttpEndpoint endpoint, const std::string& cache_dir)
    : endpoint_(std::move(endpoint)), cache_(cache_dir) {}

std::string HttpChatFusionBackend::fuse(const std::string& object_caption,
                                        const std::string& scene_caption) {
    const std::string key = "chat\x1f" + object_caption + "\x1f" + scene_caption + "\x1f" +
                            std::to_string(kPromptVersion);
    if (auto hit = cache_.get(key)) return *hit;

    nlohmann::json request{
        {"prompt", "Merge object description \"" + object_caption + "\" into scene description \"" +
                       scene_caption + "\"; output one sentence."},
        {"object", object_caption},
        {"scene", scene_caption},
        {"prompt_version", kPromptVersion},
    };
    const auto body = post_json(endpoint_, request);
    if (!body.contains("text") || !body["text"].is_string()) {
        throw BackendFailure("chat backend response missing 'text'");
    }
    const std::string text = normalize_caption_text(body["text"].get<std::string>());
    if (text.empty()) throw BackendFailure("chat backend returned empty text");
    cache_.put(key, text);
    return text;
}

// ---------------------------------------------------------------------------
// Layout

HttpLayoutBackend::HttpLayoutBackend(HttpEndpoint endpoint, const std::string& cache_dir)
    : endpoint_(std::move(endpoint)), cache_(cache_dir) {}

LayoutSpec HttpLayoutBackend::propose(const SceneDescription& description, std::uint64_t seed) {
    const std::string key = "layout\x1f" + description.text + "\x1f" + std::to_string(seed);
    nlohmann::json body;
    if (auto hit = cache_.get(key)) {
        body = nlohmann::json::parse(*hit, nullptr, /*allow_exceptions=*/false);
    } else {
        body = post_json(endpoint_, nlohmann::json{{"description", description.text},
                                                   {"seed", seed}});
        cache_.put(key, body.dump());
    }
    for (const char* field : {"x", "y", "w", "h"}) {
        if (!body.contains(field) || !body[field].is_number()) {
            throw BackendFailure(std::string("layout backend response missing '") + field + "'");
        }
    }
    LayoutSpec spec;
    spec.x = body["x"].get<double>();
    spec.y = body["y"].get<double>();
    spec.w = body["w"].get<double>();
    spec.h = body["h"].get<double>();
    spec.object_phrase = object_phrase(description.text);
    spec.backend = name();
    spec.seed = seed;
    return spec;
}

// ---------------------------------------------------------------------------
// Embedder

HttpEmbedderBackend::HttpEmbedderBackend(HttpEndpoint endpoint, int dim,
                                         const std::string& cache_dir)
    : endpoint_(std::move(endpoint)), dim_(dim), cache_(cache_dir) {}

std::vector<double> HttpEmbedderBackend::request_vector(const std::string& request_body,
                                                        const std::string& cache_key) const {
    nlohmann::json body;
    if (auto hit = cache_.get(cache_key)) {
        body = nlohmann::json::parse(*hit, nullptr, /*allow_exceptions=*/false);
    } else {
        body = post_json(endpoint_, nlohmann::json::parse(request_body));
        cache_.put(cache_key, body.dump());
    }
    if (!body.contains("vector") || !body["vector"].is_array() ||
        static_cast<int>(body["vector"].size()) != dim_) {
        throw BackendFailure("embedder backend returned a malformed vector");
    }
    std::vector<double> v = body["vector"].get<std::vector<double>>();
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) throw BackendFailure("embedder backend returned a zero vector");
    for (double& x : v) x /= norm;
    return v;
}

std::vector<double> HttpEmbedderBackend::embed_text(const std::string& text) const {
    return request_vector(nlohmann::json{{"text", text}}.dump(), "embed-text\x1f" + text);
}

std::vector<double> HttpEmbedderBackend::embed_image(const RasterImage& image) const {
    const auto png = encode_png(image);
    const std::string b64 = base64_encode(png.data(), png.size());
    return request_vector(nlohmann::json{{"image_png_base64", b64}}.dump(),
                          "embed-image\x1f" + hex64(fnv1a64(png.data(), png.size())));
}

// ---------------------------------------------------------------------------
// Image generator

HttpImageGeneratorBackend::HttpImageGeneratorBackend(HttpEndpoint endpoint,
                                                     const std::string& cache_dir)
    : endpoint_(std::move(endpoint)), cache_(cache_dir) {}

RasterImage HttpImageGeneratorBackend::generate(const RasterImage& object_sketch,
                                                const std::string& scene_text,
                                                std::uint64_t seed) const {
    const auto png = encode_png(object_sketch);
    const std::string key = "generate\x1f" + hex64(fnv1a64(png.data(), png.size())) + "\x1f" +
                            scene_text + "\x1f" + std::to_string(seed);
    std::string b64_out;
    if (auto hit = cache_.get(key)) {
        b64_out = *hit;
    } else {
        const auto body =
            post_json(endpoint_, nlohmann::json{{"image_png_base64",
                                                 base64_encode(png.data(), png.size())},
                                                {"text", scene_text},
                                                {"seed", seed}});
        if (!body.contains("image_png_base64") || !body["image_png_base64"].is_string()) {
            throw BackendFailure("image generator response missing 'image_png_base64'");
        }
        b64_out = body["image_png_base64"].get<std::string>();
        cache_.put(key, b64_out);
    }
    const auto bytes = base64_decode(b64_out);
    RasterImage img = decode_png(bytes.data(), bytes.size());
    if (img.channels != 3) throw BackendFailure("image generator must return a 3-channel image");
    return img;
}

}  // namespace ssk
