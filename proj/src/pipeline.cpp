#include "ssk/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <utility>

#include <json.hpp>

#include "ssk/captioner.hpp"
#include "ssk/checkpoint.hpp"
#include "ssk/generator.hpp"
#include "ssk/graph.hpp"
#include "ssk/http_backends.hpp"
#include "ssk/metrics.hpp"
#include "ssk/png_io.hpp"
#include "ssk/raster.hpp"
#include "ssk/sketch_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ssk {

// ---------------------------------------------------------------------------
// Config file parsing

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& raw, int line_no) {
    if (raw.size() < 2 || raw.back() != '"') {
        throw InvalidArgument("config line " + std::to_string(line_no) +
                              ": unterminated string value");
    }
    std::string out;
    for (std::size_t k = 1; k + 1 < raw.size(); ++k) {
        char c = raw[k];
        if (c == '\\') {
            if (k + 2 >= raw.size()) {
                throw InvalidArgument("config line " + std::to_string(line_no) +
                                      ": dangling escape");
            }
            char e = raw[++k];
            switch (e) {
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                case '"': out.push_back('"'); break;
                case '\\': out.push_back('\\'); break;
                default:
                    throw InvalidArgument("config line " + std::to_string(line_no) +
                                          ": unsupported escape \\" + std::string(1, e));
            }
        } else if (c == '"') {
            throw InvalidArgument("config line " + std::to_string(line_no) +
                                  ": unexpected quote inside string");
        } else {
            out.push_back(c);
        }
    }
    return out;
}

}  // namespace

std::map<std::string, std::string> parse_toml_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile("cannot open config file: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string visible;
        bool quoted = false;
        for (std::size_t k = 0; k < line.size(); ++k) {
            char c = line[k];
            if (c == '"' && (k == 0 || line[k - 1] != '\\')) quoted = !quoted;
            if (c == '#' && !quoted) break;
            visible.push_back(c);
        }
        const std::string t = trim(visible);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw InvalidArgument("config line " + std::to_string(line_no) +
                                      ": malformed section header");
            }
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) {
                throw InvalidArgument("config line " + std::to_string(line_no) +
                                      ": empty section name");
            }
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw InvalidArgument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw InvalidArgument("config line " + std::to_string(line_no) +
                                  ": empty key or value");
        }
        if (value.front() == '"') value = unquote(value, line_no);
        const std::string full = section.empty() ? key : section + "." + key;
        if (out.count(full) != 0) throw InvalidArgument("duplicate config key: " + full);
        out[full] = value;
    }
    return out;
}

namespace {

// Typed view over the parsed key/value map; tracks consumption so leftover
// (misspelled) keys can be rejected.
class ConfigReader {
  public:
    explicit ConfigReader(std::map<std::string, std::string> values)
        : values_(std::move(values)) {}

    std::string str(const std::string& key, const std::string& fallback) {
        const std::string* raw = fetch(key);
        return raw ? *raw : fallback;
    }
    bool boolean(const std::string& key, bool fallback) {
        const std::string* raw = fetch(key);
        if (!raw) return fallback;
        if (*raw == "true") return true;
        if (*raw == "false") return false;
        throw InvalidArgument("config key '" + key + "' must be true or false");
    }
    int integer(const std::string& key, int fallback) {
        const std::string* raw = fetch(key);
        if (!raw) return fallback;
        try {
            std::size_t used = 0;
            const long long v = std::stoll(*raw, &used);
            if (used != raw->size()) throw std::invalid_argument("trailing");
            return static_cast<int>(v);
        } catch (const std::exception&) {
            throw InvalidArgument("config key '" + key + "' must be an integer");
        }
    }
    std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
        const std::string* raw = fetch(key);
        if (!raw) return fallback;
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(*raw, &used);
            if (used != raw->size()) throw std::invalid_argument("trailing");
            return static_cast<std::uint64_t>(v);
        } catch (const std::exception&) {
            throw InvalidArgument("config key '" + key + "' must be a non-negative integer");
        }
    }
    double real(const std::string& key, double fallback) {
        const std::string* raw = fetch(key);
        if (!raw) return fallback;
        try {
            std::size_t used = 0;
            const double v = std::stod(*raw, &used);
            if (used != raw->size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw InvalidArgument("config key '" + key + "' must be a number");
        }
    }
    void reject_unknown() const {
        for (const auto& [key, value] : values_) {
            if (used_.count(key) == 0) throw InvalidArgument("unknown config key: " + key);
        }
    }

  private:
    const std::string* fetch(const std::string& key) {
        auto it = values_.find(key);
        if (it == values_.end()) return nullptr;
        used_.insert(key);
        return &it->second;
    }
    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

std::string effective_annotations(const PipelineConfig& config) {
    if (!config.annotations.empty()) return config.annotations;
    return (fs::path(config.sketch_dir) / "annotations.jsonl").string();
}

}  // namespace

PipelineConfig PipelineConfig::from_toml_file(const std::string& path) {
    ConfigReader r(parse_toml_file(path));
    // Relative paths in the file are taken relative to the file itself, so a
    // config can travel with its data.
    const fs::path base = fs::path(path).parent_path();
    auto resolve = [&base](const std::string& p) {
        if (p.empty() || fs::path(p).is_absolute()) return p;
        return (base / p).string();
    };
    PipelineConfig c;
    c.sketch_dir = resolve(r.str("paths.sketch_dir", c.sketch_dir));
    c.corpus = resolve(r.str("paths.corpus", c.corpus));
    c.annotations = resolve(r.str("paths.annotations", c.annotations));
    c.out_dir = resolve(r.str("paths.out_dir", c.out_dir));

    c.fusion_backend = r.str("backends.fusion", c.fusion_backend);
    c.layout_backend = r.str("backends.layout", c.layout_backend);
    c.embedder_backend = r.str("backends.embedder", c.embedder_backend);
    c.patch_backend = r.str("backends.patches", c.patch_backend);
    c.image_backend = r.str("backends.image_generator", c.image_backend);
    c.embedder_dim = r.integer("backends.embedder_dim", c.embedder_dim);
    c.patch_grid = r.integer("backends.patch_grid", c.patch_grid);
    c.patch_dim = r.integer("backends.patch_dim", c.patch_dim);

    c.canvas_res = r.integer("pipeline.canvas_res", c.canvas_res);
    c.stroke_width = r.integer("pipeline.stroke_width", c.stroke_width);
    c.seed = r.u64("pipeline.seed", c.seed);
    c.max_sketches = r.integer("pipeline.max_sketches", c.max_sketches);
    c.max_captions = r.integer("pipeline.max_captions", c.max_captions);

    c.captioner_train = r.boolean("captioner.train", c.captioner_train);
    c.model_dim = r.integer("captioner.model_dim", c.model_dim);
    c.gcn_patch = r.integer("captioner.gcn_patch", c.gcn_patch);
    c.gcn_layers = r.integer("captioner.gcn_layers", c.gcn_layers);
    c.n_queries = r.integer("captioner.queries", c.n_queries);
    c.max_caption_len = r.integer("captioner.max_len", c.max_caption_len);
    c.captioner_stage1_epochs = r.integer("captioner.stage1_epochs", c.captioner_stage1_epochs);
    c.captioner_stage2_epochs = r.integer("captioner.stage2_epochs", c.captioner_stage2_epochs);
    c.captioner_lr = r.real("captioner.lr", c.captioner_lr);
    c.captioner_batch = r.integer("captioner.batch", c.captioner_batch);

    c.generator_train = r.boolean("generator.train", c.generator_train);
    c.generator_channels = r.integer("generator.channels", c.generator_channels);
    c.generator_res_blocks = r.integer("generator.res_blocks", c.generator_res_blocks);
    c.generator_epochs = r.integer("generator.epochs", c.generator_epochs);
    c.generator_batch = r.integer("generator.batch", c.generator_batch);
    c.generator_lr = r.real("generator.lr", c.generator_lr);
    c.generator_max_pairs = r.integer("generator.max_pairs", c.generator_max_pairs);
    c.socp_res = r.integer("generator.socp_res", c.socp_res);

    c.w_sfp = r.real("loss.sfp", c.w_sfp);
    c.w_socp = r.real("loss.socp", c.w_socp);
    c.w_mop = r.real("loss.mop", c.w_mop);
    c.adversarial = r.boolean("loss.adversarial", c.adversarial);

    c.disable_tcla = r.boolean("ablation.disable_tcla", c.disable_tcla);
    c.disable_sfp = r.boolean("ablation.disable_sfp", c.disable_sfp);
    c.disable_socp = r.boolean("ablation.disable_socp", c.disable_socp);
    c.disable_mop = r.boolean("ablation.disable_mop", c.disable_mop);

    c.eval_splits = r.integer("eval.splits", c.eval_splits);
    c.eval_classes = r.integer("eval.classes", c.eval_classes);

    r.reject_unknown();
    if (c.annotations.empty() && !c.sketch_dir.empty()) {
        c.annotations = effective_annotations(c);
    }
    return c;
}

namespace {

struct BackendSpec {
    bool is_http = false;
    HttpEndpoint endpoint;
    std::string plain;
};

BackendSpec parse_backend_spec(const std::string& kind, const std::string& value) {
    BackendSpec spec;
    if (value.rfind("http:", 0) != 0) {
        spec.plain = value;
        return spec;
    }
    spec.is_http = true;
    const std::string rest = value.substr(5);
    const std::size_t colon = rest.find(':');
    const std::size_t slash = rest.find('/', colon == std::string::npos ? 0 : colon);
    if (colon == std::string::npos || slash == std::string::npos || colon == 0) {
        throw InvalidArgument(kind + " backend '" + value +
                              "' must look like http:host:port/path");
    }
    spec.endpoint.host = rest.substr(0, colon);
    try {
        std::size_t used = 0;
        spec.endpoint.port = std::stoi(rest.substr(colon + 1, slash - colon - 1), &used);
        if (used != slash - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw InvalidArgument(kind + " backend '" + value + "' has an invalid port");
    }
    if (spec.endpoint.port < 1 || spec.endpoint.port > 65535) {
        throw InvalidArgument(kind + " backend '" + value + "' has an out-of-range port");
    }
    spec.endpoint.path = rest.substr(slash);
    return spec;
}

void check_backend_value(const std::string& kind, const std::string& value,
                         const std::vector<std::string>& plain_allowed, bool http_allowed) {
    const BackendSpec spec = parse_backend_spec(kind, value);
    if (spec.is_http) {
        if (!http_allowed) {
            throw InvalidArgument(kind + " backend has no remote implementation");
        }
        return;
    }
    for (const auto& ok : plain_allowed) {
        if (spec.plain == ok) return;
    }
    throw InvalidArgument("unknown " + kind + " backend: " + value);
}

}  // namespace

void PipelineConfig::validate() const {
    if (sketch_dir.empty()) throw InvalidArgument("paths.sketch_dir is required");
    if (!fs::is_directory(sketch_dir)) {
        throw InvalidArgument("sketch directory does not exist: " + sketch_dir);
    }
    if (corpus.empty()) throw InvalidArgument("paths.corpus is required");
    if (!fs::exists(corpus)) throw InvalidArgument("caption corpus does not exist: " + corpus);
    if (out_dir.empty()) throw InvalidArgument("paths.out_dir must not be empty");

    check_backend_value("fusion", fusion_backend, {"template"}, true);
    check_backend_value("layout", layout_backend, {"heuristic"}, true);
    check_backend_value("embedder", embedder_backend, {"stub"}, true);
    check_backend_value("patches", patch_backend, {"stub"}, false);
    check_backend_value("image_generator", image_backend, {"stub"}, true);
    if (embedder_dim < 8) throw InvalidArgument("backends.embedder_dim must be >= 8");
    if (patch_grid < 2) throw InvalidArgument("backends.patch_grid must be >= 2");
    if (patch_dim < 1) throw InvalidArgument("backends.patch_dim must be >= 1");

    if (canvas_res < 16 || canvas_res % 4 != 0) {
        throw InvalidArgument("pipeline.canvas_res must be >= 16 and divisible by 4");
    }
    if (stroke_width < 1) throw InvalidArgument("pipeline.stroke_width must be >= 1");
    if (max_sketches < 0 || max_captions < 0) {
        throw InvalidArgument("pipeline.max_sketches / max_captions must be >= 0");
    }

    if (captioner_train && !fs::exists(effective_annotations(*this))) {
        throw InvalidArgument("annotations file does not exist: " +
                              effective_annotations(*this));
    }
    if (model_dim < 4) throw InvalidArgument("captioner.model_dim must be >= 4");
    if (gcn_patch < 4) throw InvalidArgument("captioner.gcn_patch must be >= 4");
    if (gcn_layers < 1) throw InvalidArgument("captioner.gcn_layers must be >= 1");
    if (n_queries < 1) throw InvalidArgument("captioner.queries must be >= 1");
    if (max_caption_len < 2) throw InvalidArgument("captioner.max_len must be >= 2");
    if (captioner_stage1_epochs < 0 || captioner_stage2_epochs < 0) {
        throw InvalidArgument("captioner epochs must be >= 0");
    }
    if (captioner_lr <= 0.0) throw InvalidArgument("captioner.lr must be positive");
    if (captioner_batch < 1) throw InvalidArgument("captioner.batch must be >= 1");

    if (generator_channels < 1) throw InvalidArgument("generator.channels must be >= 1");
    if (generator_res_blocks < 0) throw InvalidArgument("generator.res_blocks must be >= 0");
    if (generator_epochs < 0) throw InvalidArgument("generator.epochs must be >= 0");
    if (generator_batch < 1) throw InvalidArgument("generator.batch must be >= 1");
    if (generator_lr <= 0.0) throw InvalidArgument("generator.lr must be positive");
    if (generator_max_pairs < 1) throw InvalidArgument("generator.max_pairs must be >= 1");
    if (socp_res < 8) throw InvalidArgument("generator.socp_res must be >= 8");

    if (w_sfp < 0.0 || w_socp < 0.0 || w_mop < 0.0) {
        throw InvalidArgument("loss weights must be non-negative");
    }
    if (w_sfp == 0.0 && w_socp == 0.0 && w_mop == 0.0) {
        throw InvalidArgument("at least one loss weight must be positive");
    }

    if (eval_splits < 1) throw InvalidArgument("eval.splits must be >= 1");
    if (eval_classes < 2) throw InvalidArgument("eval.classes must be >= 2");
}

std::string PipelineConfig::canonical_string() const {
    std::string s;
    auto put = [&s](const std::string& key, const std::string& value) {
        s += key;
        s += '=';
        s += value;
        s += '\n';
    };
    auto put_int = [&put](const std::string& key, long long v) { put(key, std::to_string(v)); };
    auto put_bool = [&put](const std::string& key, bool v) { put(key, v ? "1" : "0"); };
    auto put_real = [&put](const std::string& key, double v) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        put(key, buf);
    };

    put("sketch_dir", sketch_dir);
    put("corpus", corpus);
    put("annotations", effective_annotations(*this));
    put("fusion", fusion_backend);
    put("layout", layout_backend);
    put("embedder", embedder_backend);
    put("patches", patch_backend);
    put("image_generator", image_backend);
    put_int("embedder_dim", embedder_dim);
    put_int("patch_grid", patch_grid);
    put_int("patch_dim", patch_dim);
    put_int("canvas_res", canvas_res);
    put_int("stroke_width", stroke_width);
    put("seed", std::to_string(seed));
    put_int("max_sketches", max_sketches);
    put_int("max_captions", max_captions);
    put_bool("captioner_train", captioner_train);
    put_int("model_dim", model_dim);
    put_int("gcn_patch", gcn_patch);
    put_int("gcn_layers", gcn_layers);
    put_int("n_queries", n_queries);
    put_int("max_caption_len", max_caption_len);
    put_int("captioner_stage1_epochs", captioner_stage1_epochs);
    put_int("captioner_stage2_epochs", captioner_stage2_epochs);
    put_real("captioner_lr", captioner_lr);
    put_int("captioner_batch", captioner_batch);
    put_bool("generator_train", generator_train);
    put_int("generator_channels", generator_channels);
    put_int("generator_res_blocks", generator_res_blocks);
    put_int("generator_epochs", generator_epochs);
    put_int("generator_batch", generator_batch);
    put_real("generator_lr", generator_lr);
    put_int("generator_max_pairs", generator_max_pairs);
    put_int("socp_res", socp_res);
    put_real("w_sfp", w_sfp);
    put_real("w_socp", w_socp);
    put_real("w_mop", w_mop);
    put_bool("adversarial", adversarial);
    put_bool("disable_tcla", disable_tcla);
    put_bool("disable_sfp", disable_sfp);
    put_bool("disable_socp", disable_socp);
    put_bool("disable_mop", disable_mop);
    put_int("eval_splits", eval_splits);
    put_int("eval_classes", eval_classes);
    return s;
}

std::string PipelineConfig::config_hash() const { return hex64(fnv1a64(canonical_string())); }

LossWeights PipelineConfig::effective_weights() const {
    LossWeights w;
    w.sfp = disable_sfp ? 0.0 : w_sfp;
    w.socp = disable_socp ? 0.0 : w_socp;
    w.mop = disable_mop ? 0.0 : w_mop;
    w.adversarial_enabled = adversarial;
    return w;
}

// ---------------------------------------------------------------------------
// Backend construction

PipelineBackends make_backends(const PipelineConfig& config) {
    PipelineBackends b;
    const fs::path cache_root = fs::path(config.out_dir) / "cache";

    {
        const BackendSpec spec = parse_backend_spec("fusion", config.fusion_backend);
        if (spec.is_http) {
            b.owned_fusion = std::make_unique<HttpChatFusionBackend>(
                spec.endpoint, (cache_root / "fusion").string());
        } else if (spec.plain == "template") {
            b.owned_fusion = std::make_unique<TemplateFusionBackend>();
        } else {
            throw InvalidArgument("unknown fusion backend: " + config.fusion_backend);
        }
        b.fusion = b.owned_fusion.get();
    }
    {
        const BackendSpec spec = parse_backend_spec("layout", config.layout_backend);
        if (spec.is_http) {
            b.owned_layout = std::make_unique<HttpLayoutBackend>(spec.endpoint,
                                                                 (cache_root / "layout").string());
        } else if (spec.plain == "heuristic") {
            b.owned_layout = std::make_unique<HeuristicLayoutBackend>();
        } else {
            throw InvalidArgument("unknown layout backend: " + config.layout_backend);
        }
        b.layout = b.owned_layout.get();
    }
    {
        const BackendSpec spec = parse_backend_spec("embedder", config.embedder_backend);
        if (spec.is_http) {
            b.owned_embedder = std::make_unique<HttpEmbedderBackend>(
                spec.endpoint, config.embedder_dim, (cache_root / "embedder").string());
        } else if (spec.plain == "stub") {
            b.owned_embedder = std::make_unique<StubEmbedder>(
                hash_combine(config.seed, fnv1a64("embedder")), config.embedder_dim);
        } else {
            throw InvalidArgument("unknown embedder backend: " + config.embedder_backend);
        }
        b.embedder = b.owned_embedder.get();
    }
    {
        const BackendSpec spec = parse_backend_spec("patches", config.patch_backend);
        if (spec.is_http || spec.plain != "stub") {
            throw InvalidArgument("unknown patch backend: " + config.patch_backend);
        }
        b.owned_patches = std::make_unique<StubPatchExtractor>(
            hash_combine(config.seed, fnv1a64("patches")), config.patch_grid, config.patch_dim);
        b.patches = b.owned_patches.get();
    }
    {
        const BackendSpec spec = parse_backend_spec("image_generator", config.image_backend);
        if (spec.is_http) {
            b.owned_image_generator = std::make_unique<HttpImageGeneratorBackend>(
                spec.endpoint, (cache_root / "images").string());
        } else if (spec.plain == "stub") {
            b.owned_image_generator = std::make_unique<StubImageGenerator>();
        } else {
            throw InvalidArgument("unknown image backend: " + config.image_backend);
        }
        b.image_generator = b.owned_image_generator.get();
    }
    return b;
}

// ---------------------------------------------------------------------------
// Manifest serialization

namespace {

json record_to_json(const TripletRecord& r) {
    return json{{"type", "triplet"},
                {"id", r.id},
                {"i", r.i},
                {"j", r.j},
                {"caption", r.caption},
                {"category", r.category},
                {"sketch_vector_path", r.sketch_vector_path},
                {"sketch_raster_path", r.sketch_raster_path},
                {"image_path", r.image_path},
                {"layout", {{"x", r.layout.x}, {"y", r.layout.y}, {"w", r.layout.w}, {"h", r.layout.h}}},
                {"backends",
                 {{"fusion", r.fusion_backend}, {"layout", r.layout_backend}, {"image", r.image_backend}}},
                {"seed", r.seed}};
}

TripletRecord record_from_json(const json& v) {
    TripletRecord r;
    r.id = v.at("id").get<std::string>();
    r.i = v.at("i").get<int>();
    r.j = v.at("j").get<int>();
    r.caption = v.at("caption").get<std::string>();
    r.category = v.at("category").get<std::string>();
    r.sketch_vector_path = v.at("sketch_vector_path").get<std::string>();
    r.sketch_raster_path = v.at("sketch_raster_path").get<std::string>();
    r.image_path = v.at("image_path").get<std::string>();
    const json& box = v.at("layout");
    r.layout.x = box.at("x").get<double>();
    r.layout.y = box.at("y").get<double>();
    r.layout.w = box.at("w").get<double>();
    r.layout.h = box.at("h").get<double>();
    const json& backends = v.at("backends");
    r.fusion_backend = backends.at("fusion").get<std::string>();
    r.layout_backend = backends.at("layout").get<std::string>();
    r.image_backend = backends.at("image").get<std::string>();
    r.seed = v.at("seed").get<std::uint64_t>();
    r.layout.backend = r.layout_backend;
    r.layout.seed = r.seed;
    return r;
}

}  // namespace

void write_manifest(const std::string& path, const Manifest& manifest) {
    std::string body;
    const json header = {{"type", "header"},
                         {"version", 1},
                         {"config_hash", manifest.config_hash},
                         {"m", manifest.m},
                         {"n", manifest.n},
                         {"pairs", manifest.m * manifest.n}};
    body += header.dump();
    body += '\n';
    for (const auto& r : manifest.records) {
        body += record_to_json(r).dump();
        body += '\n';
    }
    for (const auto& f : manifest.failures) {
        body += json{{"type", "failure"}, {"i", f.i}, {"j", f.j}, {"reason", f.reason}}.dump();
        body += '\n';
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw MissingFile("cannot open manifest for writing: " + tmp);
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        if (!out) throw MissingFile("short write on manifest: " + tmp);
    }
    fs::rename(tmp, path);
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile("cannot open manifest: " + path);
    Manifest out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json v = json::parse(line, nullptr, false);
        if (v.is_discarded()) {
            throw InvalidArgument("manifest line " + std::to_string(line_no) +
                                  ": invalid JSON");
        }
        try {
            const std::string type = v.at("type").get<std::string>();
            if (line_no == 1) {
                if (type != "header") throw InvalidArgument("manifest must start with a header");
                if (v.at("version").get<int>() != 1) {
                    throw InvalidArgument("unsupported manifest version");
                }
                out.config_hash = v.at("config_hash").get<std::string>();
                out.m = v.at("m").get<int>();
                out.n = v.at("n").get<int>();
            } else if (type == "triplet") {
                out.records.push_back(record_from_json(v));
            } else if (type == "failure") {
                out.failures.push_back(
                    {v.at("i").get<int>(), v.at("j").get<int>(), v.at("reason").get<std::string>()});
            } else {
                throw InvalidArgument("unknown record type: " + type);
            }
        } catch (const json::exception& e) {
            throw InvalidArgument("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (line_no == 0) throw InvalidArgument("manifest is empty: " + path);
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline run

std::map<std::string, SketchAnnotation> load_annotations(const std::string& path) {
    std::map<std::string, SketchAnnotation> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json v = json::parse(line, nullptr, false);
        if (v.is_discarded() || !v.is_object() || !v.contains("file") || !v.contains("caption")) {
            throw InvalidArgument("annotations line " + std::to_string(line_no) +
                                  ": expected {\"file\", \"caption\"[, \"category\"]}");
        }
        SketchAnnotation a;
        a.caption = v.at("caption").get<std::string>();
        a.category = v.value("category", "");
        out[v.at("file").get<std::string>()] = a;
    }
    return out;
}

std::vector<std::string> list_sketch_files(const std::string& dir, int max_count) {
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            out.push_back(entry.path().string());
        }
    }
    std::sort(out.begin(), out.end());
    if (max_count > 0 && out.size() > static_cast<std::size_t>(max_count)) {
        out.resize(static_cast<std::size_t>(max_count));
    }
    return out;
}

namespace {

void round_params_f32(const std::vector<nn::NodePtr>& params) {
    for (const auto& p : params) {
        for (double& v : p->value.data) v = static_cast<double>(static_cast<float>(v));
    }
}

std::string pair_id(int i, int j) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "t_%04d_%04d", i, j);
    return buf;
}

// Everything derived for one (i, j) pair before the scene sketch itself.
struct PairInputs {
    std::uint64_t seed = 0;
    std::string caption;
    LayoutSpec layout;
    VectorSketch adapted;
    RasterImage object_raster;
    RasterImage image;
};

}  // namespace

Manifest run_pipeline(const PipelineConfig& config, PipelineBackends& backends) {
    config.validate();
    const fs::path out_dir(config.out_dir);
    fs::create_directories(out_dir / "vectors");
    fs::create_directories(out_dir / "sketches");
    fs::create_directories(out_dir / "images");

    // Inputs: sketches in filename order, then the caption corpus.
    const std::vector<std::string> sketch_paths =
        list_sketch_files(config.sketch_dir, config.max_sketches);
    if (sketch_paths.empty()) {
        throw InvalidArgument("no .json sketches in " + config.sketch_dir);
    }
    std::vector<VectorSketch> sketches;
    sketches.reserve(sketch_paths.size());
    for (const auto& p : sketch_paths) sketches.push_back(load_sketch(p));

    CaptionSet corpus = ingest_caption_corpus(config.corpus, CaptionRole::ImageCaptions);
    if (config.max_captions > 0 && corpus.size() > config.max_captions) {
        corpus.captions.resize(static_cast<std::size_t>(config.max_captions));
    }
    const int m = static_cast<int>(sketches.size());
    const int n = corpus.size();

    const std::map<std::string, SketchAnnotation> annotations =
        load_annotations(effective_annotations(config));

    // Resume state.
    const std::string manifest_path = (out_dir / "manifest.jsonl").string();
    std::map<std::pair<int, int>, TripletRecord> existing;
    if (fs::exists(manifest_path)) {
        const Manifest previous = read_manifest(manifest_path);
        if (previous.config_hash != config.config_hash()) {
            throw InvalidArgument("output directory holds a manifest for a different config");
        }
        if (previous.m != m || previous.n != n) {
            throw InvalidArgument("output directory holds a manifest with different counts");
        }
        for (const auto& r : previous.records) existing[{r.i, r.j}] = r;
    }

    // Models: load the checkpoint if one exists, otherwise train and save.
    const std::string ckpt_path = (out_dir / "model.ckpt").string();
    std::mt19937_64 init_rng(hash_combine(config.seed, fnv1a64("model-init")));
    GcnParams gcn = GcnParams::init(config.gcn_patch, config.model_dim, config.gcn_layers, init_rng);
    Vocabulary vocab;
    CaptionerParams captioner;
    GeneratorParams generator;
    bool trained = false;

    if (fs::exists(ckpt_path)) {
        const Checkpoint ckpt = load_checkpoint(ckpt_path);
        const CheckpointSection* cap_section = ckpt.find("captioner");
        const CheckpointSection* gcn_section = ckpt.find("gcn");
        const CheckpointSection* gen_section = ckpt.find("generator");
        if (cap_section == nullptr || gcn_section == nullptr || gen_section == nullptr) {
            throw InvalidArgument("checkpoint is missing a model section: " + ckpt_path);
        }
        const CheckpointTensor* vocab_tensor = cap_section->find("vocab");
        if (vocab_tensor == nullptr) {
            throw InvalidArgument("checkpoint captioner section has no vocab: " + ckpt_path);
        }
        vocab = Vocabulary::deserialize(string_from_tensor(*vocab_tensor));
        captioner = CaptionerParams::init(config.model_dim, config.n_queries, vocab.size(),
                                          config.max_caption_len, init_rng);
        generator = GeneratorParams::init(config.generator_channels, config.generator_res_blocks,
                                          hash_combine(config.seed, fnv1a64("generator-init")));
        load_params(*gcn_section, gcn.named_tensors());
        load_params(*cap_section, captioner.named_tensors());
        load_params(*gen_section, generator.named_tensors());
        trained = true;
    }

    if (!trained) {
        if (!config.captioner_train) {
            throw InvalidArgument("no checkpoint in out_dir and captioner.train is false");
        }
        std::vector<std::string> caption_texts;
        std::vector<CaptionSample> samples;
        caption_texts.reserve(sketches.size());
        for (std::size_t k = 0; k < sketches.size(); ++k) {
            const auto it = annotations.find(fs::path(sketch_paths[k]).filename().string());
            if (it == annotations.end()) {
                throw InvalidArgument("sketch " + fs::path(sketch_paths[k]).filename().string() +
                                      " has no annotation caption");
            }
            caption_texts.push_back(it->second.caption);
        }
        vocab = Vocabulary::build(caption_texts);
        for (std::size_t k = 0; k < sketches.size(); ++k) {
            CaptionSample sample;
            sample.graph = build_graph(sketches[k], config.gcn_patch);
            sample.caption.ids = vocab.encode(caption_texts[k]);
            sample.caption.text = caption_texts[k];
            if (static_cast<int>(sample.caption.ids.size()) > config.max_caption_len) {
                throw InvalidArgument("annotation caption longer than captioner.max_len: " +
                                      caption_texts[k]);
            }
            samples.push_back(std::move(sample));
        }
        captioner = CaptionerParams::init(config.model_dim, config.n_queries, vocab.size(),
                                          config.max_caption_len, init_rng);
        CaptionTrainConfig stage1{config.captioner_stage1_epochs, config.captioner_lr,
                                  config.captioner_batch,
                                  hash_combine(config.seed, fnv1a64("captioner-stage1"))};
        CaptionTrainConfig stage2{config.captioner_stage2_epochs, config.captioner_lr,
                                  config.captioner_batch,
                                  hash_combine(config.seed, fnv1a64("captioner-stage2"))};
        if (stage1.epochs > 0) train_captioner(samples, gcn, captioner, stage1, 1);
        if (stage2.epochs > 0) train_captioner(samples, gcn, captioner, stage2, 2);
        round_params_f32(gcn.parameters());
        round_params_f32(captioner.parameters());
    }

    // Object captions for every sketch (greedy decode with the trained
    // captioner; annotations are the fallback when decoding yields nothing).
    std::vector<std::string> object_captions(static_cast<std::size_t>(m));
    std::vector<std::string> categories(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const SketchEmbedding emb =
            gcn_forward(build_graph(sketches[static_cast<std::size_t>(i)], config.gcn_patch), gcn);
        const Caption decoded = decode_caption(encode_queries(emb, captioner), captioner, vocab,
                                               config.max_caption_len);
        std::string text = decoded.text;
        const auto it = annotations.find(fs::path(sketch_paths[static_cast<std::size_t>(i)]).filename().string());
        if (text.empty() && it != annotations.end()) text = it->second.caption;
        object_captions[static_cast<std::size_t>(i)] = text;
        if (it != annotations.end()) categories[static_cast<std::size_t>(i)] = it->second.category;
    }

    // Pair derivation shared by generator training and record emission.
    auto build_pair = [&](int i, int j) {
        PairInputs p;
        p.seed = derive_seed(config.seed, static_cast<std::uint64_t>(i),
                             static_cast<std::uint64_t>(j));
        SceneDescription desc =
            fuse(object_captions[static_cast<std::size_t>(i - 1)],
                 corpus.captions[static_cast<std::size_t>(j - 1)], *backends.fusion);
        desc.i = i;
        desc.j = j;
        p.caption = desc.text;
        p.layout = config.disable_tcla ? LayoutSpec::full_canvas()
                                       : propose_layout(desc, *backends.layout, p.seed);
        p.adapted = adapt(sketches[static_cast<std::size_t>(i - 1)], p.layout);
        p.object_raster = rasterize(p.adapted, config.canvas_res, config.stroke_width);
        p.image = backends.image_generator->generate(p.object_raster, p.caption, p.seed);
        if (p.image.channels != 3 || p.image.width != config.canvas_res ||
            p.image.height != config.canvas_res) {
            throw BackendFailure("image backend returned an unexpected raster shape");
        }
        return p;
    };

    if (!trained) {
        generator = GeneratorParams::init(config.generator_channels, config.generator_res_blocks,
                                          hash_combine(config.seed, fnv1a64("generator-init")));
        if (config.generator_train && config.generator_epochs > 0) {
            std::vector<TrainPair> train_pairs;
            for (int i = 1; i <= m && static_cast<int>(train_pairs.size()) <
                                          config.generator_max_pairs;
                 ++i) {
                for (int j = 1; j <= n && static_cast<int>(train_pairs.size()) <
                                              config.generator_max_pairs;
                     ++j) {
                    try {
                        PairInputs p = build_pair(i, j);
                        train_pairs.push_back({sketches[static_cast<std::size_t>(i - 1)],
                                               p.caption, std::move(p.image), p.layout});
                    } catch (const std::runtime_error&) {
                        // the same pair will fail again below and be recorded
                    }
                }
            }
            if (train_pairs.empty()) {
                throw BackendFailure("could not assemble any generator training pairs");
            }
            const TrainConfig tc{config.generator_batch, config.generator_lr,
                                 config.generator_epochs,
                                 hash_combine(config.seed, fnv1a64("generator-train"))};
            const LossBackends lb{backends.embedder, backends.patches, config.socp_res,
                                  config.stroke_width};
            const std::vector<EpochLoss> log =
                train_generator(train_pairs, generator, tc, config.effective_weights(), lb);
            write_training_log_csv((out_dir / "generator_log.csv").string(), log);
        }
        round_params_f32(generator.parameters());

        Checkpoint ckpt;
        ckpt.sections.push_back(section_from_params("gcn", gcn.named_tensors()));
        CheckpointSection cap_section = section_from_params("captioner", captioner.named_tensors());
        cap_section.tensors.push_back(tensor_from_string("vocab", vocab.serialize()));
        ckpt.sections.push_back(std::move(cap_section));
        ckpt.sections.push_back(section_from_params("generator", generator.named_tensors()));
        save_checkpoint(ckpt_path, ckpt);
    }

    // Emit the M×N product in lexicographic order; existing records are
    // reused untouched, failures recorded without stopping the run.
    Manifest manifest;
    manifest.config_hash = config.config_hash();
    manifest.m = m;
    manifest.n = n;
    for (int i = 1; i <= m; ++i) {
        for (int j = 1; j <= n; ++j) {
            if (const auto it = existing.find({i, j}); it != existing.end()) {
                manifest.records.push_back(it->second);
                continue;
            }
            const std::string id = pair_id(i, j);
            try {
                PairInputs p = build_pair(i, j);
                const RasterImage scene_sketch = generate(p.image, generator);

                TripletRecord r;
                r.id = id;
                r.i = i;
                r.j = j;
                r.caption = p.caption;
                r.category = categories[static_cast<std::size_t>(i - 1)];
                r.sketch_vector_path = "vectors/" + id + ".json";
                r.sketch_raster_path = "sketches/" + id + ".png";
                r.image_path = "images/" + id + ".png";
                r.layout = p.layout;
                r.fusion_backend = backends.fusion->name();
                r.layout_backend = p.layout.backend;
                r.image_backend = backends.image_generator->name();
                r.seed = p.seed;

                save_sketch(p.adapted, (out_dir / r.sketch_vector_path).string());
                write_png(scene_sketch, (out_dir / r.sketch_raster_path).string());
                write_png(p.image, (out_dir / r.image_path).string());
                manifest.records.push_back(std::move(r));
            } catch (const std::runtime_error& e) {
                manifest.failures.push_back({i, j, e.what()});
            }
        }
    }
    write_manifest(manifest_path, manifest);
    return manifest;
}

Manifest run_pipeline(const PipelineConfig& config) {
    PipelineBackends backends = make_backends(config);
    return run_pipeline(config, backends);
}

// ---------------------------------------------------------------------------
// Manifest validation

ValidationReport validate_manifest(const std::string& path) {
    ValidationReport report;
    std::ifstream in(path);
    if (!in) {
        report.violations.push_back("manifest not found: " + path);
        return report;
    }
    const fs::path base = fs::path(path).parent_path();
    auto complain = [&report](int line_no, const std::string& what) {
        report.violations.push_back("line " + std::to_string(line_no) + ": " + what);
    };

    std::string line;
    int line_no = 0;
    int m = 0;
    int n = 0;
    std::set<std::string> ids;
    std::map<std::pair<int, int>, int> coverage;

    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            complain(line_no, "blank line");
            continue;
        }
        json v = json::parse(line, nullptr, false);
        if (v.is_discarded() || !v.is_object()) {
            complain(line_no, "invalid JSON");
            continue;
        }
        if (line_no == 1) {
            if (v.value("type", "") != "header") {
                complain(line_no, "first line is not a manifest header");
                return report;
            }
            if (v.value("version", 0) != 1) complain(line_no, "unsupported manifest version");
            if (v.value("config_hash", "").empty()) complain(line_no, "missing config_hash");
            m = v.value("m", 0);
            n = v.value("n", 0);
            if (m < 1 || n < 1) {
                complain(line_no, "non-positive m or n in header");
                return report;
            }
            if (v.value("pairs", -1) != m * n) complain(line_no, "pairs field disagrees with m*n");
            continue;
        }
        const std::string type = v.value("type", "");
        if (type == "triplet") {
            TripletRecord r;
            try {
                r = record_from_json(v);
            } catch (const std::exception& e) {
                complain(line_no, std::string("malformed record: ") + e.what());
                continue;
            }
            ++report.records_checked;
            if (r.id.empty()) complain(line_no, "empty id");
            if (!ids.insert(r.id).second) complain(line_no, "duplicate id " + r.id);
            if (r.i < 1 || r.i > m || r.j < 1 || r.j > n) {
                complain(line_no, "provenance (" + std::to_string(r.i) + ", " +
                                      std::to_string(r.j) + ") out of bounds");
            } else {
                ++coverage[{r.i, r.j}];
            }
            if (r.caption.empty()) complain(line_no, "empty caption in " + r.id);
            if (!r.layout.valid()) complain(line_no, "invalid layout box in " + r.id);
            for (const std::string& rel :
                 {r.sketch_vector_path, r.sketch_raster_path, r.image_path}) {
                if (rel.empty()) {
                    complain(line_no, "empty artifact path in " + r.id);
                } else if (!fs::exists(base / rel)) {
                    complain(line_no, "missing file " + rel);
                }
            }
        } else if (type == "failure") {
            const int i = v.value("i", 0);
            const int j = v.value("j", 0);
            if (v.value("reason", "").empty()) complain(line_no, "failure without reason");
            if (i < 1 || i > m || j < 1 || j > n) {
                complain(line_no, "failure provenance out of bounds");
            } else {
                ++coverage[{i, j}];
            }
        } else {
            complain(line_no, "unknown record type '" + type + "'");
        }
    }
    if (line_no == 0) {
        report.violations.push_back("manifest is empty");
        return report;
    }

    constexpr int kMaxCoverageComplaints = 50;
    int coverage_complaints = 0;
    for (int i = 1; i <= m && coverage_complaints < kMaxCoverageComplaints; ++i) {
        for (int j = 1; j <= n && coverage_complaints < kMaxCoverageComplaints; ++j) {
            const auto it = coverage.find({i, j});
            const int count = it == coverage.end() ? 0 : it->second;
            if (count != 1) {
                report.violations.push_back("pair (" + std::to_string(i) + ", " +
                                            std::to_string(j) + ") covered " +
                                            std::to_string(count) + " times");
                ++coverage_complaints;
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<double> stub_classifier_probs(const RasterImage& image, int n_classes,
                                          std::uint64_t seed) {
    if (n_classes < 2) throw InvalidArgument("classifier needs at least 2 classes");
    constexpr int kGrid = 8;
    const RasterImage gray = image.channels == 1 ? image : image.to_gray();
    std::vector<double> features(kGrid * kGrid + 1, 0.0);
    for (int gy = 0; gy < kGrid; ++gy) {
        const int y0 = gy * gray.height / kGrid;
        const int y1 = (gy + 1) * gray.height / kGrid;
        for (int gx = 0; gx < kGrid; ++gx) {
            const int x0 = gx * gray.width / kGrid;
            const int x1 = (gx + 1) * gray.width / kGrid;
            double sum = 0.0;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) sum += gray.at(x, y);
            }
            const int count = (y1 - y0) * (x1 - x0);
            features[static_cast<std::size_t>(gy * kGrid + gx)] =
                count > 0 ? sum / count : 0.0;
        }
    }
    features.back() = 1.0;

    std::mt19937_64 rng(seed);
    const nn::Tensor weights =
        nn::Tensor::randn({n_classes, kGrid * kGrid + 1}, rng, 1.0 / std::sqrt(65.0));
    std::vector<double> logits(static_cast<std::size_t>(n_classes), 0.0);
    nn::gemm(n_classes, 1, kGrid * kGrid + 1, weights.data.data(), features.data(), logits.data(),
             false);

    double max_logit = logits[0];
    for (double v : logits) max_logit = std::max(max_logit, v);
    double denom = 0.0;
    for (double& v : logits) {
        v = std::exp(v - max_logit);
        denom += v;
    }
    for (double& v : logits) v /= denom;
    return logits;
}

EvalResult evaluate_manifest(const std::string& manifest_path, const PipelineConfig& config,
                             PipelineBackends& backends) {
    const Manifest manifest = read_manifest(manifest_path);
    const int count = static_cast<int>(manifest.records.size());
    if (count < 2) throw TooFewSamples("need at least 2 records to evaluate a manifest");
    if (count < config.eval_splits) {
        throw TooFewSamples("fewer records than eval splits");
    }
    const fs::path base = fs::path(manifest_path).parent_path();
    const int d = backends.embedder->dim();

    nn::Tensor image_features({count, d});
    nn::Tensor sketch_features({count, d});
    nn::Tensor probs({count, config.eval_classes});
    const std::uint64_t classifier_seed = hash_combine(config.seed, fnv1a64("eval-classifier"));
    for (int k = 0; k < count; ++k) {
        const TripletRecord& r = manifest.records[static_cast<std::size_t>(k)];
        const RasterImage image = read_png((base / r.image_path).string());
        const RasterImage sketch = read_png((base / r.sketch_raster_path).string());
        const std::vector<double> ei = backends.embedder->embed_image(image);
        const std::vector<double> es = backends.embedder->embed_image(sketch);
        if (static_cast<int>(ei.size()) != d || static_cast<int>(es.size()) != d) {
            throw DimensionMismatch("embedder returned an unexpected dimension");
        }
        for (int c = 0; c < d; ++c) {
            image_features.at(k, c) = ei[static_cast<std::size_t>(c)];
            sketch_features.at(k, c) = es[static_cast<std::size_t>(c)];
        }
        const std::vector<double> p =
            stub_classifier_probs(sketch, config.eval_classes, classifier_seed);
        for (int c = 0; c < config.eval_classes; ++c) {
            probs.at(k, c) = p[static_cast<std::size_t>(c)];
        }
    }

    EvalResult out;
    out.records = count;
    out.fid = frechet_distance(image_features, sketch_features);
    const InceptionScoreResult is = inception_score(probs, config.eval_splits);
    out.is_mean = is.mean;
    out.is_stddev = is.stddev;
    return out;
}

EvalResult evaluate_manifest(const std::string& manifest_path, const PipelineConfig& config) {
    PipelineBackends backends = make_backends(config);
    return evaluate_manifest(manifest_path, config, backends);
}

}  // namespace ssk
