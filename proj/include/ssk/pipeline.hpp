#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ssk/backends.hpp"
#include "ssk/expansion.hpp"
#include "ssk/generator.hpp"
#include "ssk/layout.hpp"

// End-to-end dataset assembly: object sketches + scene caption corpus in,
// (text, scene sketch, image) triplets out, with a JSONL manifest, per-pair
// failure isolation, and deterministic resumable reruns.
namespace ssk {

// Minimal TOML reader for flat `[section]` + `key = value` files: strings,
// integers, floats, booleans, and # comments. Returns "section.key" → raw
// value (strings unescaped). Unknown syntax throws InvalidArgument.
std::map<std::string, std::string> parse_toml_file(const std::string& path);

struct PipelineConfig {
    // [paths]
    std::string sketch_dir;    // directory of single-record stroke-3 .json files
    std::string corpus;        // scene captions, one per line (or JSONL)
    std::string annotations;   // JSONL {"file","caption","category"}; defaults
                               // to <sketch_dir>/annotations.jsonl
    std::string out_dir = "out";

    // [backends] — "template" / "heuristic" / "stub" or "http:host:port/path"
    std::string fusion_backend = "template";
    std::string layout_backend = "heuristic";
    std::string embedder_backend = "stub";
    std::string patch_backend = "stub";
    std::string image_backend = "stub";
    int embedder_dim = 16;
    int patch_grid = 8;
    int patch_dim = 8;

    // [pipeline]
    int canvas_res = 256;  // divisible by 4
    int stroke_width = 2;
    std::uint64_t seed = 0;
    int max_sketches = 0;  // 0 = all
    int max_captions = 0;

    // [captioner] — model_dim is shared by the graph encoder and the decoder
    bool captioner_train = true;
    int model_dim = 32;
    int gcn_patch = 16;
    int gcn_layers = 2;
    int n_queries = 8;
    int max_caption_len = 16;
    int captioner_stage1_epochs = 40;
    int captioner_stage2_epochs = 120;
    double captioner_lr = 1e-3;
    int captioner_batch = 8;

    // [generator] — desk-scale defaults; the library TrainConfig keeps the
    // reference settings (batch 32, lr 1e-4, 50 epochs)
    bool generator_train = true;
    int generator_channels = 8;
    int generator_res_blocks = 2;
    int generator_epochs = 2;
    int generator_batch = 4;
    double generator_lr = 1e-4;
    int generator_max_pairs = 8;  // training pairs taken from the front of the product set
    int socp_res = 64;

    // [loss]
    double w_sfp = 1.0;
    double w_socp = 1.0;
    double w_mop = 1.0;
    bool adversarial = false;

    // [ablation]
    bool disable_tcla = false;
    bool disable_sfp = false;
    bool disable_socp = false;
    bool disable_mop = false;

    // [eval]
    int eval_splits = 2;
    int eval_classes = 4;

    static PipelineConfig from_toml_file(const std::string& path);
    void validate() const;  // throws InvalidArgument on bad fields or missing inputs

    // Every semantic field in a fixed order; excludes out_dir so the same
    // inputs produce the same artifacts wherever they are written.
    std::string canonical_string() const;
    std::string config_hash() const;  // 16 hex digits

    LossWeights effective_weights() const;  // loss weights after ablation switches
};

// Constructed backends; raw pointers may be re-seated by tests to inject
// instrumented fakes.
struct PipelineBackends {
    FusionBackend* fusion = nullptr;
    LayoutBackend* layout = nullptr;
    SemanticEmbedder* embedder = nullptr;
    PatchFeatureExtractor* patches = nullptr;
    ImageGeneratorBackend* image_generator = nullptr;

    std::unique_ptr<FusionBackend> owned_fusion;
    std::unique_ptr<LayoutBackend> owned_layout;
    std::unique_ptr<SemanticEmbedder> owned_embedder;
    std::unique_ptr<PatchFeatureExtractor> owned_patches;
    std::unique_ptr<ImageGeneratorBackend> owned_image_generator;
};

PipelineBackends make_backends(const PipelineConfig& config);

struct TripletRecord {
    std::string id;
    int i = 0;  // 1-based sketch index
    int j = 0;  // 1-based corpus-caption index
    std::string caption;   // fused scene caption c_s
    std::string category;  // from the sketch annotation; may be empty
    std::string sketch_vector_path;  // paths relative to the manifest directory
    std::string sketch_raster_path;
    std::string image_path;
    LayoutSpec layout;
    std::string fusion_backend;
    std::string layout_backend;
    std::string image_backend;
    std::uint64_t seed = 0;
};

struct PairFailure {
    int i = 0;
    int j = 0;
    std::string reason;
};

struct Manifest {
    std::string config_hash;
    int m = 0;
    int n = 0;
    std::vector<TripletRecord> records;  // lexicographic (i, j)
    std::vector<PairFailure> failures;
};

void write_manifest(const std::string& path, const Manifest& manifest);
Manifest read_manifest(const std::string& path);

// Runs caption → fuse → layout → adapt → image → scene sketch for the full
// M×N product, training (or loading) the captioner and generator first.
// Existing records in <out_dir>/manifest.jsonl are kept as-is (resume);
// failures of individual pairs are recorded and the run continues.
Manifest run_pipeline(const PipelineConfig& config, PipelineBackends& backends);
Manifest run_pipeline(const PipelineConfig& config);

struct ValidationReport {
    int records_checked = 0;
    std::vector<std::string> violations;

    bool ok() const { return violations.empty(); }
};

ValidationReport validate_manifest(const std::string& path);

struct EvalResult {
    double fid = 0.0;
    double is_mean = 0.0;
    double is_stddev = 0.0;
    int records = 0;
};

// Fréchet distance between embedded images and embedded scene sketches, and
// the diversity score of a seeded random-projection classifier over the
// scene sketches.
EvalResult evaluate_manifest(const std::string& manifest_path, const PipelineConfig& config,
                             PipelineBackends& backends);
EvalResult evaluate_manifest(const std::string& manifest_path, const PipelineConfig& config);

// Seeded random-projection classifier used by the offline diversity score:
// grid-pooled gray pixels → linear logits → softmax.
std::vector<double> stub_classifier_probs(const RasterImage& image, int n_classes,
                                          std::uint64_t seed);

struct SketchAnnotation {
    std::string caption;
    std::string category;
};

// JSONL {"file", "caption"[, "category"]} keyed by file name; an absent file
// yields an empty map.
std::map<std::string, SketchAnnotation> load_annotations(const std::string& path);

// Sorted .json sketch paths under dir, truncated to max_count when positive.
std::vector<std::string> list_sketch_files(const std::string& dir, int max_count = 0);

}  // namespace ssk
