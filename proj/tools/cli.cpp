// Command-line front end for the triplet pipeline: train the captioner or
// generator on their own, run the full dataset assembly, validate or score a
// manifest, and re-run with one objective term switched off.
//
// Exit codes: 0 success, 1 usage error, 2 validation failure, 3 runtime
// failure.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssk/captioner.hpp"
#include "ssk/checkpoint.hpp"
#include "ssk/common.hpp"
#include "ssk/generator.hpp"
#include "ssk/graph.hpp"
#include "ssk/metrics.hpp"
#include "ssk/pipeline.hpp"
#include "ssk/sketch_io.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct CliOptions {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
    std::string manifest;
    std::string drop;
};

ssk::PipelineConfig load_config(const CliOptions& opts) {
    if (opts.config_path.empty()) {
        throw ssk::InvalidArgument("--config is required for this command");
    }
    ssk::PipelineConfig config = ssk::PipelineConfig::from_toml_file(opts.config_path);
    if (opts.seed_set) config.seed = opts.seed;
    if (!opts.out_dir.empty()) config.out_dir = opts.out_dir;
    return config;
}

std::string manifest_path(const CliOptions& opts, const ssk::PipelineConfig* config) {
    if (!opts.manifest.empty()) return opts.manifest;
    if (config != nullptr) return (fs::path(config->out_dir) / "manifest.jsonl").string();
    throw ssk::InvalidArgument("give a manifest path or --config to locate one");
}

// Shared by caption-train and generator-train: sketches with their
// annotation captions, in filename order.
struct AnnotatedSketches {
    std::vector<ssk::VectorSketch> sketches;
    std::vector<std::string> captions;
};

AnnotatedSketches load_annotated(const ssk::PipelineConfig& config) {
    AnnotatedSketches out;
    const std::vector<std::string> paths =
        ssk::list_sketch_files(config.sketch_dir, config.max_sketches);
    if (paths.empty()) throw ssk::InvalidArgument("no .json sketches in " + config.sketch_dir);
    const std::string ann_path = config.annotations.empty()
                                     ? (fs::path(config.sketch_dir) / "annotations.jsonl").string()
                                     : config.annotations;
    const auto annotations = ssk::load_annotations(ann_path);
    for (const auto& p : paths) {
        const std::string name = fs::path(p).filename().string();
        const auto it = annotations.find(name);
        if (it == annotations.end()) {
            throw ssk::InvalidArgument("sketch " + name + " has no annotation caption");
        }
        out.sketches.push_back(ssk::load_sketch(p));
        out.captions.push_back(it->second.caption);
    }
    return out;
}

int cmd_caption_train(const CliOptions& opts) {
    const ssk::PipelineConfig config = load_config(opts);
    config.validate();
    const AnnotatedSketches data = load_annotated(config);

    const ssk::Vocabulary vocab = ssk::Vocabulary::build(data.captions);
    std::vector<ssk::CaptionSample> samples;
    for (std::size_t k = 0; k < data.sketches.size(); ++k) {
        ssk::CaptionSample s;
        s.graph = ssk::build_graph(data.sketches[k], config.gcn_patch);
        s.caption.ids = vocab.encode(data.captions[k]);
        s.caption.text = data.captions[k];
        samples.push_back(std::move(s));
    }

    std::mt19937_64 rng(ssk::hash_combine(config.seed, ssk::fnv1a64("model-init")));
    ssk::GcnParams gcn =
        ssk::GcnParams::init(config.gcn_patch, config.model_dim, config.gcn_layers, rng);
    ssk::CaptionerParams captioner = ssk::CaptionerParams::init(
        config.model_dim, config.n_queries, vocab.size(), config.max_caption_len, rng);

    const ssk::CaptionTrainConfig stage1{config.captioner_stage1_epochs, config.captioner_lr,
                                         config.captioner_batch,
                                         ssk::hash_combine(config.seed, ssk::fnv1a64("captioner-stage1"))};
    const ssk::CaptionTrainConfig stage2{config.captioner_stage2_epochs, config.captioner_lr,
                                         config.captioner_batch,
                                         ssk::hash_combine(config.seed, ssk::fnv1a64("captioner-stage2"))};
    if (stage1.epochs > 0) {
        const auto losses = ssk::train_captioner(samples, gcn, captioner, stage1, 1);
        std::printf("stage 1: %d epochs, final loss %.6f\n", stage1.epochs, losses.back());
    }
    if (stage2.epochs > 0) {
        const auto losses = ssk::train_captioner(samples, gcn, captioner, stage2, 2);
        std::printf("stage 2: %d epochs, final loss %.6f\n", stage2.epochs, losses.back());
    }
    const double accuracy = ssk::greedy_token_accuracy(samples, gcn, captioner, vocab,
                                                       config.max_caption_len);
    std::printf("greedy token accuracy: %.4f\n", accuracy);

    fs::create_directories(config.out_dir);
    ssk::Checkpoint ckpt;
    ckpt.sections.push_back(ssk::section_from_params("gcn", gcn.named_tensors()));
    ssk::CheckpointSection cap = ssk::section_from_params("captioner", captioner.named_tensors());
    cap.tensors.push_back(ssk::tensor_from_string("vocab", vocab.serialize()));
    ckpt.sections.push_back(std::move(cap));
    const std::string path = (fs::path(config.out_dir) / "captioner.ckpt").string();
    ssk::save_checkpoint(path, ckpt);
    std::printf("saved %s\n", path.c_str());
    return kExitOk;
}

int cmd_generator_train(const CliOptions& opts) {
    const ssk::PipelineConfig config = load_config(opts);
    config.validate();
    const AnnotatedSketches data = load_annotated(config);
    ssk::PipelineBackends backends = ssk::make_backends(config);

    ssk::CaptionSet corpus =
        ssk::ingest_caption_corpus(config.corpus, ssk::CaptionRole::ImageCaptions);
    if (config.max_captions > 0 && corpus.size() > config.max_captions) {
        corpus.captions.resize(static_cast<std::size_t>(config.max_captions));
    }

    // Pairs come straight from annotation captions (no captioner involved).
    std::vector<ssk::TrainPair> pairs;
    const int m = static_cast<int>(data.sketches.size());
    const int n = corpus.size();
    for (int i = 1; i <= m && static_cast<int>(pairs.size()) < config.generator_max_pairs; ++i) {
        for (int j = 1; j <= n && static_cast<int>(pairs.size()) < config.generator_max_pairs;
             ++j) {
            const std::uint64_t seed = ssk::derive_seed(config.seed, i, j);
            ssk::SceneDescription desc =
                ssk::fuse(data.captions[static_cast<std::size_t>(i - 1)],
                          corpus.captions[static_cast<std::size_t>(j - 1)], *backends.fusion);
            desc.i = i;
            desc.j = j;
            const ssk::LayoutSpec layout = config.disable_tcla
                                               ? ssk::LayoutSpec::full_canvas()
                                               : ssk::propose_layout(desc, *backends.layout, seed);
            const ssk::VectorSketch adapted =
                ssk::adapt(data.sketches[static_cast<std::size_t>(i - 1)], layout);
            const ssk::RasterImage object_raster =
                ssk::rasterize(adapted, config.canvas_res, config.stroke_width);
            ssk::RasterImage image =
                backends.image_generator->generate(object_raster, desc.text, seed);
            pairs.push_back({data.sketches[static_cast<std::size_t>(i - 1)], desc.text,
                             std::move(image), layout});
        }
    }

    ssk::GeneratorParams generator =
        ssk::GeneratorParams::init(config.generator_channels, config.generator_res_blocks,
                                   ssk::hash_combine(config.seed, ssk::fnv1a64("generator-init")));
    const ssk::TrainConfig tc{config.generator_batch, config.generator_lr,
                              config.generator_epochs,
                              ssk::hash_combine(config.seed, ssk::fnv1a64("generator-train"))};
    const ssk::LossBackends lb{backends.embedder, backends.patches, config.socp_res,
                               config.stroke_width};
    const std::vector<ssk::EpochLoss> log =
        ssk::train_generator(pairs, generator, tc, config.effective_weights(), lb);
    for (const auto& e : log) {
        std::printf("epoch %d: sfp %.6f socp %.6f mop %.6f total %.6f\n", e.epoch, e.sfp, e.socp,
                    e.mop, e.total);
    }

    fs::create_directories(config.out_dir);
    const std::string log_path = (fs::path(config.out_dir) / "generator_log.csv").string();
    ssk::write_training_log_csv(log_path, log);
    ssk::Checkpoint ckpt;
    ckpt.sections.push_back(ssk::section_from_params("generator", generator.named_tensors()));
    const std::string path = (fs::path(config.out_dir) / "generator.ckpt").string();
    ssk::save_checkpoint(path, ckpt);
    std::printf("saved %s and %s\n", path.c_str(), log_path.c_str());
    return kExitOk;
}

int cmd_pipeline_run(const CliOptions& opts) {
    const ssk::PipelineConfig config = load_config(opts);
    const ssk::Manifest manifest = ssk::run_pipeline(config);
    std::printf("pipeline: %d x %d pairs, %zu records, %zu failures\n", manifest.m, manifest.n,
                manifest.records.size(), manifest.failures.size());
    for (const auto& f : manifest.failures) {
        std::fprintf(stderr, "pair (%d, %d) failed: %s\n", f.i, f.j, f.reason.c_str());
    }
    std::printf("manifest: %s\n",
                (fs::path(config.out_dir) / "manifest.jsonl").string().c_str());
    return kExitOk;
}

int cmd_manifest_validate(const CliOptions& opts) {
    std::string path = opts.manifest;
    if (path.empty()) {
        const ssk::PipelineConfig config = load_config(opts);
        path = manifest_path(opts, &config);
    }
    const ssk::ValidationReport report = ssk::validate_manifest(path);
    std::printf("checked %d records, %zu violations\n", report.records_checked,
                report.violations.size());
    for (const auto& v : report.violations) std::fprintf(stderr, "violation: %s\n", v.c_str());
    return report.ok() ? kExitOk : kExitValidation;
}

int cmd_eval(const CliOptions& opts) {
    const ssk::PipelineConfig config = load_config(opts);
    const std::string path = manifest_path(opts, &config);
    const ssk::EvalResult result = ssk::evaluate_manifest(path, config);
    std::printf("records: %d\nfid: %.6f\nis_mean: %.6f\nis_stddev: %.6f\n", result.records,
                result.fid, result.is_mean, result.is_stddev);
    const std::string csv = (fs::path(path).parent_path() / "metrics.csv").string();
    ssk::write_metrics_csv(csv, {{"records", static_cast<double>(result.records)},
                                 {"fid", result.fid},
                                 {"is_mean", result.is_mean},
                                 {"is_stddev", result.is_stddev}});
    std::printf("metrics: %s\n", csv.c_str());
    return kExitOk;
}

int cmd_ablate(const CliOptions& opts) {
    ssk::PipelineConfig config = load_config(opts);
    if (opts.drop == "tcla") {
        config.disable_tcla = true;
    } else if (opts.drop == "sfp") {
        config.disable_sfp = true;
    } else if (opts.drop == "socp") {
        config.disable_socp = true;
    } else if (opts.drop == "mop") {
        config.disable_mop = true;
    } else {
        throw ssk::InvalidArgument("--drop must be one of tcla, sfp, socp, mop");
    }
    if (opts.out_dir.empty()) config.out_dir += "_drop_" + opts.drop;
    const ssk::Manifest manifest = ssk::run_pipeline(config);
    std::printf("ablation drop=%s: %zu records, %zu failures, out=%s\n", opts.drop.c_str(),
                manifest.records.size(), manifest.failures.size(), config.out_dir.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scene-sketch triplet dataset pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    CliOptions opts;
    auto* seed_opt = app.add_option("--seed", opts.seed, "Master seed (overrides the config)");
    app.add_option("--config", opts.config_path, "TOML config file");
    app.add_option("--out", opts.out_dir, "Output directory (overrides the config)");

    auto* caption_train = app.add_subcommand("caption-train", "Train the sketch captioner");
    auto* generator_train =
        app.add_subcommand("generator-train", "Train the scene-sketch generator");
    auto* pipeline_run = app.add_subcommand("pipeline-run", "Assemble the triplet dataset");
    auto* manifest_validate =
        app.add_subcommand("manifest-validate", "Check a manifest and its files");
    manifest_validate->add_option("manifest", opts.manifest,
                                  "Manifest path (default <out_dir>/manifest.jsonl)");
    auto* eval_cmd = app.add_subcommand("eval", "Distribution metrics over a manifest");
    eval_cmd->add_option("manifest", opts.manifest,
                         "Manifest path (default <out_dir>/manifest.jsonl)");
    auto* ablate = app.add_subcommand("ablate", "Re-run the pipeline with one term disabled");
    ablate->add_option("--drop", opts.drop, "Term to disable: tcla, sfp, socp or mop")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    opts.seed_set = seed_opt->count() > 0;

    try {
        if (caption_train->parsed()) return cmd_caption_train(opts);
        if (generator_train->parsed()) return cmd_generator_train(opts);
        if (pipeline_run->parsed()) return cmd_pipeline_run(opts);
        if (manifest_validate->parsed()) return cmd_manifest_validate(opts);
        if (eval_cmd->parsed()) return cmd_eval(opts);
        if (ablate->parsed()) return cmd_ablate(opts);
    } catch (const ssk::InvalidArgument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
