#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssk/common.hpp"
#include "ssk/pipeline.hpp"
#include "ssk/png_io.hpp"
#include "ssk/sketch_io.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ssk;

namespace {

PipelineConfig fixture_config(const std::string& out_dir) {
    PipelineConfig c = PipelineConfig::from_toml_file(test::fixture_path("fixture3/config.toml"));
    c.out_dir = out_dir;
    return c;
}

// One full 3x4 run shared by the read-only test cases below.
struct SharedRun {
    test::TempDir dir{"pipeline-shared"};
    PipelineConfig config = fixture_config(dir.file("out"));
    Manifest manifest = run_pipeline(config);

    std::string manifest_path() const { return dir.file("out") + "/manifest.jsonl"; }
};

SharedRun& shared_run() {
    static SharedRun run;
    return run;
}

Manifest small_manifest() {
    Manifest m;
    m.config_hash = "0123456789abcdef";
    m.m = 2;
    m.n = 1;
    TripletRecord a;
    a.id = "t_0001_0001";
    a.i = 1;
    a.j = 1;
    a.caption = "cat in a park";
    a.category = "cat";
    a.sketch_vector_path = "vectors/t_0001_0001.json";
    a.sketch_raster_path = "sketches/t_0001_0001.png";
    a.image_path = "images/t_0001_0001.png";
    a.layout = LayoutSpec{0.25, 0.5, 0.3, 0.2, "", "heuristic", 42};
    a.fusion_backend = "template";
    a.layout_backend = "heuristic";
    a.image_backend = "stub-compositor";
    a.seed = 42;
    m.records.push_back(a);
    m.failures.push_back({2, 1, "backend exploded"});
    return m;
}

// Manifest directory with one valid record and all artifact files present.
void write_valid_single(const std::string& dir, std::vector<std::string> extra_lines = {},
                        bool include_record = true) {
    fs::create_directories(fs::path(dir) / "vectors");
    fs::create_directories(fs::path(dir) / "sketches");
    fs::create_directories(fs::path(dir) / "images");
    test::write_file(dir + "/vectors/a.json", "{}");
    test::write_file(dir + "/sketches/a.png", "x");
    test::write_file(dir + "/images/a.png", "x");
    std::string body =
        R"({"type":"header","version":1,"config_hash":"f00f","m":1,"n":1,"pairs":1})";
    body += '\n';
    if (include_record) {
        body +=
            R"({"type":"triplet","id":"t_0001_0001","i":1,"j":1,"caption":"a cat","category":"cat",)"
            R"("sketch_vector_path":"vectors/a.json","sketch_raster_path":"sketches/a.png",)"
            R"("image_path":"images/a.png","layout":{"x":0.1,"y":0.1,"w":0.5,"h":0.5},)"
            R"("backends":{"fusion":"template","layout":"heuristic","image":"stub-compositor"},"seed":9})";
        body += '\n';
    }
    for (const auto& line : extra_lines) {
        body += line;
        body += '\n';
    }
    test::write_file(dir + "/manifest.jsonl", body);
}

bool has_violation(const ValidationReport& report, const std::string& needle) {
    for (const auto& v : report.violations) {
        if (v.find(needle) != std::string::npos) return true;
    }
    return false;
}

// Image backend that fails for specific scene captions; everything else is
// delegated to the deterministic stub.
class FlakyImageBackend : public ImageGeneratorBackend {
  public:
    explicit FlakyImageBackend(std::string poison) : poison_(std::move(poison)) {}
    std::string name() const override { return "flaky"; }
    RasterImage generate(const RasterImage& sketch, const std::string& text,
                         std::uint64_t seed) const override {
        if (text.find(poison_) != std::string::npos) {
            throw BackendFailure("scenes mentioning '" + poison_ + "' are unsupported");
        }
        return inner_.generate(sketch, text, seed);
    }

  private:
    std::string poison_;
    StubImageGenerator inner_;
};

}  // namespace

TEST_CASE("config parser reads sections, typed values, and comments") {
    test::TempDir tmp("toml-basic");
    const std::string path = tmp.file("a.toml");
    test::write_file(path,
                     "# heading comment\n"
                     "title = \"scene builder\"  # trailing comment\n"
                     "\n"
                     "[paths]\n"
                     "sketch_dir = \"data # not a comment\"\n"
                     "[pipeline]\n"
                     "canvas_res = 128\n"
                     "lr = 0.5\n"
                     "flag = true\n");
    const auto kv = parse_toml_file(path);
    CHECK(kv.size() == 5);
    CHECK(kv.at("title") == "scene builder");
    CHECK(kv.at("paths.sketch_dir") == "data # not a comment");
    CHECK(kv.at("pipeline.canvas_res") == "128");
    CHECK(kv.at("pipeline.lr") == "0.5");
    CHECK(kv.at("pipeline.flag") == "true");
}

TEST_CASE("config parser unescapes quoted strings") {
    test::TempDir tmp("toml-escape");
    const std::string path = tmp.file("a.toml");
    test::write_file(path, "s = \"line\\nbreak\\tand \\\"quoted\\\" back\\\\slash\"\n");
    const auto kv = parse_toml_file(path);
    CHECK(kv.at("s") == "line\nbreak\tand \"quoted\" back\\slash");

    test::write_file(path, "s = \"bad \\q escape\"\n");
    CHECK_THROWS_AS(parse_toml_file(path), InvalidArgument);
    test::write_file(path, "s = \"dangling\\\"\n");
    CHECK_THROWS_AS(parse_toml_file(path), InvalidArgument);
    test::write_file(path, "s = \"unterminated\n");
    CHECK_THROWS_AS(parse_toml_file(path), InvalidArgument);
    test::write_file(path, "s = \"inner\"quote\"\n");
    CHECK_THROWS_AS(parse_toml_file(path), InvalidArgument);
}

TEST_CASE("config parser rejects malformed structure") {
    test::TempDir tmp("toml-bad");
    const std::string path = tmp.file("a.toml");

    test::write_file(path, "[unclosed\nx = 1\n");
    CHECK_THROWS_WITH_AS(parse_toml_file(path),
                         doctest::Contains("malformed section header"), InvalidArgument);
    test::write_file(path, "[]\n");
    CHECK_THROWS_WITH_AS(parse_toml_file(path), doctest::Contains("empty section name"),
                         InvalidArgument);
    test::write_file(path, "just a bare line\n");
    CHECK_THROWS_WITH_AS(parse_toml_file(path), doctest::Contains("expected key = value"),
                         InvalidArgument);
    test::write_file(path, "= 5\n");
    CHECK_THROWS_WITH_AS(parse_toml_file(path), doctest::Contains("empty key or value"),
                         InvalidArgument);
    test::write_file(path, "x =\n");
    CHECK_THROWS_WITH_AS(parse_toml_file(path), doctest::Contains("empty key or value"),
                         InvalidArgument);
    test::write_file(path, "[a]\nx = 1\nx = 2\n");
    CHECK_THROWS_WITH_AS(parse_toml_file(path), doctest::Contains("duplicate config key: a.x"),
                         InvalidArgument);
    CHECK_THROWS_AS(parse_toml_file(tmp.file("absent.toml")), MissingFile);
}

TEST_CASE("config files resolve relative paths against their own directory") {
    const std::string cfg = test::fixture_path("fixture3/config.toml");
    const PipelineConfig c = PipelineConfig::from_toml_file(cfg);
    const fs::path base = fs::path(cfg).parent_path();

    CHECK(c.sketch_dir == (base / "sketches").string());
    CHECK(c.corpus == (base / "corpus.txt").string());
    CHECK(c.out_dir == (base / "out").string());
    CHECK(c.annotations == (base / "sketches" / "annotations.jsonl").string());

    CHECK(c.fusion_backend == "template");
    CHECK(c.layout_backend == "heuristic");
    CHECK(c.embedder_backend == "stub");
    CHECK(c.patch_backend == "stub");
    CHECK(c.image_backend == "stub");
    CHECK(c.embedder_dim == 16);
    CHECK(c.patch_grid == 4);
    CHECK(c.patch_dim == 6);
    CHECK(c.canvas_res == 64);
    CHECK(c.stroke_width == 2);
    CHECK(c.seed == 7);
    CHECK(c.captioner_train);
    CHECK(c.model_dim == 16);
    CHECK(c.gcn_patch == 8);
    CHECK(c.gcn_layers == 2);
    CHECK(c.n_queries == 4);
    CHECK(c.max_caption_len == 8);
    CHECK(c.captioner_stage1_epochs == 20);
    CHECK(c.captioner_stage2_epochs == 80);
    CHECK(c.captioner_lr == doctest::Approx(0.003));
    CHECK(c.captioner_batch == 3);
    CHECK(c.generator_train);
    CHECK(c.generator_channels == 8);
    CHECK(c.generator_res_blocks == 1);
    CHECK(c.generator_epochs == 1);
    CHECK(c.generator_batch == 2);
    CHECK(c.generator_lr == doctest::Approx(1e-4));
    CHECK(c.generator_max_pairs == 4);
    CHECK(c.socp_res == 32);
    CHECK(c.eval_splits == 2);
    CHECK(c.eval_classes == 4);

    // Absolute paths pass through untouched; defaults still resolve.
    test::TempDir tmp("toml-paths");
    fs::create_directories(fs::path(tmp.path()) / "cfg");
    const std::string nested = tmp.file("cfg/pipe.toml");
    test::write_file(nested,
                     "[paths]\n"
                     "sketch_dir = \"data/sk\"\n"
                     "corpus = \"/abs/corpus.txt\"\n");
    const PipelineConfig n = PipelineConfig::from_toml_file(nested);
    CHECK(n.sketch_dir == tmp.file("cfg/data/sk"));
    CHECK(n.corpus == "/abs/corpus.txt");
    CHECK(n.out_dir == tmp.file("cfg/out"));
    CHECK(n.annotations == tmp.file("cfg/data/sk/annotations.jsonl"));
}

TEST_CASE("config files reject unknown and mistyped keys") {
    test::TempDir tmp("toml-strict");
    const std::string path = tmp.file("a.toml");

    test::write_file(path, "[pipeline]\ntypo_key = 3\n");
    CHECK_THROWS_WITH_AS(PipelineConfig::from_toml_file(path),
                         doctest::Contains("unknown config key: pipeline.typo_key"),
                         InvalidArgument);
    test::write_file(path, "[pipeline]\ncanvas_res = big\n");
    CHECK_THROWS_WITH_AS(PipelineConfig::from_toml_file(path),
                         doctest::Contains("must be an integer"), InvalidArgument);
    test::write_file(path, "[captioner]\ntrain = maybe\n");
    CHECK_THROWS_WITH_AS(PipelineConfig::from_toml_file(path),
                         doctest::Contains("must be true or false"), InvalidArgument);
    test::write_file(path, "[generator]\nlr = fast\n");
    CHECK_THROWS_WITH_AS(PipelineConfig::from_toml_file(path),
                         doctest::Contains("must be a number"), InvalidArgument);
    test::write_file(path, "[pipeline]\nseed = 12x\n");
    CHECK_THROWS_WITH_AS(PipelineConfig::from_toml_file(path),
                         doctest::Contains("non-negative integer"), InvalidArgument);
}

TEST_CASE("config validation checks inputs, backends, and ranges") {
    test::TempDir tmp("cfg-validate");
    const PipelineConfig base = fixture_config(tmp.file("out"));
    CHECK_NOTHROW(base.validate());

    auto expect = [&](void (*mutate)(PipelineConfig&), const std::string& needle) {
        PipelineConfig c = base;
        mutate(c);
        CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains(needle.c_str()), InvalidArgument);
    };

    expect([](PipelineConfig& c) { c.sketch_dir.clear(); }, "sketch_dir is required");
    expect([](PipelineConfig& c) { c.sketch_dir += "-nope"; }, "does not exist");
    expect([](PipelineConfig& c) { c.corpus += "-nope"; }, "corpus does not exist");
    expect([](PipelineConfig& c) { c.out_dir.clear(); }, "out_dir");
    expect([](PipelineConfig& c) { c.annotations += "-nope"; }, "annotations file does not exist");

    expect([](PipelineConfig& c) { c.fusion_backend = "nonsense"; }, "unknown fusion backend");
    expect([](PipelineConfig& c) { c.image_backend = "nonsense"; },
           "unknown image_generator backend");
    expect([](PipelineConfig& c) { c.fusion_backend = "http:nohostport"; },
           "must look like http:host:port/path");
    expect([](PipelineConfig& c) { c.fusion_backend = "http::8080/x"; },
           "must look like http:host:port/path");
    expect([](PipelineConfig& c) { c.fusion_backend = "http:h:8080nopath"; },
           "must look like http:host:port/path");
    expect([](PipelineConfig& c) { c.fusion_backend = "http:h:abc/p"; }, "invalid port");
    expect([](PipelineConfig& c) { c.fusion_backend = "http:h:70000/p"; }, "out-of-range port");
    expect([](PipelineConfig& c) { c.patch_backend = "http:h:80/p"; },
           "no remote implementation");
    {
        PipelineConfig c = base;
        c.fusion_backend = "http:localhost:8080/fuse";
        CHECK_NOTHROW(c.validate());
    }

    expect([](PipelineConfig& c) { c.embedder_dim = 7; }, "embedder_dim");
    expect([](PipelineConfig& c) { c.patch_grid = 1; }, "patch_grid");
    expect([](PipelineConfig& c) { c.patch_dim = 0; }, "patch_dim");
    expect([](PipelineConfig& c) { c.canvas_res = 30; }, "divisible by 4");
    expect([](PipelineConfig& c) { c.canvas_res = 12; }, "divisible by 4");
    expect([](PipelineConfig& c) { c.stroke_width = 0; }, "stroke_width");
    expect([](PipelineConfig& c) { c.max_sketches = -1; }, "max_sketches");
    expect([](PipelineConfig& c) { c.model_dim = 3; }, "model_dim");
    expect([](PipelineConfig& c) { c.gcn_patch = 3; }, "gcn_patch");
    expect([](PipelineConfig& c) { c.gcn_layers = 0; }, "gcn_layers");
    expect([](PipelineConfig& c) { c.n_queries = 0; }, "queries");
    expect([](PipelineConfig& c) { c.max_caption_len = 1; }, "max_len");
    expect([](PipelineConfig& c) { c.captioner_stage1_epochs = -1; }, "epochs");
    expect([](PipelineConfig& c) { c.captioner_lr = 0.0; }, "lr must be positive");
    expect([](PipelineConfig& c) { c.captioner_batch = 0; }, "batch");
    expect([](PipelineConfig& c) { c.generator_channels = 0; }, "channels");
    expect([](PipelineConfig& c) { c.generator_res_blocks = -1; }, "res_blocks");
    expect([](PipelineConfig& c) { c.generator_epochs = -1; }, "epochs");
    expect([](PipelineConfig& c) { c.generator_batch = 0; }, "batch");
    expect([](PipelineConfig& c) { c.generator_lr = -1.0; }, "lr must be positive");
    expect([](PipelineConfig& c) { c.generator_max_pairs = 0; }, "max_pairs");
    expect([](PipelineConfig& c) { c.socp_res = 4; }, "socp_res");
    expect([](PipelineConfig& c) { c.w_sfp = -0.5; }, "non-negative");
    expect([](PipelineConfig& c) { c.w_sfp = c.w_socp = c.w_mop = 0.0; },
           "at least one loss weight");
    expect([](PipelineConfig& c) { c.eval_splits = 0; }, "splits");
    expect([](PipelineConfig& c) { c.eval_classes = 1; }, "classes");

    // annotations may be absent when the captioner is not trained
    PipelineConfig c = base;
    c.annotations += "-nope";
    c.captioner_train = false;
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("config hash tracks semantics but not the output directory") {
    test::TempDir tmp("cfg-hash");
    const PipelineConfig base = fixture_config(tmp.file("out-a"));

    PipelineConfig moved = base;
    moved.out_dir = tmp.file("out-b");
    CHECK(base.config_hash() == moved.config_hash());
    CHECK(base.canonical_string() == moved.canonical_string());

    PipelineConfig reseeded = base;
    reseeded.seed = 8;
    CHECK(base.config_hash() != reseeded.config_hash());

    PipelineConfig reweighted = base;
    reweighted.w_mop = 0.25;
    CHECK(base.config_hash() != reweighted.config_hash());

    PipelineConfig ablated = base;
    ablated.disable_tcla = true;
    CHECK(base.config_hash() != ablated.config_hash());

    const std::string hash = base.config_hash();
    CHECK(hash.size() == 16);
    CHECK(hash.find_first_not_of("0123456789abcdef") == std::string::npos);

    const std::string canon = base.canonical_string();
    CHECK(canon.find("canvas_res=64\n") != std::string::npos);
    CHECK(canon.find("seed=7\n") != std::string::npos);
    CHECK(canon.find("image_generator=stub\n") != std::string::npos);
    CHECK(canon.find("annotations=") != std::string::npos);
    CHECK(canon.find("w_sfp=1\n") != std::string::npos);
}

TEST_CASE("ablation switches zero exactly their loss weight") {
    PipelineConfig c;
    c.w_sfp = 0.5;
    c.w_socp = 0.75;
    c.w_mop = 1.25;

    LossWeights w = c.effective_weights();
    CHECK(w.sfp == 0.5);
    CHECK(w.socp == 0.75);
    CHECK(w.mop == 1.25);
    CHECK_FALSE(w.adversarial_enabled);

    c.disable_sfp = true;
    CHECK(c.effective_weights().sfp == 0.0);
    CHECK(c.effective_weights().socp == 0.75);
    c.disable_sfp = false;
    c.disable_socp = true;
    CHECK(c.effective_weights().socp == 0.0);
    c.disable_socp = false;
    c.disable_mop = true;
    CHECK(c.effective_weights().mop == 0.0);
    CHECK(c.effective_weights().sfp == 0.5);

    c.adversarial = true;
    CHECK(c.effective_weights().adversarial_enabled);
}

TEST_CASE("backend construction follows the config") {
    test::TempDir tmp("mk-backends");
    PipelineConfig c = fixture_config(tmp.file("out"));
    PipelineBackends b = make_backends(c);
    REQUIRE(b.fusion != nullptr);
    REQUIRE(b.layout != nullptr);
    REQUIRE(b.embedder != nullptr);
    REQUIRE(b.patches != nullptr);
    REQUIRE(b.image_generator != nullptr);
    CHECK(b.fusion->name() == "template");
    CHECK(b.layout->name() == "heuristic");
    CHECK(b.embedder->name() == "stub-embedder");
    CHECK(b.patches->name() == "stub-patches");
    CHECK(b.image_generator->name() == "stub-compositor");
    CHECK(b.embedder->dim() == 16);

    PipelineConfig bad = c;
    bad.embedder_backend = "nonsense";
    CHECK_THROWS_AS(make_backends(bad), InvalidArgument);
    bad = c;
    bad.patch_backend = "http:h:80/p";
    CHECK_THROWS_AS(make_backends(bad), InvalidArgument);
}

TEST_CASE("manifest write and read round trip") {
    test::TempDir tmp("manifest-rt");
    const std::string path = tmp.file("manifest.jsonl");
    const Manifest m = small_manifest();
    write_manifest(path, m);
    CHECK_FALSE(fs::exists(path + ".tmp"));

    // header carries version, hash, and the pair count
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    const json header = json::parse(first);
    CHECK(header.at("type") == "header");
    CHECK(header.at("version") == 1);
    CHECK(header.at("config_hash") == "0123456789abcdef");
    CHECK(header.at("m") == 2);
    CHECK(header.at("n") == 1);
    CHECK(header.at("pairs") == 2);

    const Manifest r = read_manifest(path);
    CHECK(r.config_hash == m.config_hash);
    CHECK(r.m == 2);
    CHECK(r.n == 1);
    REQUIRE(r.records.size() == 1);
    REQUIRE(r.failures.size() == 1);
    const TripletRecord& a = r.records[0];
    const TripletRecord& e = m.records[0];
    CHECK(a.id == e.id);
    CHECK(a.i == e.i);
    CHECK(a.j == e.j);
    CHECK(a.caption == e.caption);
    CHECK(a.category == e.category);
    CHECK(a.sketch_vector_path == e.sketch_vector_path);
    CHECK(a.sketch_raster_path == e.sketch_raster_path);
    CHECK(a.image_path == e.image_path);
    CHECK(a.layout.x == e.layout.x);
    CHECK(a.layout.y == e.layout.y);
    CHECK(a.layout.w == e.layout.w);
    CHECK(a.layout.h == e.layout.h);
    CHECK(a.layout.backend == "heuristic");
    CHECK(a.layout.seed == 42);
    CHECK(a.fusion_backend == e.fusion_backend);
    CHECK(a.layout_backend == e.layout_backend);
    CHECK(a.image_backend == e.image_backend);
    CHECK(a.seed == e.seed);
    CHECK(r.failures[0].i == 2);
    CHECK(r.failures[0].j == 1);
    CHECK(r.failures[0].reason == "backend exploded");

    // a second write of the re-read manifest is byte-identical
    const std::string again = tmp.file("again.jsonl");
    write_manifest(again, r);
    CHECK(test::read_file(again) == test::read_file(path));
}

TEST_CASE("manifest reader rejects malformed input") {
    test::TempDir tmp("manifest-bad");
    const std::string path = tmp.file("m.jsonl");

    CHECK_THROWS_AS(read_manifest(tmp.file("absent.jsonl")), MissingFile);
    test::write_file(path, "");
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("empty"), InvalidArgument);
    test::write_file(path, R"({"type":"failure","i":1,"j":1,"reason":"x"})" "\n");
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("must start with a header"),
                         InvalidArgument);
    test::write_file(path,
                     R"({"type":"header","version":2,"config_hash":"f","m":1,"n":1,"pairs":1})"
                     "\n");
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("unsupported manifest version"),
                         InvalidArgument);

    const std::string header =
        R"({"type":"header","version":1,"config_hash":"f","m":1,"n":1,"pairs":1})" "\n";
    test::write_file(path, header + "not json\n");
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("invalid JSON"), InvalidArgument);
    test::write_file(path, header + R"({"type":"weird"})" "\n");
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("unknown record type"),
                         InvalidArgument);
    test::write_file(path, header + R"({"type":"triplet","id":"x"})" "\n");
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("manifest line 2"),
                         InvalidArgument);
}

TEST_CASE("annotations load keyed by file name") {
    const auto notes = load_annotations(test::fixture_path("fixture3/sketches/annotations.jsonl"));
    REQUIRE(notes.size() == 3);
    CHECK(notes.at("cat.json").caption == "a cat");
    CHECK(notes.at("cat.json").category == "cat");
    CHECK(notes.at("house.json").caption == "a house");
    CHECK(notes.at("tree.json").category == "tree");

    CHECK(load_annotations("/no/such/file.jsonl").empty());

    test::TempDir tmp("annot-bad");
    const std::string path = tmp.file("a.jsonl");
    test::write_file(path, R"({"caption":"missing file key"})" "\n");
    CHECK_THROWS_AS(load_annotations(path), InvalidArgument);
    test::write_file(path, "not json\n");
    CHECK_THROWS_AS(load_annotations(path), InvalidArgument);

    // category is optional, blank lines are skipped
    test::write_file(path, "\n" R"({"file":"x.json","caption":"an x"})" "\n\n");
    const auto loose = load_annotations(path);
    REQUIRE(loose.size() == 1);
    CHECK(loose.at("x.json").caption == "an x");
    CHECK(loose.at("x.json").category.empty());
}

TEST_CASE("sketch listing is sorted, filtered, and truncatable") {
    const std::string dir = test::fixture_path("fixture3/sketches");
    const auto all = list_sketch_files(dir);
    REQUIRE(all.size() == 3);
    CHECK(fs::path(all[0]).filename() == "cat.json");
    CHECK(fs::path(all[1]).filename() == "house.json");
    CHECK(fs::path(all[2]).filename() == "tree.json");

    const auto two = list_sketch_files(dir, 2);
    REQUIRE(two.size() == 2);
    CHECK(fs::path(two[1]).filename() == "house.json");

    test::TempDir tmp("listing");
    test::write_file(tmp.file("b.json"), "{}");
    test::write_file(tmp.file("a.json"), "{}");
    test::write_file(tmp.file("notes.txt"), "ignored");
    const auto local = list_sketch_files(tmp.path());
    REQUIRE(local.size() == 2);
    CHECK(fs::path(local[0]).filename() == "a.json");
    CHECK(fs::path(local[1]).filename() == "b.json");
}

TEST_CASE("the stub classifier emits a deterministic distribution") {
    const RasterImage img = test::gradient_image(32, 32, 3);
    const auto p = stub_classifier_probs(img, 5, 11);
    REQUIRE(p.size() == 5);
    double sum = 0.0;
    for (double v : p) {
        CHECK(v >= 0.0);
        sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

    CHECK(stub_classifier_probs(img, 5, 11) == p);
    CHECK(stub_classifier_probs(img, 5, 12) != p);
    CHECK(stub_classifier_probs(test::gradient_image(32, 32, 4), 5, 11) != p);

    // grayscale input takes the 1-channel path and still normalizes
    const auto q = stub_classifier_probs(img.to_gray(), 3, 11);
    REQUIRE(q.size() == 3);
    double qsum = 0.0;
    for (double v : q) qsum += v;
    CHECK(qsum == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(stub_classifier_probs(img, 1, 0), InvalidArgument);
}

TEST_CASE("a three-by-four run emits twelve valid triplets") {
    const SharedRun& run = shared_run();
    const Manifest& m = run.manifest;

    CHECK(m.m == 3);
    CHECK(m.n == 4);
    CHECK(m.config_hash == run.config.config_hash());
    REQUIRE(m.records.size() == 12);
    CHECK(m.failures.empty());

    const std::vector<std::string> categories = {"cat", "house", "tree"};
    const std::vector<std::string> scene_words = {"bedroom", "park", "street", "kitchen"};
    int k = 0;
    for (int i = 1; i <= 3; ++i) {
        for (int j = 1; j <= 4; ++j, ++k) {
            const TripletRecord& r = m.records[static_cast<std::size_t>(k)];
            char want_id[32];
            std::snprintf(want_id, sizeof(want_id), "t_%04d_%04d", i, j);
            CHECK(r.id == want_id);
            CHECK(r.i == i);
            CHECK(r.j == j);
            CHECK_FALSE(r.caption.empty());
            CHECK(r.caption.find(scene_words[static_cast<std::size_t>(j - 1)]) !=
                  std::string::npos);
            CHECK(r.category == categories[static_cast<std::size_t>(i - 1)]);
            CHECK(r.layout.valid());
            CHECK(r.fusion_backend == "template");
            CHECK(r.layout_backend == "heuristic");
            CHECK(r.image_backend == "stub-compositor");
            CHECK(r.seed == derive_seed(7, static_cast<std::uint64_t>(i),
                                        static_cast<std::uint64_t>(j)));

            const fs::path out(run.config.out_dir);
            REQUIRE(fs::exists(out / r.sketch_vector_path));
            REQUIRE(fs::exists(out / r.sketch_raster_path));
            REQUIRE(fs::exists(out / r.image_path));
            const VectorSketch adapted = load_sketch((out / r.sketch_vector_path).string());
            CHECK_FALSE(adapted.moves.empty());
            const RasterImage image = read_png((out / r.image_path).string());
            CHECK(image.width == 64);
            CHECK(image.height == 64);
            CHECK(image.channels == 3);
            const RasterImage scene = read_png((out / r.sketch_raster_path).string());
            CHECK(scene.width == 64);
            CHECK(scene.height == 64);
            CHECK(scene.channels == 1);
        }
    }

    CHECK(fs::exists(fs::path(run.config.out_dir) / "model.ckpt"));
    const std::string log = test::read_file(
        (fs::path(run.config.out_dir) / "generator_log.csv").string());
    CHECK(log.rfind("epoch,sfp,socp,mop,total\n", 0) == 0);

    const ValidationReport report = validate_manifest(run.manifest_path());
    CHECK(report.records_checked == 12);
    CHECK(report.violations.empty());
}

TEST_CASE("a fresh rerun reproduces the manifest byte for byte") {
    const SharedRun& run = shared_run();
    test::TempDir tmp("pipeline-rerun");
    PipelineConfig other = fixture_config(tmp.file("out"));
    const Manifest m = run_pipeline(other);
    CHECK(m.records.size() == 12);

    const std::string a = test::read_file(run.manifest_path());
    const std::string b = test::read_file(tmp.file("out") + "/manifest.jsonl");
    CHECK(a == b);
    CHECK_FALSE(a.empty());
}

TEST_CASE("resuming keeps existing records and fills in the rest") {
    const SharedRun& run = shared_run();
    test::TempDir tmp("pipeline-resume");
    const std::string out = tmp.file("out");
    fs::copy(run.config.out_dir, out, fs::copy_options::recursive);

    // keep the first five records; the rerun must restore the other seven
    Manifest partial = read_manifest(out + "/manifest.jsonl");
    partial.records.resize(5);
    write_manifest(out + "/manifest.jsonl", partial);
    const std::string ckpt_before = test::read_file(out + "/model.ckpt");

    PipelineConfig resumed = fixture_config(out);
    const Manifest full = run_pipeline(resumed);
    CHECK(full.records.size() == 12);
    CHECK(test::read_file(out + "/manifest.jsonl") == test::read_file(run.manifest_path()));
    CHECK(test::read_file(out + "/model.ckpt") == ckpt_before);
}

TEST_CASE("resuming against a different config or corpus is refused") {
    const SharedRun& run = shared_run();
    test::TempDir tmp("pipeline-mismatch");
    const std::string out = tmp.file("out");
    fs::copy(run.config.out_dir, out, fs::copy_options::recursive);

    PipelineConfig reseeded = fixture_config(out);
    reseeded.seed = 8;
    CHECK_THROWS_WITH_AS(run_pipeline(reseeded), doctest::Contains("different config"),
                         InvalidArgument);

    // same config hash but a manifest claiming different counts
    Manifest edited = read_manifest(out + "/manifest.jsonl");
    edited.m = 2;
    write_manifest(out + "/manifest.jsonl", edited);
    PipelineConfig same = fixture_config(out);
    CHECK_THROWS_WITH_AS(run_pipeline(same), doctest::Contains("different counts"),
                         InvalidArgument);
}

TEST_CASE("disabling the layout stage pins every box to the full canvas") {
    test::TempDir tmp("pipeline-tcla");
    PipelineConfig c = fixture_config(tmp.file("out"));
    c.disable_tcla = true;
    c.generator_train = false;
    c.max_sketches = 1;
    c.max_captions = 2;
    const Manifest m = run_pipeline(c);
    REQUIRE(m.records.size() == 2);
    for (const TripletRecord& r : m.records) {
        CHECK(r.layout.x == 0.0);
        CHECK(r.layout.y == 0.0);
        CHECK(r.layout.w == 1.0);
        CHECK(r.layout.h == 1.0);
        CHECK(r.layout_backend == "full-canvas");
    }
}

TEST_CASE("per-pair backend failures are recorded without stopping the run") {
    test::TempDir tmp("pipeline-flaky");
    PipelineConfig c = fixture_config(tmp.file("out"));
    c.generator_train = false;
    c.max_sketches = 2;
    c.canvas_res = 32;

    PipelineBackends backends = make_backends(c);
    FlakyImageBackend flaky("park");
    backends.image_generator = &flaky;

    const Manifest m = run_pipeline(c, backends);
    CHECK(m.records.size() == 6);  // 2 sketches x 4 captions, minus the "park" column
    REQUIRE(m.failures.size() == 2);
    for (const PairFailure& f : m.failures) {
        CHECK(f.j == 2);
        CHECK(f.reason.find("park") != std::string::npos);
    }
    for (const TripletRecord& r : m.records) {
        CHECK(r.j != 2);
        CHECK(r.image_backend == "flaky");
    }

    // failures count as covered pairs, so the manifest still validates
    const ValidationReport report = validate_manifest(tmp.file("out") + "/manifest.jsonl");
    CHECK(report.records_checked == 6);
    CHECK(report.violations.empty());
}

TEST_CASE("manifest validation flags structural violations") {
    test::TempDir tmp("validate");

    SUBCASE("missing manifest") {
        const ValidationReport r = validate_manifest(tmp.file("absent.jsonl"));
        CHECK(has_violation(r, "manifest not found"));
    }

    SUBCASE("valid single-record manifest") {
        write_valid_single(tmp.path());
        const ValidationReport r = validate_manifest(tmp.file("manifest.jsonl"));
        CHECK(r.ok());
        CHECK(r.records_checked == 1);
    }

    SUBCASE("missing artifact file") {
        write_valid_single(tmp.path());
        fs::remove(tmp.file("images/a.png"));
        const ValidationReport r = validate_manifest(tmp.file("manifest.jsonl"));
        CHECK(has_violation(r, "missing file images/a.png"));
    }

    SUBCASE("duplicate record") {
        write_valid_single(tmp.path());
        const std::string body = test::read_file(tmp.file("manifest.jsonl"));
        const std::size_t nl = body.find('\n');
        test::write_file(tmp.file("manifest.jsonl"), body + body.substr(nl + 1));
        const ValidationReport r = validate_manifest(tmp.file("manifest.jsonl"));
        CHECK(has_violation(r, "duplicate id t_0001_0001"));
        CHECK(has_violation(r, "covered 2 times"));
    }

    SUBCASE("uncovered pair") {
        write_valid_single(tmp.path(), {}, false);
        std::string body = test::read_file(tmp.file("manifest.jsonl"));
        const ValidationReport r = validate_manifest(tmp.file("manifest.jsonl"));
        CHECK(has_violation(r, "(1, 1) covered 0 times"));
    }

    SUBCASE("record and failure problems") {
        write_valid_single(
            tmp.path(),
            {R"({"type":"failure","i":1,"j":1,"reason":""})",
             R"({"type":"failure","i":5,"j":1,"reason":"late"})",
             R"({"type":"mystery"})", "not json", " ",
             R"({"type":"triplet","id":"t_0009_0009","i":9,"j":9,"caption":"","category":"",)"
             R"("sketch_vector_path":"vectors/a.json","sketch_raster_path":"sketches/a.png",)"
             R"("image_path":"images/a.png","layout":{"x":0.5,"y":0.5,"w":0.01,"h":0.9},)"
             R"("backends":{"fusion":"f","layout":"l","image":"i"},"seed":1})"});
        const ValidationReport r = validate_manifest(tmp.file("manifest.jsonl"));
        CHECK(has_violation(r, "failure without reason"));
        CHECK(has_violation(r, "failure provenance out of bounds"));
        CHECK(has_violation(r, "unknown record type 'mystery'"));
        CHECK(has_violation(r, "invalid JSON"));
        CHECK(has_violation(r, "blank line"));
        CHECK(has_violation(r, "empty caption"));
        CHECK(has_violation(r, "invalid layout box"));
        CHECK(has_violation(r, "out of bounds"));
        // the duplicate failure record double-covers (1, 1)
        CHECK(has_violation(r, "(1, 1) covered 2 times"));
    }

    SUBCASE("header problems") {
        test::write_file(tmp.file("m1.jsonl"), R"({"type":"triplet","id":"x"})" "\n");
        CHECK(has_violation(validate_manifest(tmp.file("m1.jsonl")),
                            "first line is not a manifest header"));
        test::write_file(
            tmp.file("m2.jsonl"),
            R"({"type":"header","version":2,"config_hash":"f","m":1,"n":1,"pairs":1})" "\n");
        CHECK(has_violation(validate_manifest(tmp.file("m2.jsonl")),
                            "unsupported manifest version"));
        test::write_file(
            tmp.file("m3.jsonl"),
            R"({"type":"header","version":1,"config_hash":"f","m":1,"n":1,"pairs":7})" "\n");
        CHECK(has_violation(validate_manifest(tmp.file("m3.jsonl")), "pairs field disagrees"));
        test::write_file(
            tmp.file("m4.jsonl"),
            R"({"type":"header","version":1,"config_hash":"f","m":0,"n":1,"pairs":0})" "\n");
        CHECK(has_violation(validate_manifest(tmp.file("m4.jsonl")), "non-positive m or n"));
        test::write_file(
            tmp.file("m5.jsonl"),
            R"({"type":"header","version":1,"config_hash":"","m":1,"n":1,"pairs":1})" "\n");
        CHECK(has_violation(validate_manifest(tmp.file("m5.jsonl")), "missing config_hash"));
        test::write_file(tmp.file("m6.jsonl"), "");
        CHECK(has_violation(validate_manifest(tmp.file("m6.jsonl")), "manifest is empty"));
    }
}

TEST_CASE("evaluation scores a finished run deterministically") {
    const SharedRun& run = shared_run();
    const EvalResult a = evaluate_manifest(run.manifest_path(), run.config);
    CHECK(a.records == 12);
    CHECK(std::isfinite(a.fid));
    CHECK(a.fid >= 0.0);
    CHECK(a.is_mean >= 1.0 - 1e-9);
    CHECK(a.is_mean <= run.config.eval_classes + 1e-9);
    CHECK(a.is_stddev >= 0.0);

    const EvalResult b = evaluate_manifest(run.manifest_path(), run.config);
    CHECK(a.fid == b.fid);
    CHECK(a.is_mean == b.is_mean);
    CHECK(a.is_stddev == b.is_stddev);

    PipelineConfig too_many_splits = run.config;
    too_many_splits.eval_splits = 13;
    CHECK_THROWS_AS(evaluate_manifest(run.manifest_path(), too_many_splits), TooFewSamples);

    test::TempDir tmp("eval-small");
    Manifest single = small_manifest();
    single.failures.clear();
    single.m = 1;
    write_manifest(tmp.file("manifest.jsonl"), single);
    CHECK_THROWS_AS(evaluate_manifest(tmp.file("manifest.jsonl"), run.config), TooFewSamples);
}
