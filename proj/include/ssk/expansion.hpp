#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ssk/common.hpp"

// Semantic expansion: fuse each object caption into each scene caption,
// producing the full product set of scene descriptions with provenance
// indices back into both caption sets.
namespace ssk {

enum class CaptionRole { SketchCaptions, ImageCaptions };

struct CaptionSet {
    std::vector<std::string> captions;  // dense, 1-based provenance index = position + 1
    CaptionRole role = CaptionRole::SketchCaptions;
    int skipped_blank_lines = 0;

    int size() const { return static_cast<int>(captions.size()); }
};

struct SceneDescription {
    std::string text;
    int i = 0;  // 1-based index into the sketch-caption set
    int j = 0;  // 1-based index into the image-caption set
    std::string backend;
};

class FusionBackend {
  public:
    virtual ~FusionBackend() = default;
    virtual std::string name() const = 0;
    // Merge the object caption into the scene caption; one sentence out.
    virtual std::string fuse(const std::string& object_caption,
                             const std::string& scene_caption) = 0;
};

// Deterministic grammar: strip/normalize the leading article of the object
// phrase and join as "<object> in <scene>"; if the scene text already
// mentions the object phrase, the scene text is returned as-is so the object
// is mentioned exactly once.
class TemplateFusionBackend : public FusionBackend {
  public:
    std::string name() const override { return "template"; }
    std::string fuse(const std::string& object_caption, const std::string& scene_caption) override;
};

// Collapse whitespace runs, trim ends, lowercase.
std::string normalize_caption_text(const std::string& text);

// Object phrase of a caption: normalized text minus any leading article.
std::string object_phrase(const std::string& caption);

// Whole-word, case-insensitive phrase search (used by the dedup rule).
bool contains_phrase(const std::string& text, const std::string& phrase);

// One caption per line; JSONL records with a "caption" field also accepted.
// Blank lines are skipped and counted.
CaptionSet ingest_caption_corpus(const std::string& path, CaptionRole role);

SceneDescription fuse(const std::string& object_caption, const std::string& scene_caption,
                      FusionBackend& backend);

// Full M×N product in lexicographic (i, j) order.
std::vector<SceneDescription> expand_all(const CaptionSet& sketch_captions,
                                         const CaptionSet& image_captions,
                                         FusionBackend& backend);

}  // namespace ssk
