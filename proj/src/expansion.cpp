#include "ssk/expansion.hpp"

#include <cctype>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace ssk {

std::string normalize_caption_text(const std::string& text) {
    std::string out;
    bool in_space = true;  // swallows leading whitespace
    for (char ch : text) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isspace(u)) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out.push_back(' ');
        in_space = false;
        out.push_back(static_cast<char>(std::tolower(u)));
    }
    return out;
}

namespace {

bool starts_with_word(const std::string& text, const std::string& word) {
    if (text.size() < word.size()) return false;
    if (text.compare(0, word.size(), word) != 0) return false;
    return text.size() == word.size() || text[word.size()] == ' ';
}

std::string strip_trailing_period(std::string text) {
    while (!text.empty() && (text.back() == '.' || text.back() == ' ')) text.pop_back();
    return text;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string with_article(const std::string& phrase) {
    if (phrase.empty()) return phrase;
    const char first = phrase.front();
    const bool vowel = first == 'a' || first == 'e' || first == 'i' || first == 'o' || first == 'u';
    return (vowel ? "an " : "a ") + phrase;
}

}  // namespace

std::string object_phrase(const std::string& caption) {
    std::string text = strip_trailing_period(normalize_caption_text(caption));
    for (const char* article : {"a", "an", "the"}) {
        if (starts_with_word(text, article)) {
            text.erase(0, std::string(article).size());
            while (!text.empty() && text.front() == ' ') text.erase(text.begin());
            break;
        }
    }
    return text;
}

bool contains_phrase(const std::string& text, const std::string& phrase) {
    if (phrase.empty()) return false;
    const std::string hay = normalize_caption_text(text);
    const std::string needle = normalize_caption_text(phrase);
    std::size_t pos = 0;
    while ((pos = hay.find(needle, pos)) != std::string::npos) {
        const bool left_ok = pos == 0 || !is_word_char(hay[pos - 1]);
        const std::size_t end = pos + needle.size();
        const bool right_ok = end == hay.size() || !is_word_char(hay[end]);
        if (left_ok && right_ok) return true;
        ++pos;
    }
    return false;
}

std::string TemplateFusionBackend::fuse(const std::string& object_caption,
                                        const std::string& scene_caption) {
    const std::string object = object_phrase(object_caption);
    const std::string scene = strip_trailing_period(normalize_caption_text(scene_caption));
    if (object.empty()) throw EmptyCaption("fusion: object caption has no content words");
    if (scene.empty()) throw EmptyCaption("fusion: scene caption has no content words");
    if (contains_phrase(scene, object)) return scene;
    return with_article(object) + " in " + scene;
}

CaptionSet ingest_caption_corpus(const std::string& path, CaptionRole role) {
    if (!std::filesystem::exists(path)) throw MissingFile("caption corpus not found: " + path);
    std::ifstream in(path);
    if (!in) throw MissingFile("caption corpus unreadable: " + path);

    CaptionSet set;
    set.role = role;
    std::string line;
    while (std::getline(in, line)) {
        std::string caption = line;
        if (!line.empty() && line.front() == '{') {
            const auto record = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
            if (record.is_object() && record.contains("caption") && record["caption"].is_string()) {
                caption = record["caption"].get<std::string>();
            }
        }
        caption = normalize_caption_text(caption);
        if (caption.empty()) {
            ++set.skipped_blank_lines;
            continue;
        }
        set.captions.push_back(std::move(caption));
    }
    if (set.captions.empty()) throw EmptyCorpus("caption corpus has no usable lines: " + path);
    return set;
}

SceneDescription fuse(const std::string& object_caption, const std::string& scene_caption,
                      FusionBackend& backend) {
    if (normalize_caption_text(object_caption).empty()) {
        throw EmptyCaption("fuse: empty object caption");
    }
    if (normalize_caption_text(scene_caption).empty()) {
        throw EmptyCaption("fuse: empty scene caption");
    }
    SceneDescription out;
    out.text = backend.fuse(object_caption, scene_caption);
    out.backend = backend.name();
    if (out.text.empty()) throw BackendFailure("fusion backend returned empty text");
    return out;
}

std::vector<SceneDescription> expand_all(const CaptionSet& sketch_captions,
                                         const CaptionSet& image_captions,
                                         FusionBackend& backend) {
    if (sketch_captions.size() == 0 || image_captions.size() == 0) {
        throw EmptyCorpus("expand_all: both caption sets must be non-empty");
    }
    std::vector<SceneDescription> out;
    out.reserve(static_cast<std::size_t>(sketch_captions.size()) * image_captions.size());
    for (int i = 0; i < sketch_captions.size(); ++i) {
        for (int j = 0; j < image_captions.size(); ++j) {
            try {
                SceneDescription d = fuse(sketch_captions.captions[static_cast<std::size_t>(i)],
                                          image_captions.captions[static_cast<std::size_t>(j)],
                                          backend);
                d.i = i + 1;
                d.j = j + 1;
                out.push_back(std::move(d));
            } catch (const std::runtime_error& e) {
                throw BackendFailure("expansion failed at pair (" + std::to_string(i + 1) + ", " +
                                     std::to_string(j + 1) + "): " + e.what());
            }
        }
    }
    return out;
}

}  // namespace ssk
