#pragma once

// Backends for the two foundation-model roles (chat VLM, text-prompted
// segmenter) plus their deterministic scripted stand-ins.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vasa/candidate.hpp"
#include "vasa/error.hpp"
#include "vasa/image.hpp"
#include "vasa/protocol.hpp"
#include "vasa/rle.hpp"

namespace vasa {

inline constexpr std::size_t kDefaultCandidateCap = 8;

class SegmenterBackend {
 public:
  virtual ~SegmenterBackend() = default;
  /// Raw proposals for one phrase. Ids and ordering are normalized by
  /// segment_phrase(); implementations only need to fill score and mask.
  virtual std::vector<CandidateMask> segment(const Image& image, std::string_view phrase) = 0;
};

class VlmBackend {
 public:
  virtual ~VlmBackend() = default;
  virtual std::string chat(const MessageBundle& messages) = 0;
};

/// Calls the backend, then sorts by score (descending, stable), truncates to
/// `cap` and assigns ids 1..n. An empty result means "concept not found".
inline std::vector<CandidateMask> segment_phrase(SegmenterBackend& backend, const Image& image,
                                                 std::string_view phrase, std::size_t cap = kDefaultCandidateCap) {
  const auto trimmed = detail::trim(phrase);
  if (trimmed.empty()) throw Error(Errc::InvalidArgument, "segment_phrase needs a non-empty phrase");
  auto candidates = backend.segment(image, trimmed);
  for (const auto& c : candidates) {
    if (!(c.score >= 0.0 && c.score <= 1.0)) {
      throw Error(Errc::MalformedBackendReply, "candidate score outside [0,1]");
    }
    if (!image.matches(c.mask)) {
      throw Error(Errc::MalformedBackendReply, "candidate mask " + std::to_string(c.mask.width()) + "x" +
                                                   std::to_string(c.mask.height()) + " does not match image " +
                                                   std::to_string(image.width()) + "x" +
                                                   std::to_string(image.height()));
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const CandidateMask& a, const CandidateMask& b) { return a.score > b.score; });
  if (candidates.size() > cap) candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(cap), candidates.end());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    candidates[i].candidate_id = static_cast<int>(i + 1);
    candidates[i].source_phrase = std::string(trimmed);
  }
  return candidates;
}

inline std::string chat(VlmBackend& backend, const MessageBundle& messages) {
  if (messages.empty()) throw Error(Errc::InvalidArgument, "chat needs at least one message");
  return backend.chat(messages);
}

// ---------------------------------------------------------------------------
// Scripted VLM
// ---------------------------------------------------------------------------

struct ScriptTurn {
  std::string text;
  bool transport_failure = false;  // simulates BackendUnavailable on this turn

  static ScriptTurn reply(std::string t) { return {std::move(t), false}; }
  static ScriptTurn unavailable() { return {{}, true}; }
};

using Script = std::vector<ScriptTurn>;

/// Replays a fixed script keyed by turn index. Thread-safe; the cursor is
/// shared, so give each inference session its own instance.
class ScriptedVlm final : public VlmBackend {
 public:
  explicit ScriptedVlm(Script script) : script_(std::move(script)) {}

  std::string chat(const MessageBundle& messages) override {
    std::lock_guard lock(mu_);
    if (cursor_ >= script_.size()) {
      throw Error(Errc::ScriptExhausted, "script has " + std::to_string(script_.size()) + " turns, turn " +
                                             std::to_string(cursor_) + " requested");
    }
    received_.push_back(messages);
    const ScriptTurn& turn = script_[cursor_++];
    if (turn.transport_failure) {
      throw Error(Errc::BackendUnavailable, "scripted transport failure at turn " + std::to_string(cursor_ - 1));
    }
    return turn.text;
  }

  std::size_t turns_used() const {
    std::lock_guard lock(mu_);
    return cursor_;
  }

  std::vector<MessageBundle> received() const {
    std::lock_guard lock(mu_);
    return received_;
  }

 private:
  mutable std::mutex mu_;
  Script script_;
  std::size_t cursor_ = 0;
  std::vector<MessageBundle> received_;
};

inline Script script_from_json(const nlohmann::json& j) {
  const nlohmann::json* turns = &j;
  if (j.is_object() && j.contains("turns")) turns = &j.at("turns");
  if (!turns->is_array()) throw Error(Errc::MalformedManifest, "script must be an array of turns");
  Script script;
  for (const auto& t : *turns) {
    if (t.is_string()) {
      script.push_back(ScriptTurn::reply(t.get<std::string>()));
    } else if (t.is_object() && t.value("error", "") == "unavailable") {
      script.push_back(ScriptTurn::unavailable());
    } else if (t.is_object() && t.contains("text") && t.at("text").is_string()) {
      script.push_back(ScriptTurn::reply(t.at("text").get<std::string>()));
    } else {
      throw Error(Errc::MalformedManifest, "script turn must be a string, {\"text\":...} or {\"error\":\"unavailable\"}");
    }
  }
  return script;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path, Errc on_error = Errc::MalformedManifest) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(on_error, path.string() + " is not valid JSON");
  return j;
}

/// Scripts keyed per benchmark item. Lookup order: "<item>:<field>",
/// "<item>", then "*". A bare array or {"turns": [...]} file becomes "*".
class ScriptBook {
 public:
  ScriptBook() = default;
  explicit ScriptBook(Script shared) { scripts_["*"] = std::move(shared); }

  void add(std::string key, Script script) { scripts_[std::move(key)] = std::move(script); }

  const Script* find(std::string_view item_id, std::string_view field) const {
    for (const auto& key : {std::string(item_id) + ":" + std::string(field), std::string(item_id), std::string("*")}) {
      if (auto it = scripts_.find(key); it != scripts_.end()) return &it->second;
    }
    return nullptr;
  }

  static ScriptBook from_json(const nlohmann::json& j) {
    if (j.is_array() || (j.is_object() && j.contains("turns"))) return ScriptBook(script_from_json(j));
    if (!j.is_object() || !j.contains("scripts") || !j.at("scripts").is_object()) {
      throw Error(Errc::MalformedManifest, "script book needs a \"scripts\" object");
    }
    ScriptBook book;
    for (const auto& [key, value] : j.at("scripts").items()) book.add(key, script_from_json(value));
    return book;
  }

  static ScriptBook load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

 private:
  std::map<std::string, Script, std::less<>> scripts_;
};

// ---------------------------------------------------------------------------
// Fixture segmenter
// ---------------------------------------------------------------------------

inline std::string normalize_phrase(std::string_view phrase) {
  std::string out;
  bool space = false;
  for (char ch : detail::trim(phrase)) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  return out;
}

/// Serves (image_id, phrase) -> masks from a manifest; unknown keys yield no
/// candidates. Immutable after construction, so safe to share across sessions.
///
/// Manifest:
///   {"images": {"img1": {"width": W, "height": H,
///                        "phrases": {"cat head": [{"score": 0.9, "rle": {...}}]}}}}
class FixtureSegmenter final : public SegmenterBackend {
 public:
  struct Entry {
    double score;
    RasterMask mask;
  };
  struct ImageEntry {
    int width;
    int height;
    std::map<std::string, std::vector<Entry>, std::less<>> phrases;
  };

  FixtureSegmenter() = default;

  void add(const std::string& image_id, int width, int height, std::string_view phrase, double score,
           RasterMask mask) {
    auto& img = images_.try_emplace(image_id, ImageEntry{width, height, {}}).first->second;
    if (mask.width() != img.width || mask.height() != img.height) {
      throw Error(Errc::MalformedManifest, "fixture mask for '" + image_id + "' has wrong dimensions");
    }
    img.phrases[normalize_phrase(phrase)].push_back(Entry{score, std::move(mask)});
  }

  std::vector<CandidateMask> segment(const Image& image, std::string_view phrase) override {
    auto it = images_.find(image.id);
    if (it == images_.end()) return {};
    const ImageEntry& entry = it->second;
    if (entry.width != image.width() || entry.height != image.height()) {
      throw Error(Errc::MalformedBackendReply, "fixture image '" + image.id + "' is " + std::to_string(entry.width) +
                                                   "x" + std::to_string(entry.height) + ", query image differs");
    }
    auto p = entry.phrases.find(normalize_phrase(phrase));
    if (p == entry.phrases.end()) return {};
    std::vector<CandidateMask> out;
    for (const auto& e : p->second) out.push_back(CandidateMask{0, std::string(phrase), e.score, e.mask});
    return out;
  }

  const std::map<std::string, ImageEntry, std::less<>>& images() const { return images_; }

  nlohmann::json to_json() const {
    nlohmann::json images = nlohmann::json::object();
    for (const auto& [id, img] : images_) {
      nlohmann::json phrases = nlohmann::json::object();
      for (const auto& [phrase, entries] : img.phrases) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& e : entries) list.push_back({{"score", e.score}, {"rle", rle_to_json(rle_encode(e.mask))}});
        phrases[phrase] = std::move(list);
      }
      images[id] = {{"width", img.width}, {"height", img.height}, {"phrases", std::move(phrases)}};
    }
    return {{"images", std::move(images)}};
  }

  static FixtureSegmenter from_json(const nlohmann::json& j) {
    FixtureSegmenter seg;
    if (!j.is_object()) throw Error(Errc::MalformedManifest, "fixture manifest must be a JSON object");
    if (!j.contains("images")) return seg;
    const auto& images = j.at("images");
    if (!images.is_object()) throw Error(Errc::MalformedManifest, "\"images\" must be an object");
    for (const auto& [id, img] : images.items()) {
      try {
        const int w = img.at("width").get<int>();
        const int h = img.at("height").get<int>();
        if (w <= 0 || h <= 0) throw Error(Errc::MalformedManifest, "non-positive size");
        seg.images_.try_emplace(id, ImageEntry{w, h, {}});
        if (!img.contains("phrases")) continue;
        for (const auto& [phrase, list] : img.at("phrases").items()) {
          if (!list.is_array()) throw Error(Errc::MalformedManifest, "phrase entry must be an array");
          for (const auto& e : list) {
            const double score = e.value("score", 1.0);
            if (!(score >= 0.0 && score <= 1.0)) throw Error(Errc::MalformedManifest, "score outside [0,1]");
            const Rle rle = rle_from_json(e.at("rle"));
            seg.add(id, w, h, phrase, score, rle_decode(rle, w, h));
          }
        }
      } catch (const Error& e) {
        throw Error(Errc::MalformedManifest, "image '" + id + "': " + e.what());
      } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::MalformedManifest, "image '" + id + "': " + e.what());
      }
    }
    return seg;
  }

 private:
  std::map<std::string, ImageEntry, std::less<>> images_;
};

inline FixtureSegmenter load_fixture_oracle(const std::filesystem::path& path) {
  return FixtureSegmenter::from_json(read_json_file(path));
}

}  // namespace vasa
