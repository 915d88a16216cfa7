#pragma once

// Synthetic scenes with exact part masks: a cat (head, ears, eyes, body) and
// a mug (body, handle, logo). Used by make_demo, the tests and the README
// walkthrough.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vasa/bench.hpp"
#include "vasa/clients.hpp"
#include "vasa/image.hpp"
#include "vasa/mask.hpp"
#include "vasa/protocol.hpp"
#include "vasa/rle.hpp"

namespace vasa::demo {

namespace shapes {

inline RasterMask ellipse(int w, int h, int cr, int cc, int ry, int rx) {
  RasterMask m(w, h);
  const long long a = static_cast<long long>(ry) * ry;
  const long long b = static_cast<long long>(rx) * rx;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const long long dr = r - cr;
      const long long dc = c - cc;
      if (dr * dr * b + dc * dc * a <= a * b) m.set(r, c, true);
    }
  }
  return m;
}

inline RasterMask rect(int w, int h, int r0, int c0, int r1, int c1) {
  RasterMask m(w, h);
  for (int r = std::max(r0, 0); r <= std::min(r1, h - 1); ++r) {
    for (int c = std::max(c0, 0); c <= std::min(c1, w - 1); ++c) m.set(r, c, true);
  }
  return m;
}

// Vertices as (row, col).
inline RasterMask triangle(int w, int h, std::array<std::pair<int, int>, 3> v) {
  RasterMask m(w, h);
  auto cross = [](std::pair<int, int> a, std::pair<int, int> b, int r, int c) {
    return static_cast<long long>(b.first - a.first) * (c - a.second) -
           static_cast<long long>(b.second - a.second) * (r - a.first);
  };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto d0 = cross(v[0], v[1], r, c);
      const auto d1 = cross(v[1], v[2], r, c);
      const auto d2 = cross(v[2], v[0], r, c);
      const bool neg = d0 < 0 || d1 < 0 || d2 < 0;
      const bool pos = d0 > 0 || d1 > 0 || d2 > 0;
      if (!(neg && pos)) m.set(r, c, true);
    }
  }
  return m;
}

}  // namespace shapes

inline void paint(Image& img, const RasterMask& m, Rgb color) {
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) {
      if (m.get(r, c)) img.at(r, c) = color;
    }
  }
}

inline Image gradient(int w, int h, std::string id) {
  Image img(w, h);
  img.id = std::move(id);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      img.at(r, c) = Rgb{static_cast<std::uint8_t>(40 + c % 60), static_cast<std::uint8_t>(90 + r / 2),
                         static_cast<std::uint8_t>(60 + (r + c) % 40)};
    }
  }
  return img;
}

struct CatScene {
  Image image = gradient(96, 80, "cat");
  RasterMask head{96, 80};  // what a segmenter calls "cat head": ellipse plus ears
  RasterMask left_ear{96, 80}, right_ear{96, 80};
  RasterMask left_eye{96, 80}, right_eye{96, 80};
  RasterMask body{96, 80};

  RasterMask ears() const { return unite(left_ear, right_ear); }
  RasterMask eyes() const { return unite(left_eye, right_eye); }
  RasterMask bare_head() const { return subtract(head, unite(ears(), eyes())); }
};

inline CatScene make_cat() {
  CatScene s;
  const int w = 96, h = 80;
  const RasterMask face = shapes::ellipse(w, h, 48, 48, 22, 26);
  s.left_ear = shapes::triangle(w, h, {{{10, 24}, {38, 22}, {34, 42}}});
  s.right_ear = shapes::triangle(w, h, {{{10, 72}, {38, 74}, {34, 54}}});
  s.head = unite(face, s.ears());
  s.left_eye = shapes::ellipse(w, h, 44, 38, 4, 4);
  s.right_eye = shapes::ellipse(w, h, 44, 58, 4, 4);
  s.body = subtract(shapes::rect(w, h, 66, 18, 79, 78), s.head);
  paint(s.image, s.body, {190, 130, 75});
  paint(s.image, face, {205, 145, 85});
  paint(s.image, s.ears(), {165, 105, 55});
  paint(s.image, s.eyes(), {25, 30, 25});
  return s;
}

struct MugScene {
  Image image = gradient(80, 64, "mug");
  RasterMask body{80, 64};  // includes the logo
  RasterMask handle{80, 64};
  RasterMask logo{80, 64};
};

inline MugScene make_mug() {
  MugScene s;
  const int w = 80, h = 64;
  s.body = shapes::rect(w, h, 16, 16, 55, 47);
  s.handle = subtract(shapes::rect(w, h, 24, 48, 47, 63), shapes::rect(w, h, 30, 48, 41, 57));
  s.logo = shapes::ellipse(w, h, 34, 31, 5, 5);
  paint(s.image, s.body, {230, 230, 225});
  paint(s.image, s.handle, {200, 200, 195});
  paint(s.image, s.logo, {200, 40, 40});
  return s;
}

inline FixtureSegmenter make_fixtures(const CatScene& cat, const MugScene& mug) {
  FixtureSegmenter f;
  auto add = [&f](const Image& img, const char* phrase, double score, const RasterMask& m) {
    f.add(img.id, img.width(), img.height(), phrase, score, m);
  };
  add(cat.image, "cat head", 0.93, cat.head);
  add(cat.image, "cat head", 0.35, cat.body);
  add(cat.image, "cat ears", 0.88, cat.left_ear);
  add(cat.image, "cat ears", 0.86, cat.right_ear);
  add(cat.image, "cat eyes", 0.91, cat.left_eye);
  add(cat.image, "cat eyes", 0.90, cat.right_eye);
  add(cat.image, "cat body", 0.80, cat.body);
  add(cat.image, "cat", 0.95, unite(cat.head, cat.body));
  add(mug.image, "mug", 0.94, unite(mug.body, mug.handle));
  add(mug.image, "mug body", 0.90, mug.body);
  add(mug.image, "mug handle", 0.87, mug.handle);
  add(mug.image, "logo", 0.82, mug.logo);
  return f;
}

/// Builds VLM scripts turn by turn; updates and finalize are followed by the
/// scrutiny reply the engine will ask for.
class ScriptWriter {
 public:
  explicit ScriptWriter(Strategy s = Strategy::DirectRetrieval) {
    turns_.push_back("Plan: " + std::string(to_string(s)) + ".\n" +
                     dump_json(nlohmann::json{{"strategy", to_string(s)}}));
  }

  ScriptWriter& segment(const std::string& phrase) {
    turns_.push_back("Looking for " + phrase + ".\n" + serialize_action(AgentAction{SegmentPhrase{phrase}}));
    return *this;
  }

  ScriptWriter& update(EditOp op, std::vector<CandidateId> ids, std::string verdict = "continue") {
    turns_.push_back(serialize_action(AgentAction{UpdateWorkingMask{op, std::move(ids)}}));
    turns_.push_back("The mask changed as intended.\n" + verdict);
    return *this;
  }

  ScriptWriter& finalize(std::string verdict = "satisfied") {
    turns_.push_back(serialize_action(AgentAction{Finalize{true, "matches the query"}}));
    turns_.push_back("Checked inclusion and exclusion.\n" + verdict);
    return *this;
  }

  ScriptWriter& raw(std::string text) {
    turns_.push_back(std::move(text));
    return *this;
  }

  nlohmann::json json() const { return turns_; }
  Script script() const { return script_from_json(json()); }

 private:
  std::vector<std::string> turns_;
};

/// The walkthrough: Replace head, Remove ears, Remove eyes, Finalize.
inline ScriptWriter cat_walkthrough() {
  ScriptWriter w(Strategy::OversegmentAndRemove);
  w.segment("cat head").update(EditOp::Replace, {1});
  w.segment("cat ears").update(EditOp::Remove, {1, 2});
  w.segment("cat eyes").update(EditOp::Remove, {1, 2});
  w.finalize();
  return w;
}

inline constexpr const char* kCatQuery = "the cat's head without the ears and eyes";

struct DemoItem {
  std::string id;
  std::string image;  // "cat" or "mug"
  std::string query_short;
  std::string query_long;
  Split split;
  RasterMask gt;
  std::optional<RasterMask> others;
  ScriptWriter script_short;
  ScriptWriter script_long;
};

inline std::vector<DemoItem> demo_items(const CatScene& cat, const MugScene& mug) {
  std::vector<DemoItem> items;
  const RasterMask cat_bare = cat.bare_head();
  const RasterMask mug_plain = subtract(mug.body, mug.logo);

  {
    ScriptWriter quick(Strategy::DirectRetrieval);
    quick.segment("cat head").update(EditOp::Replace, {1}).finalize();
    items.push_back({"cat-bare-head", "cat", "cat head", kCatQuery, Split::AdHoc, cat_bare,
                     unite(unite(cat.ears(), cat.eyes()), cat.body), quick, cat_walkthrough()});
  }
  {
    ScriptWriter w(Strategy::UndersegmentAndAdd);
    w.segment("cat ears").update(EditOp::Add, {1}).update(EditOp::Add, {2}).finalize();
    items.push_back({"cat-ears", "cat", "cat ears", "both pointed ears on top of the cat's head", Split::Common,
                     cat.ears(), unite(unite(cat_bare, cat.eyes()), cat.body), w, w});
  }
  {
    ScriptWriter w;
    w.segment("cat eyes").update(EditOp::Replace, {1, 2}).finalize();
    items.push_back({"cat-eyes", "cat", "cat eyes", "the two dark eyes of the cat", Split::Common, cat.eyes(),
                     unite(unite(cat_bare, cat.ears()), cat.body), w, w});
  }
  {
    ScriptWriter quick;
    quick.segment("mug").update(EditOp::Replace, {1}).finalize();
    ScriptWriter full(Strategy::OversegmentAndRemove);
    full.segment("mug").update(EditOp::Replace, {1});
    full.segment("mug handle").update(EditOp::Remove, {1});
    full.segment("logo").update(EditOp::Remove, {1});
    full.finalize();
    items.push_back({"mug-plain-body", "mug", "mug", "the mug's body, excluding its handle and the printed logo",
                     Split::AdHoc, mug_plain, unite(mug.handle, mug.logo), quick, full});
  }
  {
    ScriptWriter w;
    w.segment("mug handle").update(EditOp::Replace, {1}).finalize();
    items.push_back({"mug-handle", "mug", "mug handle", "the curved handle attached to the right side of the mug",
                     Split::Common, mug.handle, mug.body, w, w});
  }
  {
    ScriptWriter w(Strategy::CoarseToFineRefinement);
    w.segment("mug").update(EditOp::Replace, {1}).segment("logo").update(EditOp::Replace, {1}).finalize();
    items.push_back({"mug-logo", "mug", "logo", "the red round logo printed on the mug", Split::None, mug.logo,
                     std::nullopt, w, w});
  }
  return items;
}

/// Writes a self-contained demo workspace:
///   images/cat.png, images/mug.png, fixtures.json, dataset.json,
///   scripts.json (per item and query field), cat_script.json (walkthrough).
inline void write_demo(const std::filesystem::path& dir) {
  const CatScene cat = make_cat();
  const MugScene mug = make_mug();
  write_png(dir / "images" / "cat.png", cat.image);
  write_png(dir / "images" / "mug.png", mug.image);
  write_text_file(dir / "fixtures.json", make_fixtures(cat, mug).to_json().dump(1) + "\n");
  write_text_file(dir / "cat_script.json", cat_walkthrough().json().dump(1) + "\n");

  nlohmann::json items = nlohmann::json::array();
  nlohmann::json scripts = nlohmann::json::object();
  for (const auto& it : demo_items(cat, mug)) {
    nlohmann::json j{{"id", it.id},
                     {"image", "images/" + it.image + ".png"},
                     {"query_short", it.query_short},
                     {"query_long", it.query_long},
                     {"split", to_string(it.split)},
                     {"gt", rle_to_json(rle_encode(it.gt))}};
    if (it.others) j["others"] = rle_to_json(rle_encode(*it.others));
    items.push_back(std::move(j));
    scripts[it.id + ":short"] = it.script_short.json();
    scripts[it.id + ":long"] = it.script_long.json();
  }
  write_text_file(dir / "dataset.json",
                  nlohmann::json{{"version", kManifestVersion}, {"items", std::move(items)}}.dump(1) + "\n");
  write_text_file(dir / "scripts.json", nlohmann::json{{"scripts", std::move(scripts)}}.dump(1) + "\n");
}

}  // namespace vasa::demo
