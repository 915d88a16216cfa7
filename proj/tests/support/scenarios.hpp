#pragma once

// Scripted runs shared by the trace tests and the acceptance binary.

#include <string>
#include <vector>

#include "demo_scene.hpp"
#include "oracles.hpp"
#include "vasa/bench.hpp"
#include "vasa/engine.hpp"

namespace scenarios {

struct Scenario {
  std::string name;
  std::string image;  // "cat" or "mug"
  std::string query;
  nlohmann::json script;
};

inline nlohmann::json with_inserted(nlohmann::json turns, std::size_t pos, const nlohmann::json& extra) {
  turns.insert(turns.begin() + static_cast<long>(pos), extra.begin(), extra.end());
  return turns;
}

/// Every scripted run the end-to-end suite exercises.
inline std::vector<Scenario> all(const vasa::demo::CatScene& cat, const vasa::demo::MugScene& mug) {
  using namespace vasa;
  std::vector<Scenario> out;
  const auto walk = demo::cat_walkthrough().json();
  out.push_back({"walkthrough", "cat", demo::kCatQuery, walk});
  for (int k = 1; k <= 4; ++k) {
    out.push_back({"walkthrough+" + std::to_string(k) + "-malformed", "cat", demo::kCatQuery,
                   with_inserted(walk, 4, nlohmann::json(std::vector<std::string>(k, "not an action")))});
  }
  out.push_back({"walkthrough+outage", "cat", demo::kCatQuery,
                 with_inserted(walk, 4, nlohmann::json::array({{{"error", "unavailable"}}}))});
  {
    demo::ScriptWriter w(Strategy::OversegmentAndRemove);
    w.segment("cat head").update(EditOp::Replace, {1}).finalize("missing regions: none, but ears remain");
    w.segment("cat ears").update(EditOp::Remove, {1, 2});
    w.segment("cat eyes").update(EditOp::Remove, {1}).update(EditOp::Remove, {2}).finalize();
    out.push_back({"rejected-finalize", "cat", demo::kCatQuery, w.json()});
  }
  {
    demo::ScriptWriter w;
    w.segment("cat head").update(EditOp::Replace, {1});
    for (int i = 0; i < 5; ++i) w.segment("cat head").update(EditOp::Replace, {1});
    out.push_back({"stall", "cat", demo::kCatQuery, w.json()});
  }
  for (const auto& it : demo::demo_items(cat, mug)) {
    out.push_back({it.id + ":short", it.image, it.query_short, it.script_short.json()});
    out.push_back({it.id + ":long", it.image, it.query_long, it.script_long.json()});
  }
  return out;
}

inline vasa::InferenceResult run(const Scenario& s, const vasa::demo::CatScene& cat,
                                 const vasa::demo::MugScene& mug, vasa::SegmenterBackend& seg,
                                 vasa::EngineConfig cfg = {}) {
  vasa::ScriptedVlm vlm(vasa::script_from_json(s.script));
  vasa::RunOptions opt;
  opt.clock = [] { return std::chrono::steady_clock::time_point{}; };
  const vasa::Image& img = s.image == "cat" ? cat.image : mug.image;
  return vasa::run_inference(img, s.query, vlm, seg, cfg, opt);
}

/// Index of the first update entry whose op is Remove and whose prompt came
/// from `phrase`.
inline std::optional<std::size_t> find_remove_after(const vasa::Trace& t, std::string_view phrase) {
  bool armed = false;
  for (std::size_t i = 0; i < t.entries.size(); ++i) {
    const auto& e = t.entries[i];
    if (e.segment_prompt) armed = *e.segment_prompt == phrase;
    if (armed && e.edit && e.edit->op == vasa::EditOp::Remove) return i;
  }
  return std::nullopt;
}

/// Flips one Remove into an Add. With `edit_too` the edit record is changed as
/// well, so only the recomputed masks can expose it.
inline void flip_op(vasa::Trace& t, std::size_t i, bool edit_too) {
  auto& e = t.entries.at(i);
  auto action = std::get<vasa::UpdateWorkingMask>(*e.agent_action());
  action.op = vasa::EditOp::Add;
  e.action = vasa::AgentAction{action};
  if (edit_too) e.edit->op = vasa::EditOp::Add;
}

/// make_demo output loaded back the way the CLI does it.
struct DemoWorkspace {
  std::filesystem::path dir;
  std::vector<vasa::EvalItem> items;
  vasa::ScriptBook book;
  vasa::FixtureSegmenter seg;

  vasa::VlmFactory factory() const {
    return [this](const vasa::EvalItem& item, vasa::QueryField f) -> std::unique_ptr<vasa::VlmBackend> {
      const auto* script = book.find(item.item_id, vasa::to_string(f));
      if (!script) return nullptr;
      return std::make_unique<vasa::ScriptedVlm>(*script);
    };
  }
};

inline DemoWorkspace make_workspace(const std::filesystem::path& dir) {
  std::filesystem::remove_all(dir);
  vasa::demo::write_demo(dir);
  return {dir, vasa::load_dataset(dir / "dataset.json"),
          vasa::ScriptBook::from_json(vasa::read_json_file(dir / "scripts.json")),
          vasa::load_fixture_oracle(dir / "fixtures.json")};
}

inline vasa::BenchConfig quiet_config(vasa::QueryField field, int jobs) {
  vasa::BenchConfig c;
  c.query_field = field;
  c.jobs = jobs;
  c.log = nullptr;
  c.clock = [] { return std::chrono::steady_clock::time_point{}; };
  return c;
}

/// Brute-force metrics over the runner's predictions, with ground truth taken
/// from the scene construction rather than the manifest.
struct OracleReport {
  oracle::Fraction giou, ciou;
  std::optional<oracle::Fraction> xiou;
  std::map<vasa::Split, std::vector<oracle::Triple>> by_split;
};

inline OracleReport oracle_report(const std::vector<vasa::demo::DemoItem>& truth,
                                  std::span<const vasa::RunRecord> records) {
  std::vector<oracle::Triple> all;
  OracleReport out;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    oracle::Triple t{oracle::from_mask(records[i].prediction), oracle::from_mask(truth[i].gt), std::nullopt};
    if (truth[i].others) t.o = oracle::from_mask(*truth[i].others);
    out.by_split[truth[i].split].push_back(t);
    all.push_back(std::move(t));
  }
  out.giou = oracle::giou(all);
  out.ciou = oracle::ciou(all);
  out.xiou = oracle::xiou_mean(all);
  return out;
}

/// Empty string when the library report matches the oracle exactly.
inline std::string compare_with_oracle(const vasa::MetricsReport& report, const std::vector<vasa::demo::DemoItem>& truth,
                                       std::span<const vasa::RunRecord> records) {
  const auto o = oracle_report(truth, records);
  std::string diff;
  auto check = [&diff](const std::string& what, const oracle::Fraction& got, const oracle::Fraction& want) {
    if (got != want) diff += what + ": " + got.str() + " != " + want.str() + "\n";
  };
  check("total giou", report.total.giou, o.giou);
  check("total ciou", report.total.ciou, o.ciou);
  if (report.total.xiou.has_value() != o.xiou.has_value()) {
    diff += "total xiou presence differs\n";
  } else if (o.xiou) {
    check("total xiou", *report.total.xiou, *o.xiou);
  }
  if (report.per_split.size() != o.by_split.size()) diff += "split count differs\n";
  for (const auto& [split, triples] : o.by_split) {
    const auto it = report.per_split.find(split);
    if (it == report.per_split.end()) {
      diff += "missing split " + std::string(vasa::to_string(split)) + "\n";
      continue;
    }
    const std::string name(vasa::to_string(split));
    check(name + " giou", it->second.giou, oracle::giou(triples));
    check(name + " ciou", it->second.ciou, oracle::ciou(triples));
    const auto x = oracle::xiou_mean(triples);
    if (it->second.xiou.has_value() != x.has_value()) {
      diff += name + " xiou presence differs\n";
    } else if (x) {
      check(name + " xiou", *it->second.xiou, *x);
    }
    if (it->second.n != triples.size()) diff += name + " n differs\n";
  }
  if (report.per_item.size() != truth.size()) diff += "per-item count differs\n";
  return diff;
}

}  // namespace scenarios
