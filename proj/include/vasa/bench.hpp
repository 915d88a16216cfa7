#pragma once

// Dataset manifests, batch evaluation and report files.
//
// Dataset manifest (version 1), image paths relative to the manifest:
//
//   {"version": 1,
//    "items": [{"id": "cat-1", "image": "images/cat.png",
//               "query_short": "cat head", "query_long": "the cat's head without ...",
//               "split": "ad-hoc", "gt": {"size": [h, w], "counts": [...]},
//               "others": {"size": [h, w], "counts": [...]}}]}     // others optional
//
// Prediction manifest (metrics without an agent), same RLE encoding:
//
//   {"version": 1, "items": [{"id", "split", "prediction", "gt", "others"?}]}

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "vasa/clients.hpp"
#include "vasa/engine.hpp"
#include "vasa/error.hpp"
#include "vasa/image.hpp"
#include "vasa/mask.hpp"
#include "vasa/metrics.hpp"
#include "vasa/rle.hpp"
#include "vasa/trace.hpp"

namespace vasa {

inline constexpr int kManifestVersion = 1;

enum class QueryField { Short, Long };

constexpr std::string_view to_string(QueryField f) { return f == QueryField::Short ? "short" : "long"; }

inline std::optional<QueryField> parse_query_field(std::string_view s) {
  if (s == "short") return QueryField::Short;
  if (s == "long") return QueryField::Long;
  return std::nullopt;
}

struct EvalItem {
  std::string item_id;
  std::filesystem::path image_path;
  std::string query_short;
  std::string query_long;
  RasterMask gt;
  std::optional<RasterMask> others;
  Split split = Split::None;

  const std::string& query(QueryField f) const { return f == QueryField::Short ? query_short : query_long; }
};

namespace detail {

inline RasterMask manifest_mask(const nlohmann::json& item, const char* key, int w, int h) {
  const Rle rle = rle_from_json(item.at(key));
  if (rle.width != w || rle.height != h) {
    throw Error(Errc::MalformedManifest, std::string(key) + " is " + std::to_string(rle.width) + "x" +
                                             std::to_string(rle.height) + " but the image is " + std::to_string(w) +
                                             "x" + std::to_string(h));
  }
  return rle_decode(rle, w, h);
}

inline std::string required_text(const nlohmann::json& item, const char* key) {
  if (!item.contains(key) || !item.at(key).is_string() || trim(item.at(key).get<std::string>()).empty()) {
    throw Error(Errc::MalformedManifest, std::string("missing or empty \"") + key + "\"");
  }
  return item.at(key).get<std::string>();
}

inline const nlohmann::json& manifest_items(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::MalformedManifest, "manifest must be a JSON object");
  if (j.value("version", kManifestVersion) != kManifestVersion) {
    throw Error(Errc::MalformedManifest, "unsupported manifest version " + j.at("version").dump());
  }
  if (!j.contains("items") || !j.at("items").is_array()) {
    throw Error(Errc::MalformedManifest, "manifest needs an \"items\" array");
  }
  return j.at("items");
}

inline Split manifest_split(const nlohmann::json& item) {
  if (!item.contains("split")) return Split::None;
  const auto s = item.at("split").is_string() ? parse_split(item.at("split").get<std::string>()) : std::nullopt;
  if (!s) throw Error(Errc::MalformedManifest, "split must be one of ad-hoc, common, none");
  return *s;
}

}  // namespace detail

/// Loads and fully validates a dataset manifest. Every diagnostic names the
/// offending item.
inline std::vector<EvalItem> load_dataset(const std::filesystem::path& manifest) {
  if (!std::filesystem::exists(manifest)) throw Error(Errc::MissingImage, "manifest not found: " + manifest.string());
  const nlohmann::json j = read_json_file(manifest);
  const auto& items = detail::manifest_items(j);
  const auto base = manifest.parent_path();

  std::vector<EvalItem> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    std::string id = item.is_object() && item.contains("id") && item.at("id").is_string()
                         ? item.at("id").get<std::string>()
                         : "#" + std::to_string(i);
    auto where = [&](const std::string& what) { return "item '" + id + "': " + what; };
    try {
      if (!item.is_object() || !item.contains("id")) throw Error(Errc::MalformedManifest, "missing \"id\"");
      if (!ids.insert(id).second) throw Error(Errc::MalformedManifest, "duplicate id");
      const auto image_path = base / detail::required_text(item, "image");
      if (!std::filesystem::exists(image_path)) {
        throw Error(Errc::MissingImage, where("image not found: " + image_path.string()));
      }
      const auto [w, h] = png_dimensions(image_path);
      EvalItem e{id,
                 image_path,
                 detail::required_text(item, "query_short"),
                 detail::required_text(item, "query_long"),
                 detail::manifest_mask(item, "gt", w, h),
                 std::nullopt,
                 detail::manifest_split(item)};
      if (item.contains("others") && !item.at("others").is_null()) {
        e.others = detail::manifest_mask(item, "others", w, h);
      }
      out.push_back(std::move(e));
    } catch (const Error& e) {
      if (e.code() == Errc::MissingImage) throw;
      throw Error(Errc::MalformedManifest, where(e.what()));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::MalformedManifest, where(e.what()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

struct RunRecord {
  std::string item_id;
  Split split = Split::None;
  RasterMask prediction;
  std::shared_ptr<const Trace> trace;
  std::filesystem::path trace_path;  // empty when traces are not persisted
  double iou = 0.0;
  std::optional<double> xiou;
  int reasoning_steps = 0;
  TerminationReason termination = TerminationReason::Unrecoverable;
  std::optional<std::string> error;  // set when the session threw
};

/// A fresh VLM per item keeps sessions free of shared mutable state.
using VlmFactory = std::function<std::unique_ptr<VlmBackend>(const EvalItem&, QueryField)>;

struct BenchConfig {
  EngineConfig engine;
  QueryField query_field = QueryField::Short;
  int jobs = 1;
  std::filesystem::path trace_dir;  // traces are written here when non-empty
  std::function<void(std::string_view)> log = [](std::string_view line) { std::cerr << line << '\n'; };
  std::function<std::chrono::steady_clock::time_point()> clock;  // defaults to steady_clock
};

struct BenchResult {
  MetricsReport report;
  std::vector<RunRecord> records;  // manifest order
};

inline std::string trace_file_name(std::string_view item_id) {
  std::string name;
  for (char ch : item_id) {
    name += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.' ? ch : '_';
  }
  return name + ".trace.jsonl";
}

inline RunRecord run_item(const EvalItem& item, const VlmFactory& make_vlm, SegmenterBackend& seg,
                          const BenchConfig& config) {
  RunRecord rec{item.item_id, item.split, RasterMask(item.gt.width(), item.gt.height()), nullptr, {}, 0.0,
                std::nullopt, 0, TerminationReason::Unrecoverable, std::nullopt};
  std::optional<InferenceResult> result;
  try {
    Image image = read_png(item.image_path);
    if (!image.matches(item.gt)) throw Error(Errc::MalformedManifest, "image size changed since load");
    auto vlm = make_vlm(item, config.query_field);
    if (!vlm) throw Error(Errc::BackendUnavailable, "no VLM for item");
    RunOptions options;
    if (config.clock) options.clock = config.clock;
    InferenceSession session(image, item.query(config.query_field), *vlm, seg, config.engine, options);
    try {
      result = session.run();
    } catch (const std::exception& e) {
      rec.error = e.what();
      result = session.partial_result(std::string("session error: ") + e.what());
    }
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
  if (rec.error && config.log) config.log("item '" + item.item_id + "' failed: " + *rec.error);
  if (result) {
    rec.prediction = result->mask;
    rec.reasoning_steps = result->trace.reasoning_steps;
    rec.termination = result->trace.termination;
    rec.trace = std::make_shared<const Trace>(std::move(result->trace));
  }
  const auto counts = count_pair(rec.prediction, item.gt, item.others ? &*item.others : nullptr);
  const auto m = item_metrics(item.item_id, item.split, counts);
  rec.iou = m.iou;
  rec.xiou = m.xiou;
  if (rec.trace && !config.trace_dir.empty()) {
    rec.trace_path = config.trace_dir / trace_file_name(item.item_id);
    write_trace(rec.trace_path, *rec.trace);
  }
  return rec;
}

/// Pairs each record with its item's ground truth.
inline MetricsReport evaluate_records(std::span<const EvalItem> items, std::span<const RunRecord> records) {
  if (items.size() != records.size()) throw Error(Errc::InvalidArgument, "items and records differ in length");
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < items.size(); ++i) {
    pairs.push_back(EvalPair{items[i].item_id, records[i].prediction, items[i].gt, items[i].others, items[i].split});
  }
  return evaluate(pairs);
}

/// Runs every item on a bounded worker pool. A failing item is scored with
/// whatever mask its session reached; the batch carries on.
inline BenchResult run_benchmark(std::span<const EvalItem> items, const VlmFactory& make_vlm, SegmenterBackend& seg,
                                 const BenchConfig& config) {
  if (items.empty()) throw Error(Errc::EmptyInput, "benchmark needs at least one item");
  if (config.jobs < 1) throw Error(Errc::InvalidConfig, "jobs must be >= 1");
  config.engine.validate();

  std::vector<std::optional<RunRecord>> slots(items.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  BenchConfig worker_config = config;
  if (config.log) {
    worker_config.log = [&log_mu, &config](std::string_view line) {
      std::lock_guard lock(log_mu);
      config.log(line);
    };
  }
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      slots[i] = run_item(items[i], make_vlm, seg, worker_config);
    }
  };
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(config.jobs), items.size());
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  }

  BenchResult out;
  for (auto& s : slots) out.records.push_back(std::move(*s));
  out.report = evaluate_records(items, out.records);
  return out;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

enum class ReportFormat { Csv, Markdown, Jsonl };

inline std::optional<ReportFormat> parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "markdown" || s == "md") return ReportFormat::Markdown;
  if (s == "jsonl") return ReportFormat::Jsonl;
  return std::nullopt;
}

inline nlohmann::json record_to_json(const RunRecord& r) {
  nlohmann::json j{{"item_id", r.item_id},
                   {"split", to_string(r.split)},
                   {"iou", r.iou},
                   {"xiou", r.xiou ? nlohmann::json(*r.xiou) : nlohmann::json(nullptr)},
                   {"reasoning_steps", r.reasoning_steps},
                   {"termination", to_string(r.termination)},
                   {"trace", r.trace_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.trace_path.filename().string())},
                   {"prediction", rle_to_json(rle_encode(r.prediction))}};
  if (r.error) j["error"] = *r.error;
  return j;
}

/// One row per item for step/IoU comparisons across runs.
inline std::string records_to_csv(std::span<const RunRecord> records) {
  std::string out = "item_id,split,iou,xiou,reasoning_steps,termination\n";
  for (const auto& r : records) {
    out += r.item_id + "," + std::string(to_string(r.split)) + "," + format4(r.iou) + "," +
           (r.xiou ? format4(*r.xiou) : std::string()) + "," + std::to_string(r.reasoning_steps) + "," +
           std::string(to_string(r.termination)) + "\n";
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(Errc::IoFailure, "write failed: " + path.string());
}

/// Writes the report in one format under `out_dir`; returns the paths written.
///   csv      -> report.csv, items.csv
///   markdown -> report.md
///   jsonl    -> records.jsonl
inline std::vector<std::filesystem::path> emit_report(const MetricsReport& report, std::span<const RunRecord> records,
                                                      ReportFormat format, const std::filesystem::path& out_dir,
                                                      std::string_view title = {}) {
  if (report.per_item.empty()) throw Error(Errc::EmptyInput, "empty report");
  std::vector<std::filesystem::path> written;
  switch (format) {
    case ReportFormat::Csv:
      write_text_file(out_dir / "report.csv", report_to_csv(report));
      write_text_file(out_dir / "items.csv", records_to_csv(records));
      written = {out_dir / "report.csv", out_dir / "items.csv"};
      break;
    case ReportFormat::Markdown:
      write_text_file(out_dir / "report.md", report_to_markdown(report, title));
      written = {out_dir / "report.md"};
      break;
    case ReportFormat::Jsonl: {
      std::string text;
      for (const auto& r : records) text += dump_json(record_to_json(r)) + "\n";
      write_text_file(out_dir / "records.jsonl", text);
      written = {out_dir / "records.jsonl"};
      break;
    }
  }
  return written;
}

// ---------------------------------------------------------------------------
// Prediction manifests
// ---------------------------------------------------------------------------

inline nlohmann::json prediction_manifest(std::span<const EvalItem> items, std::span<const RunRecord> records) {
  if (items.size() != records.size()) throw Error(Errc::InvalidArgument, "items and records differ in length");
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    nlohmann::json j{{"id", items[i].item_id},
                     {"split", to_string(items[i].split)},
                     {"prediction", rle_to_json(rle_encode(records[i].prediction))},
                     {"gt", rle_to_json(rle_encode(items[i].gt))}};
    if (items[i].others) j["others"] = rle_to_json(rle_encode(*items[i].others));
    list.push_back(std::move(j));
  }
  return {{"version", kManifestVersion}, {"items", std::move(list)}};
}

inline std::vector<EvalPair> pairs_from_prediction_manifest(const nlohmann::json& j) {
  const auto& items = detail::manifest_items(j);
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    const std::string id = item.is_object() && item.contains("id") && item.at("id").is_string()
                               ? item.at("id").get<std::string>()
                               : "#" + std::to_string(i);
    try {
      const Rle gt = rle_from_json(item.at("gt"));
      const int w = gt.width;
      const int h = gt.height;
      EvalPair p{id, detail::manifest_mask(item, "prediction", w, h), rle_decode(gt, w, h), std::nullopt,
                 detail::manifest_split(item)};
      if (item.contains("others") && !item.at("others").is_null()) {
        p.others_union = detail::manifest_mask(item, "others", w, h);
      }
      pairs.push_back(std::move(p));
    } catch (const Error& e) {
      throw Error(Errc::MalformedManifest, "item '" + id + "': " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::MalformedManifest, "item '" + id + "': " + e.what());
    }
  }
  return pairs;
}

}  // namespace vasa
