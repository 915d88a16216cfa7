#pragma once

// Append-only history of an inference session and its JSONL form.
//
// A trace is a proof of construction: every working-mask update stores the
// selected candidate masks and a digest of the result, so the final mask can
// be recomputed offline (see verify_trace).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vasa/error.hpp"
#include "vasa/mask.hpp"
#include "vasa/protocol.hpp"
#include "vasa/rle.hpp"

namespace vasa {

inline constexpr std::string_view kTraceSchema = "vasa-trace/1";

enum class TerminationReason { Verified, Stalled, BudgetExhausted, Unrecoverable };

constexpr std::string_view to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::Verified: return "verified";
    case TerminationReason::Stalled: return "stalled";
    case TerminationReason::BudgetExhausted: return "budget_exhausted";
    case TerminationReason::Unrecoverable: return "unrecoverable";
  }
  return "unrecoverable";
}

inline std::optional<TerminationReason> parse_termination(std::string_view s) {
  for (auto r : {TerminationReason::Verified, TerminationReason::Stalled, TerminationReason::BudgetExhausted,
                 TerminationReason::Unrecoverable}) {
    if (s == to_string(r)) return r;
  }
  return std::nullopt;
}

struct CandidateSummary {
  CandidateId id = 0;
  std::string phrase;
  double score = 0.0;
  std::uint64_t area = 0;
  friend bool operator==(const CandidateSummary&, const CandidateSummary&) = default;
};

struct EditRecord {
  EditOp op = EditOp::Add;
  std::vector<CandidateId> ids;
  std::vector<Rle> selected;  // masks of `ids`, in the same order
  friend bool operator==(const EditRecord&, const EditRecord&) = default;
};

struct HistoryEntry {
  int round = 0;  // segment calls made when this entry was recorded
  std::variant<AgentAction, FormatError> action;
  std::string raw_text;  // VLM reply verbatim; empty for engine-synthesized entries
  std::optional<std::string> segment_prompt;
  bool tool_failed = false;  // segment call raised a backend error
  std::vector<CandidateSummary> candidates;
  std::optional<EditRecord> edit;
  std::uint64_t pixels_added = 0;
  std::uint64_t pixels_removed = 0;
  std::uint64_t area_after = 0;
  std::uint64_t mask_digest = 0;  // digest of the working mask after this entry
  std::optional<Rle> snapshot;    // full working mask, when snapshots are enabled
  std::optional<Verdict> verdict;
  std::string verdict_detail;
  std::string verdict_raw;
  std::string note;

  bool is_format_error() const noexcept { return std::holds_alternative<FormatError>(action); }
  const AgentAction* agent_action() const noexcept { return std::get_if<AgentAction>(&action); }

  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

struct TraceHeader {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::string query;
  std::string tool_schema_version{kToolSchemaVersion};
  nlohmann::json config = nlohmann::json::object();
  friend bool operator==(const TraceHeader&, const TraceHeader&) = default;
};

struct Trace {
  TraceHeader header;
  std::vector<HistoryEntry> entries;
  TerminationReason termination = TerminationReason::Unrecoverable;
  std::optional<RasterMask> final_mask;
  int reasoning_steps = 0;
  int segment_calls = 0;
  std::chrono::milliseconds wall_time{0};
  std::string termination_note;
};

/// Successful segment_phrase invocations plus successful working-mask updates.
inline int count_reasoning_steps(const Trace& trace) {
  int n = 0;
  for (const auto& e : trace.entries) {
    if (e.segment_prompt && !e.tool_failed) ++n;
    if (e.edit) ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

namespace detail {

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

inline std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

inline nlohmann::json entry_to_json(const HistoryEntry& e) {
  nlohmann::json j{{"type", "entry"}, {"round", e.round}, {"raw_text", e.raw_text}};
  if (const auto* a = e.agent_action()) {
    j["kind"] = "action";
    j["action"] = action_to_json(*a);
  } else {
    const auto& err = std::get<FormatError>(e.action);
    j["kind"] = "format_error";
    j["error"] = {{"kind", to_string(err.kind)}, {"detail", err.detail}};
  }
  if (e.segment_prompt) j["segment_prompt"] = *e.segment_prompt;
  if (e.tool_failed) j["tool_failed"] = true;
  if (!e.candidates.empty()) {
    auto& list = j["candidates"] = nlohmann::json::array();
    for (const auto& c : e.candidates) {
      list.push_back({{"id", c.id}, {"phrase", c.phrase}, {"score", c.score}, {"area", c.area}});
    }
  }
  if (e.edit) {
    nlohmann::json selected = nlohmann::json::array();
    for (const auto& r : e.edit->selected) selected.push_back(rle_to_json(r));
    j["edit"] = {{"op", to_string(e.edit->op)}, {"ids", e.edit->ids}, {"selected", std::move(selected)}};
  }
  j["pixels_added"] = e.pixels_added;
  j["pixels_removed"] = e.pixels_removed;
  j["area_after"] = e.area_after;
  j["mask_digest"] = hex64(e.mask_digest);
  if (e.snapshot) j["snapshot"] = rle_to_json(*e.snapshot);
  if (e.verdict) {
    j["verdict"] = {{"verdict", to_string(*e.verdict)}, {"detail", e.verdict_detail}, {"raw_text", e.verdict_raw}};
  }
  if (!e.note.empty()) j["note"] = e.note;
  return j;
}

inline HistoryEntry entry_from_json(const nlohmann::json& j) {
  HistoryEntry e;
  e.round = j.at("round").get<int>();
  e.raw_text = j.value("raw_text", "");
  if (j.at("kind") == "action") {
    auto parsed = parse_action(dump_json(j.at("action")), [&] {
      std::vector<CandidateId> ids;
      if (j.at("action").contains("candidate_ids")) {
        for (const auto& v : j.at("action").at("candidate_ids")) {
          if (v.is_number_integer()) ids.push_back(v.get<CandidateId>());
        }
      }
      return ids;
    }());
    if (const auto* err = std::get_if<FormatError>(&parsed)) {
      throw Error(Errc::MalformedManifest, "trace action does not parse: " + err->detail);
    }
    e.action = std::get<AgentAction>(parsed);
  } else {
    const auto& err = j.at("error");
    auto kind = parse_format_error_kind(err.at("kind").get<std::string>());
    if (!kind) throw Error(Errc::MalformedManifest, "unknown format error kind in trace");
    e.action = FormatError{*kind, e.raw_text, err.value("detail", "")};
  }
  if (j.contains("segment_prompt")) e.segment_prompt = j.at("segment_prompt").get<std::string>();
  e.tool_failed = j.value("tool_failed", false);
  if (j.contains("candidates")) {
    for (const auto& c : j.at("candidates")) {
      e.candidates.push_back(CandidateSummary{c.at("id").get<int>(), c.at("phrase").get<std::string>(),
                                              c.at("score").get<double>(), c.at("area").get<std::uint64_t>()});
    }
  }
  if (j.contains("edit")) {
    const auto& ed = j.at("edit");
    auto op = parse_edit_op(ed.at("op").get<std::string>());
    if (!op) throw Error(Errc::MalformedManifest, "unknown edit op in trace");
    EditRecord rec{*op, ed.at("ids").get<std::vector<CandidateId>>(), {}};
    for (const auto& r : ed.at("selected")) rec.selected.push_back(rle_from_json(r));
    e.edit = std::move(rec);
  }
  e.pixels_added = j.value("pixels_added", std::uint64_t{0});
  e.pixels_removed = j.value("pixels_removed", std::uint64_t{0});
  e.area_after = j.value("area_after", std::uint64_t{0});
  e.mask_digest = parse_hex64(j.at("mask_digest").get<std::string>());
  if (j.contains("snapshot")) e.snapshot = rle_from_json(j.at("snapshot"));
  if (j.contains("verdict")) {
    const auto& v = j.at("verdict");
    e.verdict = parse_verdict_name(v.at("verdict").get<std::string>());
    e.verdict_detail = v.value("detail", "");
    e.verdict_raw = v.value("raw_text", "");
  }
  e.note = j.value("note", "");
  return e;
}

}  // namespace detail

/// Header line, one line per history entry, then a summary line.
inline std::string trace_to_jsonl(const Trace& t) {
  std::string out;
  const nlohmann::json header{{"type", "header"},
                              {"schema", kTraceSchema},
                              {"tool_schema_version", t.header.tool_schema_version},
                              {"image_id", t.header.image_id},
                              {"width", t.header.width},
                              {"height", t.header.height},
                              {"query", t.header.query},
                              {"config", t.header.config}};
  out += dump_json(header) + "\n";
  for (const auto& e : t.entries) out += dump_json(detail::entry_to_json(e)) + "\n";
  nlohmann::json summary{{"type", "summary"},
                         {"termination", to_string(t.termination)},
                         {"reasoning_steps", t.reasoning_steps},
                         {"segment_calls", t.segment_calls},
                         {"wall_time_ms", t.wall_time.count()},
                         {"entries", t.entries.size()}};
  if (!t.termination_note.empty()) summary["note"] = t.termination_note;
  if (t.final_mask) summary["final_mask"] = rle_to_json(rle_encode(*t.final_mask));
  out += dump_json(summary) + "\n";
  return out;
}

inline Trace trace_from_jsonl(std::string_view text) {
  Trace t;
  bool have_header = false;
  bool have_summary = false;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(Errc::MalformedManifest, "trace line " + std::to_string(line_no) + " is not a JSON object");
    }
    try {
      const auto type = j.at("type").get<std::string>();
      if (type == "header") {
        t.header.image_id = j.value("image_id", "");
        t.header.width = j.at("width").get<int>();
        t.header.height = j.at("height").get<int>();
        t.header.query = j.value("query", "");
        t.header.tool_schema_version = j.value("tool_schema_version", std::string(kToolSchemaVersion));
        t.header.config = j.value("config", nlohmann::json::object());
        have_header = true;
      } else if (type == "entry") {
        t.entries.push_back(detail::entry_from_json(j));
      } else if (type == "summary") {
        auto reason = parse_termination(j.at("termination").get<std::string>());
        if (!reason) throw Error(Errc::MalformedManifest, "unknown termination reason");
        t.termination = *reason;
        t.reasoning_steps = j.at("reasoning_steps").get<int>();
        t.segment_calls = j.value("segment_calls", 0);
        t.wall_time = std::chrono::milliseconds(j.value("wall_time_ms", std::int64_t{0}));
        t.termination_note = j.value("note", "");
        if (j.contains("final_mask")) t.final_mask = rle_decode(rle_from_json(j.at("final_mask")));
        have_summary = true;
      }
    } catch (const Error& e) {
      if (e.code() == Errc::MalformedManifest) throw;
      throw Error(Errc::MalformedManifest, "trace line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(Errc::MalformedManifest, "trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw Error(Errc::MalformedManifest, "trace has no header line");
  if (!have_summary) throw Error(Errc::MalformedManifest, "trace has no summary line");
  return t;
}

inline void write_trace(const std::filesystem::path& path, const Trace& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << trace_to_jsonl(t);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
}

inline Trace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return trace_from_jsonl(buf.str());
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

struct ReplayResult {
  bool ok = true;
  std::optional<std::size_t> divergent_entry;  // index into entries
  int divergent_round = 0;
  std::string detail;
  std::optional<RasterMask> final_mask;  // recomputed
  std::size_t updates_checked = 0;
};

/// Recomputes M_t = apply_edit(M_{t-1}, op_t, selected_t) from M_0 = empty for
/// every update and checks digests, areas, pixel deltas, snapshots, the final
/// mask and the reasoning-step count. Stops at the first divergence.
inline ReplayResult verify_trace(const Trace& t) {
  ReplayResult res;
  if (t.header.width <= 0 || t.header.height <= 0) {
    res.ok = false;
    res.detail = "trace header has no mask dimensions";
    return res;
  }
  RasterMask working(t.header.width, t.header.height);
  auto fail = [&](std::size_t i, std::string why) {
    res.ok = false;
    res.divergent_entry = i;
    res.divergent_round = t.entries[i].round;
    res.detail = "entry " + std::to_string(i) + " (round " + std::to_string(t.entries[i].round) + "): " + why;
    res.final_mask = working;
    return res;
  };
  for (std::size_t i = 0; i < t.entries.size(); ++i) {
    const auto& e = t.entries[i];
    if (e.edit) {
      const auto* action = e.agent_action();
      const auto* update = action ? std::get_if<UpdateWorkingMask>(action) : nullptr;
      if (update == nullptr) return fail(i, "edit recorded on a non-update action");
      if (update->op != e.edit->op || update->candidate_ids != e.edit->ids) {
        return fail(i, "edit record disagrees with the recorded action");
      }
      if (e.edit->selected.size() != e.edit->ids.size()) return fail(i, "selected masks do not match ids");
      std::vector<RasterMask> selected;
      try {
        for (const auto& r : e.edit->selected) selected.push_back(rle_decode(r, t.header.width, t.header.height));
      } catch (const Error& err) {
        return fail(i, std::string("selected mask invalid: ") + err.what());
      }
      RasterMask next = apply_edit(working, e.edit->op, selected);
      const std::uint64_t added = subtract(next, working).area();
      const std::uint64_t removed = subtract(working, next).area();
      if (added != e.pixels_added || removed != e.pixels_removed) {
        return fail(i, "pixel deltas +" + std::to_string(added) + "/-" + std::to_string(removed) + " recomputed, +" +
                           std::to_string(e.pixels_added) + "/-" + std::to_string(e.pixels_removed) + " recorded");
      }
      working = std::move(next);
      ++res.updates_checked;
    } else if (e.pixels_added != 0 || e.pixels_removed != 0) {
      return fail(i, "non-update entry records a mask change");
    }
    if (working.area() != e.area_after) return fail(i, "area mismatch");
    if (digest(working) != e.mask_digest) return fail(i, "mask digest mismatch");
    if (e.snapshot && rle_encode(working) != *e.snapshot) return fail(i, "snapshot mismatch");
  }
  res.final_mask = working;
  if (t.final_mask && !(*t.final_mask == working)) {
    res.ok = false;
    res.detail = "final mask differs from the reconstruction";
    return res;
  }
  if (count_reasoning_steps(t) != t.reasoning_steps) {
    res.ok = false;
    res.detail = "reasoning_steps " + std::to_string(t.reasoning_steps) + " recorded, " +
                 std::to_string(count_reasoning_steps(t)) + " recomputed";
  }
  return res;
}

}  // namespace vasa
