#pragma once

// The long-horizon inference loop over a persistent working mask.
//
// One session is strictly sequential. Each VLM turn yields one action:
// segment_phrase fills the candidate pool (one budget tick), update_working_mask
// edits the working mask and triggers a scrutiny turn, set_strategy revises the
// plan, finalize(verified=true) is accepted only after the engine's own
// scrutiny turn agrees. Sessions stop on Verified, Stalled, BudgetExhausted or
// Unrecoverable and always return the working mask they reached.

#include <chrono>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vasa/candidate.hpp"
#include "vasa/clients.hpp"
#include "vasa/error.hpp"
#include "vasa/image.hpp"
#include "vasa/mask.hpp"
#include "vasa/overlay.hpp"
#include "vasa/protocol.hpp"
#include "vasa/rle.hpp"
#include "vasa/trace.hpp"

namespace vasa {

struct EngineConfig {
  int max_rounds = 20;                // T: segment_phrase calls per session
  int stall_window = 3;               // W
  std::uint64_t stall_min_delta = 0;  // D: stalled when the window changes <= D pixels
  int failure_limit = 3;              // F: consecutive format/scrutiny failures tolerated
  std::size_t candidate_cap = kDefaultCandidateCap;
  int image_max_side = 1024;
  bool keep_snapshots = false;
  bool grid_overlays = false;
  double overlay_alpha = 0.45;
  int outline_width = 1;
  std::optional<std::chrono::milliseconds> deadline;

  void validate() const {
    auto bad = [](const std::string& what) { throw Error(Errc::InvalidConfig, what); };
    if (max_rounds < 1) bad("max_rounds must be >= 1");
    if (stall_window < 1) bad("stall_window must be >= 1");
    if (failure_limit < 0) bad("failure_limit must be >= 0");
    if (candidate_cap < 1) bad("candidate_cap must be >= 1");
    if (image_max_side < 1) bad("image_max_side must be >= 1");
    if (!(overlay_alpha >= 0.0 && overlay_alpha <= 1.0)) bad("overlay_alpha must be in [0,1]");
    if (outline_width < 1) bad("outline_width must be >= 1");
    if (deadline && deadline->count() <= 0) bad("deadline must be positive");
  }

  OverlayStyle overlay_style() const {
    OverlayStyle s;
    s.fill_alpha = overlay_alpha;
    s.outline_width = outline_width;
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"max_rounds", max_rounds},
                     {"stall_window", stall_window},
                     {"stall_min_delta", stall_min_delta},
                     {"failure_limit", failure_limit},
                     {"candidate_cap", candidate_cap},
                     {"image_max_side", image_max_side},
                     {"keep_snapshots", keep_snapshots},
                     {"grid_overlays", grid_overlays},
                     {"overlay_alpha", overlay_alpha},
                     {"outline_width", outline_width}};
    j["deadline_ms"] = deadline ? nlohmann::json(deadline->count()) : nlohmann::json(nullptr);
    return j;
  }

  /// Missing keys keep their defaults; wrong types or values are InvalidConfig.
  static EngineConfig from_json(const nlohmann::json& j) {
    EngineConfig c;
    if (!j.is_object()) throw Error(Errc::InvalidConfig, "engine config must be an object");
    try {
      c.max_rounds = j.value("max_rounds", c.max_rounds);
      c.stall_window = j.value("stall_window", c.stall_window);
      c.stall_min_delta = j.value("stall_min_delta", c.stall_min_delta);
      c.failure_limit = j.value("failure_limit", c.failure_limit);
      c.candidate_cap = j.value("candidate_cap", c.candidate_cap);
      c.image_max_side = j.value("image_max_side", c.image_max_side);
      c.keep_snapshots = j.value("keep_snapshots", c.keep_snapshots);
      c.grid_overlays = j.value("grid_overlays", c.grid_overlays);
      c.overlay_alpha = j.value("overlay_alpha", c.overlay_alpha);
      c.outline_width = j.value("outline_width", c.outline_width);
      if (j.contains("deadline_ms") && !j.at("deadline_ms").is_null()) {
        c.deadline = std::chrono::milliseconds(j.at("deadline_ms").get<std::int64_t>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::InvalidConfig, e.what());
    }
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Session state
// ---------------------------------------------------------------------------

struct RecoveryCounters {
  int consecutive_format = 0;
  int consecutive_backend = 0;
};

struct WorkingState {
  WorkingState(const Image& img, std::string q, int budget_rounds)
      : image(&img), query(std::move(q)), working_mask(img.width(), img.height()), budget(budget_rounds) {}

  const Image* image;
  std::string query;
  Strategy strategy = Strategy::DirectRetrieval;
  RasterMask working_mask;
  int round = 0;  // segment calls made
  int budget;     // T
  std::vector<CandidateMask> candidate_pool;
  std::vector<HistoryEntry> history;

  RecoveryCounters counters;
  std::optional<std::string> pending_reminder;
  std::optional<ScrutinyResult> last_scrutiny;

  std::vector<CandidateId> pool_ids() const {
    std::vector<CandidateId> ids;
    for (const auto& c : candidate_pool) ids.push_back(c.candidate_id);
    return ids;
  }
};

// ---------------------------------------------------------------------------
// Recovery
// ---------------------------------------------------------------------------

struct BackendFailure {
  std::string detail;
};

struct ScrutinyParseFailure {
  std::string raw_text;
};

using Failure = std::variant<FormatError, BackendFailure, ScrutinyParseFailure>;

enum class RecoveryAction { RetryWithReminder, ReinitLocalStep, Abort };

constexpr std::string_view to_string(RecoveryAction a) {
  switch (a) {
    case RecoveryAction::RetryWithReminder: return "retry_with_reminder";
    case RecoveryAction::ReinitLocalStep: return "reinit_local_step";
    case RecoveryAction::Abort: return "abort";
  }
  return "abort";
}

/// Decides how to continue after a failure that is already recorded in the
/// history. Never touches the working mask or the history.
///
/// Format and scrutiny-parse failures share one consecutive counter: up to
/// `failure_limit` of them yield RetryWithReminder, the next one aborts.
/// Backend failures reinitialize the local step once; a second consecutive
/// one aborts.
inline RecoveryAction recover(const Failure& failure, WorkingState& state, int failure_limit) {
  if (const auto* fe = std::get_if<FormatError>(&failure)) {
    if (++state.counters.consecutive_format > failure_limit) return RecoveryAction::Abort;
    state.pending_reminder = render_format_reminder(*fe);
    return RecoveryAction::RetryWithReminder;
  }
  if (std::holds_alternative<ScrutinyParseFailure>(failure)) {
    if (++state.counters.consecutive_format > failure_limit) return RecoveryAction::Abort;
    state.pending_reminder =
        "Your last scrutiny answer could not be parsed. End scrutiny answers with one of: satisfied, "
        "missing regions: <what>, extra regions: <what>, concept confusion: <what>, continue.";
    return RecoveryAction::RetryWithReminder;
  }
  if (++state.counters.consecutive_backend > 1) return RecoveryAction::Abort;
  state.candidate_pool.clear();
  return RecoveryAction::ReinitLocalStep;
}

inline void reset_failure_counters(WorkingState& state) { state.counters = {}; }

// ---------------------------------------------------------------------------
// Stall detection
// ---------------------------------------------------------------------------

/// True iff the last `window` action entries changed the working mask by at
/// most `min_delta` pixels in total and none of them issued a segment prompt
/// that had not been used before. Format-error entries are not rounds.
inline bool detect_stall(std::span<const HistoryEntry> history, int window, std::uint64_t min_delta = 0) {
  if (window < 1) throw Error(Errc::InvalidArgument, "stall window must be >= 1");
  std::vector<std::size_t> rounds;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (!history[i].is_format_error()) rounds.push_back(i);
  }
  if (rounds.size() < static_cast<std::size_t>(window)) return false;
  const std::size_t first = rounds[rounds.size() - static_cast<std::size_t>(window)];

  std::set<std::string, std::less<>> seen;
  for (std::size_t i = 0; i < first; ++i) {
    if (history[i].segment_prompt) seen.insert(normalize_phrase(*history[i].segment_prompt));
  }
  std::uint64_t delta = 0;
  for (std::size_t i = first; i < history.size(); ++i) {
    const auto& e = history[i];
    if (e.is_format_error()) continue;
    delta += e.pixels_added + e.pixels_removed;
    if (e.segment_prompt && !seen.insert(normalize_phrase(*e.segment_prompt)).second) continue;
    if (e.segment_prompt) return false;  // novel prompt
  }
  return delta <= min_delta;
}

// ---------------------------------------------------------------------------
// Strategy selection and scrutiny
// ---------------------------------------------------------------------------

struct StrategySelection {
  Strategy strategy = Strategy::DirectRetrieval;
  bool fell_back = false;
  std::vector<HistoryEntry> entries;  // failed attempts, then the chosen strategy
};

inline HistoryEntry make_entry(const WorkingState& s, std::variant<AgentAction, FormatError> action,
                               std::string raw) {
  HistoryEntry e;
  e.round = s.round;
  e.action = std::move(action);
  e.raw_text = std::move(raw);
  e.area_after = s.working_mask.area();
  e.mask_digest = digest(s.working_mask);
  return e;
}

/// Asks the VLM for an initial strategy. After `failure_limit` unusable
/// replies (or transport failures) it falls back to direct retrieval.
inline StrategySelection select_strategy(VlmBackend& vlm, const Image& image, std::string_view query,
                                         int failure_limit = 3) {
  if (detail::trim(query).empty()) throw Error(Errc::InvalidArgument, "select_strategy needs a non-empty query");
  WorkingState scratch(image, std::string(query), 0);
  StrategySelection sel;
  std::string reminder;
  const int attempts = std::max(failure_limit, 1);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    MessageBundle bundle;
    bundle.push_back(Message::text(Role::System, "You are planning a segmentation task."));
    bundle.push_back(Message::text(Role::User, render_strategy_request(query) + reminder));
    bundle.back().parts.push_back(ContentPart::of_text("input image"));
    bundle.back().parts.push_back(ContentPart::of_image(image));
    std::string reply;
    try {
      reply = chat(vlm, bundle);
    } catch (const Error& e) {
      if (e.code() != Errc::BackendUnavailable && e.code() != Errc::MalformedBackendReply) throw;
      sel.entries.push_back(
          make_entry(scratch, FormatError{FormatErrorKind::NotParsable, "", "strategy request failed: " + std::string(e.what())}, ""));
      continue;
    }
    if (auto s = parse_strategy_reply(reply)) {
      sel.strategy = *s;
      sel.entries.push_back(make_entry(scratch, AgentAction{SetStrategy{*s, "initial strategy"}}, reply));
      return sel;
    }
    sel.entries.push_back(
        make_entry(scratch, FormatError{FormatErrorKind::NotParsable, reply, "no strategy named in reply"}, reply));
    reminder = "\nYour previous reply named no strategy. Reply with {\"strategy\":\"<one of the four names>\"}.";
  }
  sel.fell_back = true;
  sel.strategy = Strategy::DirectRetrieval;
  auto entry = make_entry(scratch, AgentAction{SetStrategy{Strategy::DirectRetrieval, "fallback"}}, "");
  entry.note = "strategy fallback after " + std::to_string(attempts) + " failed attempts";
  sel.entries.push_back(std::move(entry));
  return sel;
}

struct ScrutinyOutcome {
  ScrutinyResult result;  // Continue when the reply was unusable
  std::string raw_text;
  bool parse_failed = false;
};

/// Classifies a scrutiny reply; unparseable replies become Continue.
inline ScrutinyOutcome classify_scrutiny(std::string raw) {
  ScrutinyOutcome out;
  if (auto r = parse_verdict_reply(raw)) {
    out.result = *r;
  } else {
    out.parse_failed = true;
  }
  out.raw_text = std::move(raw);
  return out;
}

/// One scrutiny turn: shows the working-mask overlay and asks for a verdict.
inline ScrutinyOutcome verify_progress(VlmBackend& vlm, MessageBundle conversation, const WorkingState& state,
                                       const OverlayStyle& style = {}) {
  OverlayStyle s = style;
  s.fill_color = kWorkingColor;
  s.outline_color = kWorkingColor;
  s.caption = "working";
  Message request{Role::User, {ContentPart::of_text(render_scrutiny_request(state.query))}};
  request.parts.push_back(ContentPart::of_text("working"));
  request.parts.push_back(ContentPart::of_image(render_overlay(*state.image, state.working_mask, s)));
  conversation.push_back(std::move(request));
  return classify_scrutiny(chat(vlm, conversation));
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct RunOptions {
  std::function<std::chrono::steady_clock::time_point()> clock = [] { return std::chrono::steady_clock::now(); };
  /// Called with every overlay set shown to the VLM (native resolution).
  std::function<void(int round, std::string_view stage, std::span<const CaptionedImage>)> on_overlays;
};

struct InferenceResult {
  RasterMask mask;
  Trace trace;
};

class InferenceSession {
 public:
  InferenceSession(const Image& image, std::string query, VlmBackend& vlm, SegmenterBackend& seg,
                   EngineConfig config = {}, RunOptions options = {})
      : vlm_(vlm), seg_(seg), config_(config), options_(std::move(options)),
        state_(image, std::move(query), config.max_rounds) {
    config_.validate();
    if (detail::trim(state_.query).empty()) throw Error(Errc::InvalidArgument, "query must be non-empty");
    style_ = config_.overlay_style();
  }

  InferenceResult run() {
    started_ = options_.clock();
    auto sel = select_strategy(vlm_, *state_.image, state_.query, config_.failure_limit);
    state_.strategy = sel.strategy;
    for (auto& e : sel.entries) state_.history.push_back(std::move(e));

    conversation_.push_back(Message::text(Role::System, render_system_prompt(state_.query, state_.strategy)));
    show(examine_each_mask(*state_.image, {}, state_.working_mask, style_), "working");

    const int turn_cap = 3 * config_.max_rounds;
    int turns = 0;
    while (!termination_) {
      if (config_.deadline && options_.clock() - started_ >= *config_.deadline) {
        finish(TerminationReason::BudgetExhausted, "wall-clock deadline reached");
        break;
      }
      if (turns >= turn_cap) {
        finish(TerminationReason::BudgetExhausted, "VLM turn cap of " + std::to_string(turn_cap) + " reached");
        break;
      }
      ++turns;
      step();
    }
    return result();
  }

  /// The mask and trace reached so far. After an exception escaped run(),
  /// this closes the trace as Unrecoverable with `note`.
  InferenceResult partial_result(std::string note) {
    if (!termination_) finish(TerminationReason::Unrecoverable, std::move(note));
    return result();
  }

  const WorkingState& state() const { return state_; }

 private:
  InferenceResult result() const {
    Trace trace;
    trace.header.image_id = state_.image->id;
    trace.header.width = state_.image->width();
    trace.header.height = state_.image->height();
    trace.header.query = state_.query;
    trace.header.config = config_.to_json();
    trace.entries = state_.history;
    trace.termination = *termination_;
    trace.termination_note = termination_note_;
    trace.final_mask = state_.working_mask;
    trace.segment_calls = state_.round;
    trace.reasoning_steps = count_reasoning_steps(trace);
    trace.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(options_.clock() - started_);
    return InferenceResult{state_.working_mask, std::move(trace)};
  }

  void finish(TerminationReason reason, std::string note = {}) {
    termination_ = reason;
    termination_note_ = std::move(note);
  }

  void show(std::vector<CaptionedImage> overlays, std::string_view stage) {
    if (options_.on_overlays) options_.on_overlays(state_.round, stage, overlays);
    if (config_.grid_overlays && overlays.size() > 1) {
      pending_overlays_ = {compose_grid(overlays)};
    } else {
      pending_overlays_ = std::move(overlays);
    }
  }

  RoundDigest digest_for_turn() {
    RoundDigest d;
    d.round = state_.round;
    d.strategy = state_.strategy;
    d.working_area = state_.working_mask.area();
    d.remaining_budget = state_.budget - state_.round;
    for (const auto& e : state_.history) d.history.push_back(summarize(e));
    for (const auto& c : state_.candidate_pool) {
      d.pool.push_back(candidate_caption(c.candidate_id) + ": " + dump_json(c.source_phrase) + " score " +
                       score_text(c.score) + ", " + std::to_string(c.mask.area()) + " px");
    }
    if (state_.last_scrutiny) {
      d.last_verdict = std::string(to_string(state_.last_scrutiny->verdict));
      if (!state_.last_scrutiny->detail.empty()) *d.last_verdict += ": " + state_.last_scrutiny->detail;
    }
    d.reminder = std::exchange(state_.pending_reminder, std::nullopt);
    return d;
  }

  static std::string score_text(double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
  }

  static std::string summarize(const HistoryEntry& e) {
    if (const auto* fe = std::get_if<FormatError>(&e.action)) {
      return "invalid reply (" + std::string(to_string(fe->kind)) + ")";
    }
    std::string line = describe(std::get<AgentAction>(e.action));
    if (e.segment_prompt) {
      line += e.tool_failed ? " -> segmenter failed" : " -> " + std::to_string(e.candidates.size()) + " candidates";
    }
    if (e.edit) {
      line += " -> +" + std::to_string(e.pixels_added) + "/-" + std::to_string(e.pixels_removed) + " px, area " +
              std::to_string(e.area_after);
    }
    if (e.verdict) line += " [scrutiny: " + std::string(to_string(*e.verdict)) + "]";
    return line;
  }

  // Keeps only the newest message's images to bound context size.
  void append_user_message(Message msg) {
    for (auto& m : conversation_) {
      for (auto& p : m.parts) {
        if (p.is_image()) p = ContentPart::of_text("[earlier overlay omitted]");
      }
    }
    conversation_.push_back(std::move(msg));
  }

  static bool is_backend_error(const Error& e) {
    return e.code() == Errc::BackendUnavailable || e.code() == Errc::MalformedBackendReply;
  }

  void record(HistoryEntry e) {
    e.area_after = state_.working_mask.area();
    e.mask_digest = digest(state_.working_mask);
    if (config_.keep_snapshots) e.snapshot = rle_encode(state_.working_mask);
    state_.history.push_back(std::move(e));
  }

  bool handle_recovery(const Failure& failure) {
    if (std::holds_alternative<BackendFailure>(failure)) backend_failed_ = true;
    const RecoveryAction decision = recover(failure, state_, config_.failure_limit);
    if (decision == RecoveryAction::Abort) {
      finish(TerminationReason::Unrecoverable, "consecutive-failure limit reached");
      return false;
    }
    if (decision == RecoveryAction::ReinitLocalStep) {
      show(examine_each_mask(*state_.image, {}, state_.working_mask, style_), "working");
    }
    return true;
  }

  // The backend counter survives well-formed replies and only resets after a
  // step in which neither backend failed.
  void step() {
    backend_failed_ = false;
    step_once();
    if (!backend_failed_) state_.counters.consecutive_backend = 0;
  }

  void step_once() {
    Message msg = render_round_context(digest_for_turn(), pending_overlays_);
    MessageBundle bundle = conversation_;
    bundle.push_back(msg);
    std::string reply;
    try {
      reply = chat(vlm_, bundle);
    } catch (const Error& e) {
      if (!is_backend_error(e)) throw;
      HistoryEntry entry = make_entry(state_, FormatError{FormatErrorKind::NotParsable, "", "VLM unavailable"}, "");
      entry.note = std::string("vlm backend failure: ") + e.what();
      record(std::move(entry));
      handle_recovery(BackendFailure{e.what()});
      return;  // the turn is dropped from the conversation
    }
    append_user_message(std::move(msg));
    conversation_.push_back(Message::text(Role::Assistant, reply));
    pending_overlays_.clear();

    const auto ids = state_.pool_ids();
    ParseResult parsed = parse_action(reply, ids);
    if (auto* fe = std::get_if<FormatError>(&parsed)) {
      FormatError err = *fe;
      record(make_entry(state_, err, reply));
      handle_recovery(err);
      return;
    }
    state_.counters.consecutive_format = 0;
    const AgentAction action = std::get<AgentAction>(parsed);

    std::visit([&](const auto& a) { handle(a, action, reply); }, action);
    if (!termination_ &&
        detect_stall(state_.history, config_.stall_window, config_.stall_min_delta)) {
      finish(TerminationReason::Stalled, "no material change over the stall window");
    }
  }

  void handle(const SegmentPhrase& a, const AgentAction& action, const std::string& raw) {
    HistoryEntry entry = make_entry(state_, action, raw);
    if (state_.round >= state_.budget) {
      entry.note = "segment budget exhausted; call not made";
      record(std::move(entry));
      finish(TerminationReason::BudgetExhausted, "segment_phrase budget of " + std::to_string(state_.budget) + " used");
      return;
    }
    ++state_.round;
    entry.round = state_.round;
    entry.segment_prompt = a.prompt;
    try {
      state_.candidate_pool = segment_phrase(seg_, *state_.image, a.prompt, config_.candidate_cap);
    } catch (const Error& e) {
      if (!is_backend_error(e)) throw;
      entry.tool_failed = true;
      entry.note = std::string("segmenter failure: ") + e.what();
      record(std::move(entry));
      handle_recovery(BackendFailure{e.what()});
      return;
    }
    for (const auto& c : state_.candidate_pool) {
      entry.candidates.push_back(CandidateSummary{c.candidate_id, c.source_phrase, c.score, c.mask.area()});
    }
    if (state_.candidate_pool.empty()) entry.note = "no candidates found";
    record(std::move(entry));
    show(examine_each_mask(*state_.image, state_.candidate_pool, state_.working_mask, style_), "candidates");
  }

  void handle(const UpdateWorkingMask& a, const AgentAction& action, const std::string& raw) {
    HistoryEntry entry = make_entry(state_, action, raw);
    std::vector<RasterMask> selected;
    EditRecord rec{a.op, a.candidate_ids, {}};
    for (auto id : a.candidate_ids) {
      const auto& cand = state_.candidate_pool.at(static_cast<std::size_t>(id - 1));
      selected.push_back(cand.mask);
      rec.selected.push_back(rle_encode(cand.mask));
    }
    RasterMask next = apply_edit(state_.working_mask, a.op, selected);
    entry.pixels_added = subtract(next, state_.working_mask).area();
    entry.pixels_removed = subtract(state_.working_mask, next).area();
    entry.edit = std::move(rec);
    state_.working_mask = std::move(next);

    scrutinize(entry);
    record(std::move(entry));
    if (!termination_) show(examine_each_mask(*state_.image, {}, state_.working_mask, style_), "working");
  }

  void handle(const SetStrategy& a, const AgentAction& action, const std::string& raw) {
    state_.strategy = a.strategy;
    conversation_.front() = Message::text(Role::System, render_system_prompt(state_.query, state_.strategy));
    record(make_entry(state_, action, raw));
  }

  void handle(const Finalize& a, const AgentAction& action, const std::string& raw) {
    HistoryEntry entry = make_entry(state_, action, raw);
    if (!a.verified) {
      entry.note = "agent finalized without verification";
      record(std::move(entry));
      finish(TerminationReason::Stalled, "agent gave up without verifying the mask");
      return;
    }
    scrutinize(entry);
    const bool accepted = entry.verdict && *entry.verdict == Verdict::Satisfied;
    if (!accepted && !termination_) entry.note = "finalize rejected by scrutiny";
    record(std::move(entry));
    if (accepted) finish(TerminationReason::Verified);
  }

  // Runs one scrutiny turn and stores its outcome on `entry`.
  void scrutinize(HistoryEntry& entry) {
    ScrutinyOutcome out;
    try {
      out = verify_progress(vlm_, conversation_, state_, style_);
    } catch (const Error& e) {
      if (!is_backend_error(e)) throw;
      entry.note = std::string("scrutiny unavailable: ") + e.what();
      handle_recovery(BackendFailure{e.what()});
      return;
    }
    entry.verdict = out.result.verdict;
    entry.verdict_detail = out.result.detail;
    entry.verdict_raw = out.raw_text;
    state_.last_scrutiny = out.result;
    if (out.parse_failed) {
      entry.note = "scrutiny reply not parsable; treated as continue";
      handle_recovery(ScrutinyParseFailure{out.raw_text});
    } else {
      state_.counters.consecutive_format = 0;
    }
  }

  VlmBackend& vlm_;
  SegmenterBackend& seg_;
  EngineConfig config_;
  RunOptions options_;
  OverlayStyle style_;
  WorkingState state_;
  MessageBundle conversation_;
  std::vector<CaptionedImage> pending_overlays_;
  std::optional<TerminationReason> termination_;
  std::string termination_note_;
  bool backend_failed_ = false;
  std::chrono::steady_clock::time_point started_{};
};

inline InferenceResult run_inference(const Image& image, std::string query, VlmBackend& vlm, SegmenterBackend& seg,
                                     EngineConfig config = {}, RunOptions options = {}) {
  return InferenceSession(image, std::move(query), vlm, seg, std::move(config), std::move(options)).run();
}

}  // namespace vasa
