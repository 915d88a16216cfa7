#pragma once

// The action language spoken between the engine and the VLM.
//
// Every VLM reply ends with one JSON object describing a single action:
//
//   {"action":"segment_phrase","prompt":"cat head"}
//   {"action":"update_working_mask","op":"remove","candidate_ids":[1,2]}
//   {"action":"set_strategy","strategy":"oversegment-and-remove","reason":"..."}
//   {"action":"finalize","verified":true,"reason":"..."}
//
// Free-text reasoning may precede the object. It is kept verbatim in the
// trace but never interpreted.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vasa/error.hpp"
#include "vasa/image.hpp"
#include "vasa/mask.hpp"

namespace vasa {

inline constexpr std::string_view kToolSchemaVersion = "vasa-actions/1";

using CandidateId = int;

enum class Strategy { DirectRetrieval, UndersegmentAndAdd, OversegmentAndRemove, CoarseToFineRefinement };

inline constexpr std::array<Strategy, 4> kAllStrategies{Strategy::DirectRetrieval, Strategy::UndersegmentAndAdd,
                                                        Strategy::OversegmentAndRemove,
                                                        Strategy::CoarseToFineRefinement};

constexpr std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::DirectRetrieval: return "direct-retrieval";
    case Strategy::UndersegmentAndAdd: return "undersegment-and-add";
    case Strategy::OversegmentAndRemove: return "oversegment-and-remove";
    case Strategy::CoarseToFineRefinement: return "coarse-to-fine-refinement";
  }
  return "direct-retrieval";
}

namespace detail {

// Lowercases and folds '_' and whitespace runs into '-'.
inline std::string normalize_token(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_dash = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (ch == '_' || ch == '-' || std::isspace(c)) {
      pending_dash = !out.empty();
      continue;
    }
    if (pending_dash) out += '-';
    pending_dash = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

}  // namespace detail

inline std::optional<Strategy> parse_strategy(std::string_view text) {
  const std::string norm = detail::normalize_token(text);
  for (auto s : kAllStrategies) {
    if (norm == to_string(s)) return s;
  }
  return std::nullopt;
}

struct SegmentPhrase {
  std::string prompt;
  friend bool operator==(const SegmentPhrase&, const SegmentPhrase&) = default;
};

struct UpdateWorkingMask {
  EditOp op = EditOp::Add;
  std::vector<CandidateId> candidate_ids;
  friend bool operator==(const UpdateWorkingMask&, const UpdateWorkingMask&) = default;
};

struct SetStrategy {
  Strategy strategy = Strategy::DirectRetrieval;
  std::string reason;
  friend bool operator==(const SetStrategy&, const SetStrategy&) = default;
};

struct Finalize {
  bool verified = false;
  std::string reason;
  friend bool operator==(const Finalize&, const Finalize&) = default;
};

using AgentAction = std::variant<SegmentPhrase, UpdateWorkingMask, SetStrategy, Finalize>;

enum class FormatErrorKind { NotParsable, UnknownAction, SchemaViolation, UnknownCandidateId };

constexpr std::string_view to_string(FormatErrorKind k) {
  switch (k) {
    case FormatErrorKind::NotParsable: return "not_parsable";
    case FormatErrorKind::UnknownAction: return "unknown_action";
    case FormatErrorKind::SchemaViolation: return "schema_violation";
    case FormatErrorKind::UnknownCandidateId: return "unknown_candidate_id";
  }
  return "not_parsable";
}

inline std::optional<FormatErrorKind> parse_format_error_kind(std::string_view s) {
  for (auto k : {FormatErrorKind::NotParsable, FormatErrorKind::UnknownAction, FormatErrorKind::SchemaViolation,
                 FormatErrorKind::UnknownCandidateId}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

struct FormatError {
  FormatErrorKind kind = FormatErrorKind::NotParsable;
  std::string raw_text;
  std::string detail;
  friend bool operator==(const FormatError&, const FormatError&) = default;
};

using ParseResult = std::variant<AgentAction, FormatError>;

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json action_to_json(const AgentAction& action) {
  using nlohmann::json;
  return std::visit(
      [](const auto& a) -> json {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, SegmentPhrase>) {
          return json{{"action", "segment_phrase"}, {"prompt", a.prompt}};
        } else if constexpr (std::is_same_v<T, UpdateWorkingMask>) {
          return json{{"action", "update_working_mask"}, {"op", to_string(a.op)}, {"candidate_ids", a.candidate_ids}};
        } else if constexpr (std::is_same_v<T, SetStrategy>) {
          return json{{"action", "set_strategy"}, {"strategy", to_string(a.strategy)}, {"reason", a.reason}};
        } else {
          return json{{"action", "finalize"}, {"verified", a.verified}, {"reason", a.reason}};
        }
      },
      action);
}

inline std::string dump_json(const nlohmann::json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline std::string serialize_action(const AgentAction& action) { return dump_json(action_to_json(action)); }

/// One-line human summary used in round digests.
inline std::string describe(const AgentAction& action) {
  return std::visit(
      [](const auto& a) -> std::string {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, SegmentPhrase>) {
          return "segment_phrase " + dump_json(a.prompt);
        } else if constexpr (std::is_same_v<T, UpdateWorkingMask>) {
          std::string ids;
          for (std::size_t i = 0; i < a.candidate_ids.size(); ++i) {
            if (i) ids += ",";
            ids += std::to_string(a.candidate_ids[i]);
          }
          return "update_working_mask " + std::string(to_string(a.op)) + " [" + ids + "]";
        } else if constexpr (std::is_same_v<T, SetStrategy>) {
          return "set_strategy " + std::string(to_string(a.strategy));
        } else {
          return std::string("finalize verified=") + (a.verified ? "true" : "false");
        }
      },
      action);
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

// Collects every balanced {...} span that parses as a JSON object, in order of
// appearance. Braces inside JSON strings are honoured once an object is open.
// A span that fails to parse is rescanned from its second character so that a
// valid object nested in broken text is still found.
class ObjectScanner {
 public:
  explicit ObjectScanner(std::string_view text) : text_(text) {}

  std::vector<nlohmann::json> scan() {
    std::vector<nlohmann::json> out;
    scan_from(0, text_.size(), out);
    return out;
  }

 private:
  static constexpr std::size_t kWorkLimit = std::size_t{1} << 24;

  void scan_from(std::size_t begin, std::size_t end, std::vector<nlohmann::json>& out) {
    std::size_t i = begin;
    while (i < end) {
      if (text_[i] != '{') {
        ++i;
        continue;
      }
      const std::size_t close = match(i, end);
      if (close == std::string_view::npos) {
        ++i;  // unclosed: look for objects that start later
        continue;
      }
      auto parsed = nlohmann::json::parse(text_.substr(i, close - i + 1), nullptr, false);
      if (!parsed.is_discarded() && parsed.is_object()) {
        out.push_back(std::move(parsed));
        i = close + 1;
      } else {
        ++i;
      }
    }
  }

  std::size_t match(std::size_t open, std::size_t end) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = open; i < end; ++i) {
      if (++work_ > kWorkLimit) return std::string_view::npos;
      const char ch = text_[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (ch == '\\') {
          escaped = true;
        } else if (ch == '"') {
          in_string = false;
        }
        continue;
      }
      if (ch == '"') {
        in_string = true;
      } else if (ch == '{') {
        ++depth;
      } else if (ch == '}') {
        if (--depth == 0) return i;
      }
    }
    return std::string_view::npos;
  }

  std::string_view text_;
  std::size_t work_ = 0;
};

inline FormatError format_error(FormatErrorKind kind, std::string_view raw, std::string detail) {
  return FormatError{kind, std::string(raw), std::move(detail)};
}

inline std::optional<std::string> string_field(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

inline ParseResult parse_action_object(const nlohmann::json& j, std::string_view raw,
                                       std::span<const CandidateId> pool_ids) {
  const auto name = string_field(j, "action");
  if (!name) return format_error(FormatErrorKind::SchemaViolation, raw, "\"action\" must be a string");
  const std::string action = normalize_token(*name);

  if (action == "segment-phrase") {
    auto prompt = string_field(j, "prompt");
    if (!prompt || trim(*prompt).empty()) {
      return format_error(FormatErrorKind::SchemaViolation, raw, "segment_phrase needs a non-empty \"prompt\"");
    }
    return AgentAction{SegmentPhrase{std::string(trim(*prompt))}};
  }

  if (action == "update-working-mask") {
    auto op_text = string_field(j, "op");
    auto op = op_text ? parse_edit_op(lower(trim(*op_text))) : std::nullopt;
    if (!op) return format_error(FormatErrorKind::SchemaViolation, raw, "\"op\" must be add, remove or replace");
    auto it = j.find("candidate_ids");
    if (it == j.end() || !it->is_array() || it->empty()) {
      return format_error(FormatErrorKind::SchemaViolation, raw, "\"candidate_ids\" must be a non-empty array");
    }
    UpdateWorkingMask update{*op, {}};
    for (const auto& v : *it) {
      if (!v.is_number_integer()) {
        return format_error(FormatErrorKind::SchemaViolation, raw, "candidate ids must be integers");
      }
      const auto id64 = v.get<long long>();
      if (id64 < std::numeric_limits<int>::min() || id64 > std::numeric_limits<int>::max()) {
        return format_error(FormatErrorKind::UnknownCandidateId, raw, "candidate id out of range");
      }
      const auto id = static_cast<CandidateId>(id64);
      if (std::find(update.candidate_ids.begin(), update.candidate_ids.end(), id) != update.candidate_ids.end()) {
        return format_error(FormatErrorKind::SchemaViolation, raw, "duplicate candidate id " + std::to_string(id));
      }
      update.candidate_ids.push_back(id);
    }
    for (auto id : update.candidate_ids) {
      if (std::find(pool_ids.begin(), pool_ids.end(), id) == pool_ids.end()) {
        return format_error(FormatErrorKind::UnknownCandidateId, raw,
                            "candidate " + std::to_string(id) + " is not in the current pool");
      }
    }
    return AgentAction{std::move(update)};
  }

  if (action == "set-strategy") {
    auto text = string_field(j, "strategy");
    auto strategy = text ? parse_strategy(*text) : std::nullopt;
    if (!strategy) return format_error(FormatErrorKind::SchemaViolation, raw, "unknown \"strategy\"");
    return AgentAction{SetStrategy{*strategy, string_field(j, "reason").value_or("")}};
  }

  if (action == "finalize") {
    auto it = j.find("verified");
    if (it == j.end() || !it->is_boolean()) {
      return format_error(FormatErrorKind::SchemaViolation, raw, "finalize needs a boolean \"verified\"");
    }
    return AgentAction{Finalize{it->get<bool>(), string_field(j, "reason").value_or("")}};
  }

  return format_error(FormatErrorKind::UnknownAction, raw, "unknown action \"" + *name + "\"");
}

}  // namespace detail

/// Extracts and validates the action in a VLM reply. The last JSON object
/// carrying an "action" key wins. Never throws on malformed input.
inline ParseResult parse_action(std::string_view vlm_text, std::span<const CandidateId> pool_ids) {
  try {
    auto objects = detail::ObjectScanner(vlm_text).scan();
    if (objects.empty()) {
      return detail::format_error(FormatErrorKind::NotParsable, vlm_text, "no JSON action object found");
    }
    for (auto it = objects.rbegin(); it != objects.rend(); ++it) {
      if (it->contains("action")) return detail::parse_action_object(*it, vlm_text, pool_ids);
    }
    return detail::format_error(FormatErrorKind::SchemaViolation, vlm_text, "JSON object has no \"action\" key");
  } catch (const std::exception& e) {
    return detail::format_error(FormatErrorKind::NotParsable, vlm_text, e.what());
  }
}

/// Reads the strategy named in a reply: a {"strategy": ...} object if present,
/// otherwise the strategy name mentioned last in the text.
inline std::optional<Strategy> parse_strategy_reply(std::string_view text) {
  try {
    auto objects = detail::ObjectScanner(text).scan();
    for (auto it = objects.rbegin(); it != objects.rend(); ++it) {
      if (auto s = detail::string_field(*it, "strategy")) {
        if (auto parsed = parse_strategy(*s)) return parsed;
      }
    }
  } catch (const std::exception&) {
  }
  const std::string norm = detail::normalize_token(text);
  std::optional<Strategy> best;
  std::size_t best_pos = 0;
  for (auto s : kAllStrategies) {
    const auto pos = norm.rfind(to_string(s));
    if (pos != std::string::npos && (!best || pos > best_pos)) {
      best = s;
      best_pos = pos;
    }
  }
  return best;
}

enum class Verdict { Satisfied, MissingRegions, ExtraRegions, ConceptConfusion, Continue };

constexpr std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Satisfied: return "satisfied";
    case Verdict::MissingRegions: return "missing regions";
    case Verdict::ExtraRegions: return "extra regions";
    case Verdict::ConceptConfusion: return "concept confusion";
    case Verdict::Continue: return "continue";
  }
  return "continue";
}

inline std::optional<Verdict> parse_verdict_name(std::string_view text) {
  const std::string norm = detail::normalize_token(text);
  for (auto v : {Verdict::Satisfied, Verdict::MissingRegions, Verdict::ExtraRegions, Verdict::ConceptConfusion,
                 Verdict::Continue}) {
    if (norm == detail::normalize_token(to_string(v))) return v;
  }
  return std::nullopt;
}

struct ScrutinyResult {
  Verdict verdict = Verdict::Continue;
  std::string detail;
};

/// Accepts {"verdict": "...", "detail": "..."} or a final line such as
/// "extra regions: ears".
inline std::optional<ScrutinyResult> parse_verdict_reply(std::string_view text) {
  try {
    auto objects = detail::ObjectScanner(text).scan();
    for (auto it = objects.rbegin(); it != objects.rend(); ++it) {
      if (auto v = detail::string_field(*it, "verdict")) {
        if (auto parsed = parse_verdict_name(*v)) {
          return ScrutinyResult{*parsed, detail::string_field(*it, "detail").value_or("")};
        }
      }
    }
  } catch (const std::exception&) {
  }

  std::string_view last;
  std::string_view rest = text;
  while (!rest.empty()) {
    const auto nl = rest.find('\n');
    auto line = detail::trim(rest.substr(0, nl));
    if (!line.empty()) last = line;
    if (nl == std::string_view::npos) break;
    rest.remove_prefix(nl + 1);
  }
  while (!last.empty() && (last.front() == '*' || last.front() == '`' || last.front() == '>')) last.remove_prefix(1);
  if (std::string low = detail::lower(last.substr(0, 8)); low == "verdict:") {
    last = detail::trim(last.substr(8));
  }
  const auto colon = last.find(':');
  auto head = detail::trim(last.substr(0, colon));
  while (!head.empty() && (head.back() == '*' || head.back() == '.' || head.back() == '`')) head.remove_suffix(1);
  auto verdict = parse_verdict_name(head);
  if (!verdict) return std::nullopt;
  std::string detail_text;
  if (colon != std::string_view::npos) detail_text = std::string(detail::trim(last.substr(colon + 1)));
  return ScrutinyResult{*verdict, std::move(detail_text)};
}

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

enum class Role { System, User, Assistant };

constexpr std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

struct ContentPart {
  std::string text;                    // used when image is null
  std::shared_ptr<const Image> image;  // shared so conversation copies stay cheap

  static ContentPart of_text(std::string t) { return ContentPart{std::move(t), nullptr}; }
  static ContentPart of_image(Image img) { return ContentPart{{}, std::make_shared<const Image>(std::move(img))}; }
  bool is_image() const noexcept { return image != nullptr; }
};

struct Message {
  Role role = Role::User;
  std::vector<ContentPart> parts;

  static Message text(Role role, std::string body) { return Message{role, {ContentPart::of_text(std::move(body))}}; }
};

using MessageBundle = std::vector<Message>;

inline std::string strategy_catalog() {
  return "  - direct-retrieval: the target is a single concept the segmenter already knows; segment it and "
         "replace.\n"
         "  - undersegment-and-add: the target is a collection or composition; segment each piece and add "
         "them together.\n"
         "  - oversegment-and-remove: the target is defined by exclusion; segment a broader region, then "
         "remove forbidden parts.\n"
         "  - coarse-to-fine-refinement: the target is a structurally constrained sub-region; start from a "
         "coarse mask and refine it with further adds and removes.\n";
}

inline std::string action_schema_text() {
  return "  {\"action\":\"segment_phrase\",\"prompt\":\"<short noun phrase>\"}\n"
         "  {\"action\":\"update_working_mask\",\"op\":\"add|remove|replace\",\"candidate_ids\":[<ids>]}\n"
         "  {\"action\":\"set_strategy\",\"strategy\":\"<strategy name>\",\"reason\":\"<text>\"}\n"
         "  {\"action\":\"finalize\",\"verified\":true,\"reason\":\"<text>\"}\n";
}

/// Pure function of its arguments; the query is embedded as a JSON string
/// literal so quotes, braces and control characters cannot break the contract.
inline std::string render_system_prompt(std::string_view query, Strategy strategy,
                                        std::string_view tool_schema_version = kToolSchemaVersion) {
  if (detail::trim(query).empty()) throw Error(Errc::InvalidArgument, "render_system_prompt needs a non-empty query");
  std::ostringstream out;
  out << "You are a segmentation agent. You build a binary mask for the query by editing a persistent "
         "working mask with a text-prompted segmenter.\n\n";
  out << "Schema version: " << tool_schema_version << "\n";
  out << "Query (JSON string): " << dump_json(std::string(query)) << "\n";
  out << "Current strategy: " << to_string(strategy) << "\n\n";
  out << "Strategies:\n" << strategy_catalog() << "\n";
  out << "Tools:\n"
         "  segment_phrase sends a short noun phrase to the segmenter. It returns candidate masks, each shown "
         "to you as an overlay captioned \"cand <id>\". Ids restart at 1 after every segment_phrase call.\n"
         "  update_working_mask applies add (union), remove (subtract) or replace (overwrite) to the working "
         "mask using the listed candidates of the current pool.\n"
         "  set_strategy revises your plan; it does not change the mask.\n"
         "  finalize ends the episode. Use verified=true only when the working mask matches every inclusion, "
         "exclusion, structural and relational constraint of the query. Your claim is checked before it is "
         "accepted.\n\n";
  out << "Rules:\n"
         "  - Emit exactly one action per reply.\n"
         "  - Inspect every candidate overlay against the query and the current working mask before editing.\n"
         "  - Only reference candidate ids from the most recent segment_phrase call.\n"
         "  - Do not repeat a prompt or edit that did not change the mask.\n"
         "  - Each segment_phrase call consumes one round of the budget.\n\n";
  out << "Output format: you may reason first, but the reply must end with exactly one JSON object on its "
         "own line, using one of:\n"
      << action_schema_text();
  return out.str();
}

inline std::string render_strategy_request(std::string_view query) {
  std::ostringstream out;
  out << "Query (JSON string): " << dump_json(std::string(query)) << "\n";
  out << "Analyse the structure of the target concept and choose an initial strategy:\n"
      << strategy_catalog();
  out << "End your reply with {\"strategy\":\"<strategy name>\"}.";
  return out.str();
}

inline std::string render_scrutiny_request(std::string_view query) {
  std::ostringstream out;
  out << "Scrutinize the working mask overlay against the query " << dump_json(std::string(query))
      << ". Check inclusion, exclusion, structural and relational constraints and compare with the previous "
         "state.\n"
         "Answer on the last line with one of:\n"
         "  satisfied\n  missing regions: <what>\n  extra regions: <what>\n  concept confusion: <what>\n"
         "  continue\n";
  return out.str();
}

/// Corrective message restating the contract after a malformed reply.
inline std::string render_format_reminder(const FormatError& err) {
  std::ostringstream out;
  out << "Your previous reply could not be used (" << to_string(err.kind) << ": " << err.detail
      << "). End your reply with exactly one JSON object using one of:\n"
      << action_schema_text();
  return out.str();
}

struct RoundDigest {
  int round = 0;  // segment calls made so far
  Strategy strategy = Strategy::DirectRetrieval;
  std::size_t working_area = 0;
  std::vector<std::string> history;  // one line per prior action
  std::vector<std::string> pool;     // one line per live candidate
  int remaining_budget = 0;
  std::optional<std::string> last_verdict;
  std::optional<std::string> reminder;
};

/// Textual state digest followed by captioned overlays.
inline Message render_round_context(const RoundDigest& d, std::span<const CaptionedImage> overlays) {
  std::ostringstream out;
  out << "Round: " << d.round << "\n";
  out << "Strategy: " << to_string(d.strategy) << "\n";
  if (d.working_area == 0) {
    out << "Working mask: empty\n";
  } else {
    out << "Working mask area: " << d.working_area << " px\n";
  }
  out << "Remaining segment_phrase budget: " << d.remaining_budget << "\n";
  if (d.remaining_budget == 1) {
    out << "WARNING: final round. This is your last segment_phrase call; plan to finalize afterwards.\n";
  } else if (d.remaining_budget <= 0) {
    out << "WARNING: no segment_phrase calls remain. Edit with the current candidates or finalize.\n";
  }
  out << "Actions so far:\n";
  if (d.history.empty()) out << "  (none)\n";
  for (std::size_t i = 0; i < d.history.size(); ++i) out << "  " << (i + 1) << ". " << d.history[i] << "\n";
  if (!d.pool.empty()) {
    out << "Current candidates:\n";
    for (const auto& line : d.pool) out << "  " << line << "\n";
  }
  if (d.last_verdict) out << "Last scrutiny: " << *d.last_verdict << "\n";
  if (d.reminder) out << "\n" << *d.reminder;

  Message msg{Role::User, {ContentPart::of_text(out.str())}};
  for (const auto& o : overlays) {
    msg.parts.push_back(ContentPart::of_text(o.caption));
    msg.parts.push_back(ContentPart::of_image(o.image));
  }
  return msg;
}

}  // namespace vasa
