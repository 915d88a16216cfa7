#include <gtest/gtest.h>

#include <chrono>
#include <functional>

#include "demo_scene.hpp"
#include "oracles.hpp"
#include "vasa/engine.hpp"

using namespace vasa;

namespace {

/// VLM driven by a callback; sees every bundle before answering.
class FnVlm final : public VlmBackend {
 public:
  explicit FnVlm(std::function<std::string(const MessageBundle&)> f) : f_(std::move(f)) {}
  std::string chat(const MessageBundle& m) override { return f_(m); }

 private:
  std::function<std::string(const MessageBundle&)> f_;
};

bool is_scrutiny_turn(const MessageBundle& m, std::string_view query) {
  return m.back().parts.front().text == render_scrutiny_request(query);
}

bool is_strategy_turn(const MessageBundle& m) { return m.size() == 1; }

std::string last_text(const MessageBundle& m) { return m.back().parts.front().text; }

RunOptions fixed_clock() {
  RunOptions o;
  o.clock = [] { return std::chrono::steady_clock::time_point{}; };
  return o;
}

struct Fixture : ::testing::Test {
  demo::CatScene cat = demo::make_cat();
  demo::MugScene mug = demo::make_mug();
  FixtureSegmenter seg = demo::make_fixtures(cat, mug);

  // head ∖ (ears ∪ eyes), computed pixel by pixel.
  oracle::Grid expected_bare_head() const {
    const auto ears = oracle::zip(oracle::from_mask(cat.left_ear), oracle::from_mask(cat.right_ear),
                                  [](bool a, bool b) { return a || b; });
    const auto eyes = oracle::zip(oracle::from_mask(cat.left_eye), oracle::from_mask(cat.right_eye),
                                  [](bool a, bool b) { return a || b; });
    const auto parts = oracle::zip(ears, eyes, [](bool a, bool b) { return a || b; });
    return oracle::zip(oracle::from_mask(cat.head), parts, [](bool h, bool p) { return h && !p; });
  }

  InferenceResult run_script(const nlohmann::json& turns, EngineConfig cfg = {}, RunOptions opt = fixed_clock()) {
    ScriptedVlm vlm(script_from_json(turns));
    return run_inference(cat.image, demo::kCatQuery, vlm, seg, cfg, std::move(opt));
  }
};

nlohmann::json insert_at(nlohmann::json turns, std::size_t pos, const std::vector<std::string>& extra) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < turns.size(); ++i) {
    if (i == pos) {
      for (const auto& e : extra) out.push_back(e);
    }
    out.push_back(turns[i]);
  }
  return out;
}

constexpr std::size_t kAfterFirstUpdate = 4;  // strategy, segment, update, scrutiny

}  // namespace

TEST_F(Fixture, CatWalkthroughIsVerified) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = run_script(demo::cat_walkthrough().json());
  const auto elapsed = std::chrono::steady_clock::now() - t0;
  EXPECT_EQ(res.trace.termination, TerminationReason::Verified);
  EXPECT_EQ(res.trace.reasoning_steps, 6);
  EXPECT_EQ(res.trace.segment_calls, 3);
  const auto expected = expected_bare_head();
  EXPECT_EQ(oracle::from_mask(res.mask).px, expected.px);
  EXPECT_EQ(res.mask.area(), oracle::count(expected));
  ASSERT_TRUE(res.trace.final_mask);
  EXPECT_EQ(*res.trace.final_mask, res.mask);
  EXPECT_LT(elapsed, std::chrono::seconds(1));
  EXPECT_TRUE(verify_trace(res.trace).ok);
}

TEST_F(Fixture, CandidatesAreCappedAndOverlaysShown) {
  EngineConfig cfg;
  cfg.candidate_cap = 1;
  std::vector<std::pair<int, std::string>> shown;
  RunOptions opt = fixed_clock();
  opt.on_overlays = [&](int round, std::string_view stage, std::span<const CaptionedImage> imgs) {
    shown.emplace_back(round, std::string(stage) + ":" + std::to_string(imgs.size()));
  };
  auto turns = demo::ScriptWriter().segment("cat ears").update(EditOp::Replace, {1}).finalize().json();
  const auto res = run_script(turns, cfg, opt);
  EXPECT_EQ(res.trace.termination, TerminationReason::Verified);
  EXPECT_EQ(res.mask, cat.left_ear);
  ASSERT_GE(shown.size(), 3u);
  EXPECT_EQ(shown[0], (std::pair<int, std::string>{0, "working:1"}));
  EXPECT_EQ(shown[1], (std::pair<int, std::string>{1, "candidates:2"}));
  EXPECT_EQ(shown[2], (std::pair<int, std::string>{1, "working:1"}));
}

TEST_F(Fixture, NeverFinalizingAgentHitsSegmentBudget) {
  int asked = 0;
  FnVlm vlm([&](const MessageBundle& m) -> std::string {
    if (is_strategy_turn(m)) return R"({"strategy":"direct-retrieval"})";
    return serialize_action(AgentAction{SegmentPhrase{"part " + std::to_string(++asked)}});
  });
  const auto res = run_inference(cat.image, demo::kCatQuery, vlm, seg, {}, fixed_clock());
  EXPECT_EQ(res.trace.termination, TerminationReason::BudgetExhausted);
  EXPECT_EQ(res.trace.segment_calls, 20);
  int made = 0;
  for (const auto& e : res.trace.entries) made += e.segment_prompt ? 1 : 0;
  EXPECT_EQ(made, 20);
}

TEST_F(Fixture, BusyButNeverFinalizingAgentHitsSegmentBudget) {
  bool add = true;
  bool segment_next = true;
  FnVlm vlm([&](const MessageBundle& m) -> std::string {
    if (is_strategy_turn(m)) return R"({"strategy":"direct-retrieval"})";
    if (is_scrutiny_turn(m, demo::kCatQuery)) return "continue";
    const bool seg_turn = segment_next;
    segment_next = !segment_next;
    if (seg_turn) return serialize_action(AgentAction{SegmentPhrase{"cat head"}});
    const EditOp op = add ? EditOp::Add : EditOp::Remove;
    add = !add;
    return serialize_action(AgentAction{UpdateWorkingMask{op, {1}}});
  });
  const auto res = run_inference(cat.image, demo::kCatQuery, vlm, seg, {}, fixed_clock());
  EXPECT_EQ(res.trace.termination, TerminationReason::BudgetExhausted);
  EXPECT_EQ(res.trace.segment_calls, 20);
}

TEST_F(Fixture, SmallerBudgetIsRespected) {
  EngineConfig cfg;
  cfg.max_rounds = 4;
  int asked = 0;
  FnVlm vlm([&](const MessageBundle& m) -> std::string {
    if (is_strategy_turn(m)) return R"({"strategy":"direct-retrieval"})";
    return serialize_action(AgentAction{SegmentPhrase{"p" + std::to_string(++asked)}});
  });
  const auto res = run_inference(cat.image, demo::kCatQuery, vlm, seg, cfg, fixed_clock());
  EXPECT_EQ(res.trace.termination, TerminationReason::BudgetExhausted);
  EXPECT_EQ(res.trace.segment_calls, 4);
}

TEST_F(Fixture, ZeroProgressStallsWithinWindow) {
  demo::ScriptWriter w;
  w.segment("cat head").update(EditOp::Replace, {1});
  for (int i = 0; i < 10; ++i) w.segment("cat head").update(EditOp::Replace, {1});
  const auto res = run_script(w.json());
  EXPECT_EQ(res.trace.termination, TerminationReason::Stalled);
  std::size_t last_change = 0;
  for (std::size_t i = 0; i < res.trace.entries.size(); ++i) {
    const auto& e = res.trace.entries[i];
    if (e.pixels_added + e.pixels_removed > 0) last_change = i;
  }
  ASSERT_GT(last_change, 0u);
  EXPECT_LE(res.trace.entries.size() - 1 - last_change, 3u);
  EXPECT_EQ(res.mask, cat.head);
}

TEST_F(Fixture, MalformedRepliesRecoverUpToLimit) {
  const std::vector<std::string> junk{"I am not sure what to do.", R"({"action":"fly_away"})",
                                      R"({"action":"update_working_mask","op":"add","candidate_ids":[7]})"};
  for (std::size_t k = 1; k <= 3; ++k) {
    const std::vector<std::string> bad(junk.begin(), junk.begin() + static_cast<long>(k));
    ScriptedVlm vlm(script_from_json(insert_at(demo::cat_walkthrough().json(), kAfterFirstUpdate, bad)));
    std::unique_ptr<InferenceSession> session;
    std::size_t seen = 0;
    bool monotone = true;
    FnVlm probe([&](const MessageBundle& m) {
      const std::size_t now = session->state().history.size();
      monotone = monotone && now >= seen;
      seen = now;
      return vlm.chat(m);
    });
    session = std::make_unique<InferenceSession>(cat.image, demo::kCatQuery, probe, seg, EngineConfig{}, fixed_clock());
    const auto res = session->run();
    EXPECT_TRUE(monotone);
    EXPECT_EQ(res.trace.termination, TerminationReason::Verified) << k;
    EXPECT_EQ(oracle::from_mask(res.mask).px, expected_bare_head().px);
    std::size_t errors = 0;
    for (const auto& e : res.trace.entries) errors += e.is_format_error() ? 1 : 0;
    EXPECT_EQ(errors, k);

    // The turn after each bad reply carries the corrective reminder.
    const auto& received = vlm.received();
    const auto err = std::get<FormatError>(parse_action(bad.front(), std::vector<CandidateId>{1}));
    const std::string& next = last_text(received[kAfterFirstUpdate + 1]);
    EXPECT_NE(next.find(render_format_reminder(err)), std::string::npos) << next;
  }
}

TEST_F(Fixture, FourthMalformedReplyAborts) {
  const std::vector<std::string> bad(4, "no json at all");
  ScriptedVlm vlm(script_from_json(insert_at(demo::cat_walkthrough().json(), kAfterFirstUpdate, bad)));
  std::unique_ptr<InferenceSession> session;
  std::size_t seen = 0;
  bool monotone = true;
  FnVlm probe([&](const MessageBundle& m) {
    const std::size_t now = session->state().history.size();
    monotone = monotone && now >= seen;
    seen = now;
    return vlm.chat(m);
  });
  session = std::make_unique<InferenceSession>(cat.image, demo::kCatQuery, probe, seg, EngineConfig{}, fixed_clock());
  const auto res = session->run();
  EXPECT_TRUE(monotone);
  EXPECT_EQ(res.trace.termination, TerminationReason::Unrecoverable);
  EXPECT_GT(res.mask.area(), 0u);
  EXPECT_EQ(res.mask, cat.head);
  EXPECT_EQ(res.trace.entries.size(), seen + 1);
  EXPECT_TRUE(verify_trace(res.trace).ok);
}

TEST_F(Fixture, GoodReplyResetsFormatCounter) {
  demo::ScriptWriter w;
  for (int i = 0; i < 3; ++i) w.raw("oops");
  w.segment("cat head");
  for (int i = 0; i < 3; ++i) w.raw("oops");
  w.update(EditOp::Replace, {1}).finalize();
  const auto res = run_script(w.json());
  EXPECT_EQ(res.trace.termination, TerminationReason::Verified);
  EXPECT_EQ(res.mask, cat.head);
}

TEST_F(Fixture, VlmOutageIsRetriedOnceThenAborts) {
  const nlohmann::json outage = {{"error", "unavailable"}};
  auto one = demo::cat_walkthrough().json();
  one.insert(one.begin() + kAfterFirstUpdate, outage);
  const auto ok = run_script(one);
  EXPECT_EQ(ok.trace.termination, TerminationReason::Verified);
  bool noted = false;
  for (const auto& e : ok.trace.entries) noted = noted || e.note.rfind("vlm backend failure", 0) == 0;
  EXPECT_TRUE(noted);

  auto two = demo::cat_walkthrough().json();
  two.insert(two.begin() + kAfterFirstUpdate, outage);
  two.insert(two.begin() + kAfterFirstUpdate, outage);
  const auto bad = run_script(two);
  EXPECT_EQ(bad.trace.termination, TerminationReason::Unrecoverable);
  EXPECT_EQ(bad.mask, cat.head);
}

TEST_F(Fixture, SegmenterOutageReinitializesStep) {
  class Flaky final : public SegmenterBackend {
   public:
    Flaky(SegmenterBackend& inner, int failures) : inner_(inner), failures_(failures) {}
    std::vector<CandidateMask> segment(const Image& img, std::string_view p) override {
      if (failures_-- > 0) throw Error(Errc::BackendUnavailable, "segmenter down");
      return inner_.segment(img, p);
    }

   private:
    SegmenterBackend& inner_;
    int failures_;
  };
  auto turns = demo::ScriptWriter().segment("cat head").segment("cat head").update(EditOp::Replace, {1}).finalize();
  Flaky once(seg, 1);
  ScriptedVlm vlm(turns.script());
  const auto res = run_inference(cat.image, demo::kCatQuery, vlm, once, {}, fixed_clock());
  EXPECT_EQ(res.trace.termination, TerminationReason::Verified);
  EXPECT_EQ(res.mask, cat.head);
  EXPECT_TRUE(res.trace.entries.at(1).tool_failed);
  EXPECT_EQ(res.trace.reasoning_steps, 2);

  Flaky twice(seg, 2);
  ScriptedVlm vlm2(turns.script());
  const auto res2 = run_inference(cat.image, demo::kCatQuery, vlm2, twice, {}, fixed_clock());
  EXPECT_EQ(res2.trace.termination, TerminationReason::Unrecoverable);
}

TEST_F(Fixture, UnverifiedFinalizeStalls) {
  auto turns = demo::ScriptWriter().segment("cat head").update(EditOp::Replace, {1}).json();
  turns.push_back(serialize_action(AgentAction{Finalize{false, "cannot find it"}}));
  const auto res = run_script(turns);
  EXPECT_EQ(res.trace.termination, TerminationReason::Stalled);
  EXPECT_EQ(res.mask, cat.head);
}

TEST_F(Fixture, RejectedFinalizeKeepsGoing) {
  demo::ScriptWriter w(Strategy::OversegmentAndRemove);
  w.segment("cat head").update(EditOp::Replace, {1}).finalize("extra regions: the ears and eyes are included");
  w.segment("cat ears").update(EditOp::Remove, {1, 2});
  w.segment("cat eyes").update(EditOp::Remove, {1, 2}).finalize();
  const auto res = run_script(w.json());
  EXPECT_EQ(res.trace.termination, TerminationReason::Verified);
  EXPECT_EQ(oracle::from_mask(res.mask).px, expected_bare_head().px);
  bool rejected = false;
  for (const auto& e : res.trace.entries) {
    if (e.note == "finalize rejected by scrutiny") {
      rejected = true;
      EXPECT_EQ(e.verdict, Verdict::ExtraRegions);
    }
  }
  EXPECT_TRUE(rejected);
}

TEST_F(Fixture, UnparsableScrutinyIsTreatedAsContinue) {
  demo::ScriptWriter w;
  w.segment("cat head").raw(serialize_action(AgentAction{UpdateWorkingMask{EditOp::Replace, {1}}})).raw("hmm");
  w.finalize();
  const auto res = run_script(w.json());
  EXPECT_EQ(res.trace.termination, TerminationReason::Verified);
  EXPECT_EQ(res.trace.entries.at(2).verdict, Verdict::Continue);
}

TEST_F(Fixture, DeterministicTraces) {
  const auto a = run_script(demo::cat_walkthrough().json());
  const auto b = run_script(demo::cat_walkthrough().json());
  EXPECT_EQ(trace_to_jsonl(a.trace), trace_to_jsonl(b.trace));
}

TEST_F(Fixture, DeadlineEndsRun) {
  EngineConfig cfg;
  cfg.deadline = std::chrono::seconds(5);
  auto ticks = std::make_shared<int>(0);
  RunOptions opt;
  opt.clock = [ticks] { return std::chrono::steady_clock::time_point{} + std::chrono::seconds((*ticks)++); };
  const auto res = run_script(demo::cat_walkthrough().json(), cfg, opt);
  EXPECT_EQ(res.trace.termination, TerminationReason::BudgetExhausted);
  EXPECT_NE(res.trace.termination_note.find("deadline"), std::string::npos);
}

TEST_F(Fixture, StrategyFallback) {
  ScriptedVlm vlm(script_from_json(nlohmann::json::array({"?", "??", "???"})));
  const auto sel = select_strategy(vlm, cat.image, demo::kCatQuery, 3);
  EXPECT_TRUE(sel.fell_back);
  EXPECT_EQ(sel.strategy, Strategy::DirectRetrieval);
  ASSERT_EQ(sel.entries.size(), 4u);
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(sel.entries[i].is_format_error());
  EXPECT_FALSE(sel.entries[3].is_format_error());

  ScriptedVlm good(script_from_json(nlohmann::json::array({R"({"strategy":"undersegment-and-add"})"})));
  const auto ok = select_strategy(good, cat.image, demo::kCatQuery, 3);
  EXPECT_FALSE(ok.fell_back);
  EXPECT_EQ(ok.strategy, Strategy::UndersegmentAndAdd);
  EXPECT_EQ(ok.entries.size(), 1u);
}

TEST_F(Fixture, RunOnMugImage) {
  auto turns = demo::ScriptWriter().segment("mug handle").update(EditOp::Replace, {1}).finalize().json();
  ScriptedVlm vlm(script_from_json(turns));
  const auto res = run_inference(mug.image, "mug handle", vlm, seg, {}, fixed_clock());
  EXPECT_EQ(res.trace.termination, TerminationReason::Verified);
  EXPECT_EQ(res.mask, mug.handle);
  EXPECT_THROW(run_inference(mug.image, "   ", vlm, seg), Error);
}

namespace {

HistoryEntry round_entry(std::optional<std::string> prompt, std::uint64_t added = 0, std::uint64_t removed = 0) {
  HistoryEntry e;
  e.action = AgentAction{SegmentPhrase{prompt.value_or("x")}};
  e.segment_prompt = std::move(prompt);
  e.pixels_added = added;
  e.pixels_removed = removed;
  return e;
}

HistoryEntry bad_entry() {
  HistoryEntry e;
  e.action = FormatError{FormatErrorKind::NotParsable, "", ""};
  return e;
}

}  // namespace

TEST(DetectStall, Cases) {
  std::vector<HistoryEntry> h;
  EXPECT_FALSE(detect_stall(h, 3));
  h = {round_entry("a"), round_entry("a"), round_entry("a")};
  EXPECT_FALSE(detect_stall(h, 3));  // first use of "a" is in the window
  h = {round_entry("a"), round_entry("a"), round_entry("A "), round_entry("a")};
  EXPECT_TRUE(detect_stall(h, 3));
  h = {round_entry("a"), round_entry("a"), round_entry("a", 1), round_entry("a")};
  EXPECT_FALSE(detect_stall(h, 3));
  EXPECT_TRUE(detect_stall(h, 3, 1));
  h = {round_entry("a"), round_entry("a"), round_entry("b"), round_entry("a")};
  EXPECT_FALSE(detect_stall(h, 3));
  h = {round_entry("a"), round_entry("a"), bad_entry(), round_entry("a"), bad_entry()};
  EXPECT_FALSE(detect_stall(h, 3));
  h.push_back(round_entry("a"));
  EXPECT_TRUE(detect_stall(h, 3));
  EXPECT_THROW(detect_stall(h, 0), Error);
}

TEST(Recover, CountersAndActions) {
  Image img(2, 2);
  WorkingState s(img, "q", 20);
  const FormatError fe{FormatErrorKind::NotParsable, "", ""};
  for (int i = 0; i < 3; ++i) EXPECT_EQ(recover(fe, s, 3), RecoveryAction::RetryWithReminder);
  EXPECT_TRUE(s.pending_reminder);
  EXPECT_EQ(recover(ScrutinyParseFailure{"?"}, s, 3), RecoveryAction::Abort);
  reset_failure_counters(s);
  s.candidate_pool.push_back(CandidateMask{1, "a", 0.5, RasterMask(2, 2)});
  EXPECT_EQ(recover(BackendFailure{"x"}, s, 3), RecoveryAction::ReinitLocalStep);
  EXPECT_TRUE(s.candidate_pool.empty());
  EXPECT_EQ(recover(BackendFailure{"x"}, s, 3), RecoveryAction::Abort);
  EXPECT_EQ(to_string(RecoveryAction::RetryWithReminder), "retry_with_reminder");
}

TEST(EngineConfig, ValidationAndJson) {
  EngineConfig c;
  EXPECT_EQ(c.max_rounds, 20);
  EXPECT_EQ(c.stall_window, 3);
  EXPECT_EQ(c.failure_limit, 3);
  EXPECT_NO_THROW(c.validate());
  c.deadline = std::chrono::milliseconds(1500);
  c.grid_overlays = true;
  const auto back = EngineConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.deadline, c.deadline);
  for (auto mutate : std::vector<std::function<void(EngineConfig&)>>{
           [](EngineConfig& x) { x.max_rounds = 0; }, [](EngineConfig& x) { x.stall_window = 0; },
           [](EngineConfig& x) { x.overlay_alpha = 2; }, [](EngineConfig& x) { x.candidate_cap = 0; },
           [](EngineConfig& x) { x.deadline = std::chrono::milliseconds(0); }}) {
    EngineConfig bad;
    mutate(bad);
    try {
      bad.validate();
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidConfig);
    }
  }
  EXPECT_THROW(EngineConfig::from_json(nlohmann::json::parse(R"({"max_rounds":"many"})")), Error);
  EXPECT_THROW(EngineConfig::from_json(nlohmann::json::array()), Error);
}
