#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "scenarios.hpp"
#include "vasa/trace.hpp"

using namespace vasa;

namespace {

// Column-major counts to a grid, background first.
oracle::Grid grid_from_rle(const Rle& r) {
  oracle::Grid g(r.width, r.height);
  std::size_t pos = 0;
  bool on = false;
  for (auto n : r.counts) {
    for (std::uint64_t k = 0; k < n; ++k, ++pos) {
      if (on) g.at(static_cast<int>(pos % r.height), static_cast<int>(pos / r.height)) = 1;
    }
    on = !on;
  }
  return g;
}

// Rebuilds the final mask from the edit records alone.
oracle::Grid replay_oracle(const Trace& t) {
  oracle::Grid m(t.header.width, t.header.height);
  for (const auto& e : t.entries) {
    if (!e.edit) continue;
    oracle::Grid sel(m.w, m.h);
    for (const auto& r : e.edit->selected) sel = oracle::zip(sel, grid_from_rle(r), [](bool a, bool b) { return a || b; });
    switch (e.edit->op) {
      case EditOp::Add: m = oracle::zip(m, sel, [](bool a, bool b) { return a || b; }); break;
      case EditOp::Remove: m = oracle::zip(m, sel, [](bool a, bool b) { return a && !b; }); break;
      case EditOp::Replace: m = sel; break;
    }
  }
  return m;
}

struct TraceFixture : ::testing::Test {
  demo::CatScene cat = demo::make_cat();
  demo::MugScene mug = demo::make_mug();
  FixtureSegmenter seg = demo::make_fixtures(cat, mug);

  Trace walkthrough(EngineConfig cfg = {}) {
    return scenarios::run(scenarios::all(cat, mug).front(), cat, mug, seg, cfg).trace;
  }
};

}  // namespace

TEST_F(TraceFixture, EveryScenarioReplays) {
  const auto all = scenarios::all(cat, mug);
  ASSERT_GE(all.size(), 18u);
  for (const auto& s : all) {
    const auto res = scenarios::run(s, cat, mug, seg);
    const auto r = verify_trace(res.trace);
    EXPECT_TRUE(r.ok) << s.name << ": " << r.detail;
    ASSERT_TRUE(r.final_mask) << s.name;
    EXPECT_EQ(*r.final_mask, res.mask) << s.name;
    EXPECT_EQ(oracle::from_mask(res.mask).px, replay_oracle(res.trace).px) << s.name;
    std::size_t edits = 0;
    for (const auto& e : res.trace.entries) edits += e.edit ? 1 : 0;
    EXPECT_EQ(r.updates_checked, edits) << s.name;

    const auto back = trace_from_jsonl(trace_to_jsonl(res.trace));
    EXPECT_TRUE(verify_trace(back).ok) << s.name;
    EXPECT_EQ(trace_to_jsonl(back), trace_to_jsonl(res.trace)) << s.name;
  }
}

TEST_F(TraceFixture, JsonlRoundTripKeepsEverything) {
  EngineConfig cfg;
  cfg.keep_snapshots = true;
  const Trace t = walkthrough(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "vasa_trace_test";
  std::filesystem::remove_all(dir);
  write_trace(dir / "sub" / "t.jsonl", t);
  const Trace back = read_trace(dir / "sub" / "t.jsonl");
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.entries, t.entries);
  EXPECT_EQ(back.termination, t.termination);
  EXPECT_EQ(back.final_mask, t.final_mask);
  EXPECT_EQ(back.reasoning_steps, t.reasoning_steps);
  EXPECT_EQ(back.segment_calls, t.segment_calls);
  EXPECT_EQ(back.termination_note, t.termination_note);
  std::size_t snapshots = 0;
  for (const auto& e : back.entries) snapshots += e.snapshot ? 1 : 0;
  EXPECT_GE(snapshots, 7u);
  std::filesystem::remove_all(dir);
}

TEST_F(TraceFixture, FlippedOpIsDetected) {
  const Trace t = walkthrough();
  const auto idx = scenarios::find_remove_after(t, "cat ears");
  ASSERT_TRUE(idx);
  for (bool edit_too : {false, true}) {
    Trace bad = t;
    scenarios::flip_op(bad, *idx, edit_too);
    const auto r = verify_trace(bad);
    EXPECT_FALSE(r.ok);
    ASSERT_TRUE(r.divergent_entry);
    EXPECT_EQ(*r.divergent_entry, *idx);
    EXPECT_EQ(r.divergent_round, t.entries[*idx].round);

    // Same tamper applied to the serialized file.
    const auto reread = trace_from_jsonl(trace_to_jsonl(bad));
    EXPECT_EQ(verify_trace(reread).divergent_entry, idx);
  }
}

TEST_F(TraceFixture, OtherTampersAreDetected) {
  const Trace t = walkthrough();
  std::size_t upd = 0;
  while (!t.entries[upd].edit) ++upd;
  {
    Trace bad = t;
    bad.entries[upd].area_after += 1;
    EXPECT_FALSE(verify_trace(bad).ok);
  }
  {
    Trace bad = t;
    bad.entries[upd].mask_digest ^= 1;
    EXPECT_FALSE(verify_trace(bad).ok);
  }
  {
    Trace bad = t;
    bad.entries[upd].edit->ids = {2};
    EXPECT_FALSE(verify_trace(bad).ok);
  }
  {
    Trace bad = t;
    bad.final_mask->set(0, 0, !bad.final_mask->get(0, 0));
    EXPECT_FALSE(verify_trace(bad).ok);
  }
  {
    Trace bad = t;
    bad.reasoning_steps = 7;
    EXPECT_FALSE(verify_trace(bad).ok);
  }
  {
    Trace bad = t;
    bad.entries[0].pixels_added = 3;
    EXPECT_FALSE(verify_trace(bad).ok);
  }
}

TEST(TraceJsonl, RejectsBrokenFiles) {
  EXPECT_THROW(trace_from_jsonl(""), Error);
  EXPECT_THROW(trace_from_jsonl("not json\n"), Error);
  EXPECT_THROW(trace_from_jsonl(R"({"type":"header","width":2,"height":2})"), Error);
  EXPECT_THROW(trace_from_jsonl(R"({"type":"header","width":2,"height":2})"
                                "\n"
                                R"({"type":"summary","termination":"exploded","reasoning_steps":0})"),
               Error);
  EXPECT_THROW(read_trace("/nonexistent/trace.jsonl"), Error);
  const auto ok = trace_from_jsonl(R"({"type":"header","width":2,"height":2})"
                                   "\n"
                                   R"({"type":"summary","termination":"verified","reasoning_steps":0})");
  EXPECT_TRUE(verify_trace(ok).ok);
}
