#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "process.hpp"
#include "scenarios.hpp"
#include "vasa/http_clients.hpp"

using namespace vasa;
namespace fs = std::filesystem;

namespace {

const std::string kCli = VASA_CLI_PATH;
const std::string kMakeDemo = MAKE_DEMO_PATH;
const std::string kBuildManifest = BUILD_MANIFEST_PATH;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct CliFixture : ::testing::Test {
  fs::path dir;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("vasa_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    const auto made = proc::run({kMakeDemo, dir.string()});
    ASSERT_EQ(made.exit_code, 0) << made.text;
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string p(const std::string& rel) const { return (dir / rel).string(); }

  proc::Output segment_cat(const std::string& out, const std::string& script = "cat_script.json") {
    return proc::run({kCli, "segment", p("images/cat.png"), demo::kCatQuery, "--scripted-vlm", p(script),
                      "--scripted-seg", p("fixtures.json"), "--out", p(out), "--dump-overlays", p(out + "/ov")});
  }

  proc::Output eval(const std::string& field, const std::string& out, const std::string& jobs = "1") {
    return proc::run({kCli, "eval", p("dataset.json"), "--scripted-vlm", p("scripts.json"), "--scripted-seg",
                      p("fixtures.json"), "--query-field", field, "--jobs", jobs, "--out", p(out)});
  }
};

}  // namespace

TEST_F(CliFixture, SegmentWritesMaskTraceAndOverlays) {
  const auto r = segment_cat("seg");
  ASSERT_EQ(r.exit_code, 0) << r.text;
  EXPECT_NE(r.text.find("termination=verified reasoning_steps=6"), std::string::npos) << r.text;
  const Image mask = read_png(dir / "seg" / "cat.mask.png");
  const auto cat = demo::make_cat();
  const RasterMask bare = cat.bare_head();
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) ASSERT_EQ(mask.at(y, x).r != 0, bare.get(y, x));
  }
  EXPECT_TRUE(fs::exists(dir / "seg" / "cat.trace.jsonl"));
  std::size_t overlays = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "seg" / "ov")) ++overlays;
  EXPECT_GT(overlays, 5u);
}

TEST_F(CliFixture, ReplayVerifiesAndCatchesTamper) {
  ASSERT_EQ(segment_cat("seg").exit_code, 0);
  const auto trace = dir / "seg" / "cat.trace.jsonl";
  const auto ok = proc::run({kCli, "replay", trace.string(), "--out", p("replayed")});
  EXPECT_EQ(ok.exit_code, 0) << ok.text;
  EXPECT_NE(ok.text.find("verified 3 update(s)"), std::string::npos) << ok.text;
  EXPECT_EQ(read_png(dir / "replayed" / "cat.trace.replay.png"), read_png(dir / "seg" / "cat.mask.png"));

  Trace t = read_trace(trace);
  const auto idx = scenarios::find_remove_after(t, "cat ears");
  ASSERT_TRUE(idx);
  scenarios::flip_op(t, *idx, true);
  write_trace(dir / "tampered.jsonl", t);
  const auto bad = proc::run({kCli, "replay", trace.string(), p("tampered.jsonl")});
  EXPECT_EQ(bad.exit_code, 1) << bad.text;
  EXPECT_NE(bad.text.find("DIVERGED at entry " + std::to_string(*idx)), std::string::npos) << bad.text;
}

TEST_F(CliFixture, ExhaustedScriptExitsWithPartialResult) {
  write_text_file(dir / "short.json", R"(["{\"strategy\":\"direct-retrieval\"}"])");
  const auto r = segment_cat("seg", "short.json");
  EXPECT_EQ(r.exit_code, 1) << r.text;
  EXPECT_NE(r.text.find("termination=unrecoverable"), std::string::npos) << r.text;
  EXPECT_TRUE(fs::exists(dir / "seg" / "cat.trace.jsonl"));
}

TEST_F(CliFixture, EvalAndMetricsAgree) {
  const auto s = eval("short", "short");
  ASSERT_EQ(s.exit_code, 0) << s.text;
  const auto l = eval("long", "long");
  ASSERT_EQ(l.exit_code, 0) << l.text;
  EXPECT_NE(slurp(dir / "short" / "report.csv"), slurp(dir / "long" / "report.csv"));
  for (const char* f : {"report.csv", "items.csv", "report.md", "records.jsonl", "predictions.json"}) {
    EXPECT_TRUE(fs::exists(dir / "short" / f)) << f;
  }
  EXPECT_TRUE(fs::exists(dir / "short" / "traces" / "cat-ears.trace.jsonl"));

  const auto four = eval("short", "short4", "4");
  ASSERT_EQ(four.exit_code, 0) << four.text;
  EXPECT_EQ(slurp(dir / "short" / "report.csv"), slurp(dir / "short4" / "report.csv"));
  EXPECT_EQ(slurp(dir / "short" / "records.jsonl"), slurp(dir / "short4" / "records.jsonl"));

  const auto m = proc::run({kCli, "metrics", p("short/predictions.json"), "--out", p("metrics")});
  ASSERT_EQ(m.exit_code, 0) << m.text;
  EXPECT_EQ(slurp(dir / "metrics" / "report.csv"), slurp(dir / "short" / "report.csv"));
}

TEST_F(CliFixture, UsageErrorsExitTwo) {
  EXPECT_EQ(proc::run({kCli}).exit_code, 2);
  EXPECT_EQ(proc::run({kCli, "segment", p("images/cat.png"), "q", "--bogus"}).exit_code, 2);
  EXPECT_EQ(proc::run({kCli, "segment", p("images/cat.png"), "q", "--scripted-seg", p("fixtures.json")}).exit_code, 2);
  EXPECT_EQ(proc::run({kCli, "eval", p("dataset.json"), "--scripted-vlm", p("scripts.json"), "--scripted-seg",
                       p("fixtures.json"), "--query-field", "medium"})
                .exit_code,
            2);
  EXPECT_EQ(proc::run({kCli, "eval", p("dataset.json"), "--scripted-vlm", p("scripts.json"), "--scripted-seg",
                       p("fixtures.json"), "--jobs", "0"})
                .exit_code,
            2);
  write_text_file(dir / "engine.json", R"({"max_rounds": 0})");
  EXPECT_EQ(proc::run({kCli, "segment", p("images/cat.png"), "q", "--scripted-vlm", p("cat_script.json"),
                       "--scripted-seg", p("fixtures.json"), "--engine-config", p("engine.json")})
                .exit_code,
            2);
  EXPECT_EQ(proc::run({kCli, "--help"}).exit_code, 0);
}

TEST_F(CliFixture, RuntimeErrorsExitOne) {
  write_text_file(dir / "broken.jsonl", "not a trace\n");
  EXPECT_EQ(proc::run({kCli, "replay", p("broken.jsonl")}).exit_code, 1);
  write_text_file(dir / "empty.json", R"({"version":1,"items":[]})");
  EXPECT_EQ(proc::run({kCli, "eval", p("empty.json"), "--scripted-vlm", p("scripts.json"), "--scripted-seg",
                       p("fixtures.json")})
                .exit_code,
            1);
}

TEST_F(CliFixture, SegmentAgainstHttpBackends) {
  httplib::Server server;
  const auto turns = demo::cat_walkthrough().json();
  std::size_t next = 0;
  std::string auth;
  const auto cat = demo::make_cat();
  auto fixtures = demo::make_fixtures(cat, demo::make_mug());
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    const std::string text = next < turns.size() ? turns[next++].get<std::string>() : "{}";
    res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}}.dump(),
                    "application/json");
  });
  server.Post("/segment", [&](const httplib::Request& req, httplib::Response& res) {
    const auto j = nlohmann::json::parse(req.body);
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : fixtures.segment(cat.image, j.at("phrase").get<std::string>())) {
      cands.push_back({{"score", c.score}, {"rle", rle_to_json(rle_encode(c.mask))}});
    }
    res.set_content(nlohmann::json{{"candidates", cands}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::jthread loop([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string url = "http://127.0.0.1:" + std::to_string(port);

  setenv("VASA_VLM_API_KEY", "test-key", 1);
  const auto r = proc::run({kCli, "segment", p("images/cat.png"), demo::kCatQuery, "--vlm-endpoint", url,
                            "--vlm-model", "fake", "--seg-endpoint", url, "--out", p("live")});
  unsetenv("VASA_VLM_API_KEY");
  server.stop();
  ASSERT_EQ(r.exit_code, 0) << r.text;
  EXPECT_NE(r.text.find("termination=verified reasoning_steps=6"), std::string::npos) << r.text;
  EXPECT_EQ(next, turns.size());
  EXPECT_EQ(auth, "Bearer test-key");
  const Trace t = read_trace(dir / "live" / "cat.trace.jsonl");
  EXPECT_TRUE(verify_trace(t).ok);
  EXPECT_EQ(t.header.config.at("deadline_ms"), 300000);
}

TEST_F(CliFixture, BuildManifestReproducesDemoManifest) {
  const auto items = load_dataset(dir / "dataset.json");
  std::string tsv = "id\timage\tquery_short\tquery_long\tsplit\tgt\tothers\n";
  for (const auto& it : items) {
    write_mask_png(dir / "masks" / (it.item_id + ".gt.png"), it.gt);
    std::string others;
    if (it.others) {
      others = "masks/" + it.item_id + ".others.png";
      write_mask_png(dir / others, *it.others);
    }
    tsv += it.item_id + "\timages/" + it.image_path.filename().string() + "\t" + it.query_short + "\t" +
           it.query_long + "\t" + std::string(to_string(it.split)) + "\tmasks/" + it.item_id + ".gt.png\t" + others +
           "\n";
  }
  write_text_file(dir / "items.tsv", tsv);
  const auto r = proc::run({kBuildManifest, p("items.tsv"), "-o", p("rebuilt.json")});
  ASSERT_EQ(r.exit_code, 0) << r.text;
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "rebuilt.json")), nlohmann::json::parse(slurp(dir / "dataset.json")));

  write_text_file(dir / "bad.tsv", "id\timage\n");
  EXPECT_EQ(proc::run({kBuildManifest, p("bad.tsv"), "-o", p("bad.json")}).exit_code, 1);
}
