// vasa: command-line front end.
//
//   vasa segment  IMAGE QUERY     one image + query -> mask PNG + trace
//   vasa eval     MANIFEST        dataset -> metric reports
//   vasa replay   TRACE...        recompute masks from traces, check every round
//   vasa metrics  PREDICTIONS     precomputed predictions -> metric reports
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vasa/vasa.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kLiveTimeoutSeconds = 300;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BackendFlags {
  std::string vlm_endpoint;
  std::string vlm_model = "default";
  std::string seg_endpoint;
  std::string scripted_vlm;
  std::string scripted_seg;
  int http_retries = 2;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--vlm-endpoint", vlm_endpoint, "OpenAI-compatible chat server base URL (http[s]://host:port)");
    cmd->add_option("--vlm-model", vlm_model, "Model name sent to the chat server")->capture_default_str();
    cmd->add_option("--seg-endpoint", seg_endpoint, "Segmentation server base URL");
    cmd->add_option("--scripted-vlm", scripted_vlm, "Scripted VLM replies (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--scripted-seg", scripted_seg, "Fixture segmenter manifest (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--http-retries", http_retries, "Retries per HTTP request")->capture_default_str()->check(
        CLI::NonNegativeNumber);
  }

  void validate() const {
    if (vlm_endpoint.empty() == scripted_vlm.empty()) {
      throw UsageError("exactly one of --vlm-endpoint and --scripted-vlm is required");
    }
    if (seg_endpoint.empty() == scripted_seg.empty()) {
      throw UsageError("exactly one of --seg-endpoint and --scripted-seg is required");
    }
  }

  bool live() const { return !vlm_endpoint.empty() || !seg_endpoint.empty(); }

  vasa::RetryPolicy retry_policy() const {
    vasa::RetryPolicy p;
    p.retries = http_retries;
    return p;
  }

  std::shared_ptr<vasa::SegmenterBackend> segmenter() const {
    if (!scripted_seg.empty()) {
      return std::make_shared<vasa::FixtureSegmenter>(vasa::load_fixture_oracle(scripted_seg));
    }
    return std::make_shared<vasa::HttpSegmenter>(std::make_shared<vasa::HttplibTransport>(seg_endpoint),
                                                 retry_policy());
  }

  std::unique_ptr<vasa::VlmBackend> live_vlm(int image_max_side) const {
    vasa::ChatCompletionsConfig cfg;
    cfg.model = vlm_model;
    if (const char* key = std::getenv("VASA_VLM_API_KEY")) cfg.api_key = key;
    cfg.image_max_side = image_max_side;
    return std::make_unique<vasa::ChatCompletionsVlm>(std::make_shared<vasa::HttplibTransport>(vlm_endpoint), cfg,
                                                      retry_policy());
  }
};

struct EngineFlags {
  int max_rounds = 20;
  std::string engine_config;
  std::optional<double> timeout_s;
  bool grid = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--max-rounds", max_rounds, "segment_phrase budget per session")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--engine-config", engine_config, "Engine settings (JSON object)")->check(CLI::ExistingFile);
    cmd->add_option("--timeout", timeout_s, "Per-session wall-clock limit in seconds (default 300 with live backends)")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--grid-overlays", grid, "Tile candidate overlays into one image per turn");
  }

  vasa::EngineConfig build(bool live, const CLI::App* cmd) const {
    vasa::EngineConfig cfg;
    if (!engine_config.empty()) cfg = vasa::EngineConfig::from_json(vasa::read_json_file(engine_config, vasa::Errc::InvalidConfig));
    if (cmd->count("--max-rounds") > 0 || engine_config.empty()) cfg.max_rounds = max_rounds;
    if (grid) cfg.grid_overlays = true;
    if (timeout_s) {
      cfg.deadline = std::chrono::milliseconds(static_cast<long long>(*timeout_s * 1000.0));
    } else if (live && !cfg.deadline) {
      cfg.deadline = std::chrono::seconds(kLiveTimeoutSeconds);
    }
    cfg.validate();
    return cfg;
  }
};

std::string summary_line(const vasa::Trace& t) {
  return "termination=" + std::string(vasa::to_string(t.termination)) +
         " reasoning_steps=" + std::to_string(t.reasoning_steps) + " segment_calls=" + std::to_string(t.segment_calls) +
         " area=" + std::to_string(t.final_mask ? t.final_mask->area() : 0);
}

std::function<void(int, std::string_view, std::span<const vasa::CaptionedImage>)> overlay_dumper(
    const std::string& dir) {
  if (dir.empty()) return {};
  auto counter = std::make_shared<int>(0);
  return [dir, counter](int round, std::string_view stage, std::span<const vasa::CaptionedImage> overlays) {
    const int event = (*counter)++;
    for (const auto& o : overlays) {
      std::string caption = o.caption;
      for (auto& ch : caption) {
        if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
      }
      char name[96];
      std::snprintf(name, sizeof name, "e%03d_r%02d_%s_%s.png", event, round, std::string(stage).c_str(),
                    caption.c_str());
      vasa::write_png(fs::path(dir) / name, o.image);
    }
  };
}

int cmd_segment(const BackendFlags& backends, const EngineFlags& engine, const CLI::App* cmd,
                const std::string& image_path, const std::string& query, const std::string& out_dir,
                const std::string& dump_dir) {
  backends.validate();
  const vasa::EngineConfig cfg = engine.build(backends.live(), cmd);
  vasa::Image image = vasa::read_png(image_path);
  auto seg = backends.segmenter();

  std::unique_ptr<vasa::VlmBackend> vlm;
  if (!backends.scripted_vlm.empty()) {
    const auto book = vasa::ScriptBook::load(backends.scripted_vlm);
    const vasa::Script* script = book.find(image.id, "");
    if (script == nullptr) throw vasa::Error(vasa::Errc::MalformedManifest, "no script for image '" + image.id + "'");
    vlm = std::make_unique<vasa::ScriptedVlm>(*script);
  } else {
    vlm = backends.live_vlm(cfg.image_max_side);
  }

  vasa::RunOptions options;
  options.on_overlays = overlay_dumper(dump_dir);
  vasa::InferenceSession session(image, query, *vlm, *seg, cfg, options);
  vasa::InferenceResult result = [&] {
    try {
      return session.run();
    } catch (const vasa::Error& e) {
      std::cerr << "vasa segment: session error: " << e.what() << "\n";
      return session.partial_result(e.what());
    }
  }();

  const fs::path out(out_dir);
  const fs::path mask_path = out / (image.id + ".mask.png");
  const fs::path trace_path = out / (image.id + ".trace.jsonl");
  vasa::write_mask_png(mask_path, result.mask);
  vasa::write_trace(trace_path, result.trace);
  std::cout << summary_line(result.trace) << "\n"
            << "mask: " << mask_path.string() << "\n"
            << "trace: " << trace_path.string() << "\n";
  return result.trace.termination == vasa::TerminationReason::Unrecoverable ? kExitFailure : kExitOk;
}

std::vector<vasa::ReportFormat> parse_formats(const std::vector<std::string>& names) {
  std::vector<vasa::ReportFormat> out;
  for (const auto& n : names) {
    auto f = vasa::parse_report_format(n);
    if (!f) throw UsageError("unknown report format '" + n + "' (csv, markdown, jsonl)");
    out.push_back(*f);
  }
  return out;
}

int cmd_eval(const BackendFlags& backends, const EngineFlags& engine, const CLI::App* cmd,
             const std::string& manifest, const std::string& field_name, int jobs, const std::string& out_dir,
             const std::vector<std::string>& format_names) {
  backends.validate();
  const auto field = vasa::parse_query_field(field_name);
  if (!field) throw UsageError("--query-field must be short or long");
  const auto formats = parse_formats(format_names);

  vasa::BenchConfig cfg;
  cfg.engine = engine.build(backends.live(), cmd);
  cfg.query_field = *field;
  cfg.jobs = jobs;
  cfg.trace_dir = fs::path(out_dir) / "traces";

  const auto items = vasa::load_dataset(manifest);
  auto seg = backends.segmenter();

  vasa::VlmFactory factory;
  std::shared_ptr<const vasa::ScriptBook> book;
  if (!backends.scripted_vlm.empty()) {
    book = std::make_shared<const vasa::ScriptBook>(vasa::ScriptBook::load(backends.scripted_vlm));
    factory = [book](const vasa::EvalItem& item, vasa::QueryField f) -> std::unique_ptr<vasa::VlmBackend> {
      const vasa::Script* script = book->find(item.item_id, vasa::to_string(f));
      if (script == nullptr) throw vasa::Error(vasa::Errc::InvalidConfig, "no script for item '" + item.item_id + "'");
      return std::make_unique<vasa::ScriptedVlm>(*script);
    };
  } else {
    const int side = cfg.engine.image_max_side;
    factory = [&backends, side](const vasa::EvalItem&, vasa::QueryField) { return backends.live_vlm(side); };
  }

  const vasa::BenchResult result = vasa::run_benchmark(items, factory, *seg, cfg);
  const std::string title = "Query field: " + std::string(vasa::to_string(*field));
  for (auto f : formats) {
    for (const auto& p : vasa::emit_report(result.report, result.records, f, out_dir, title)) {
      std::cerr << "wrote " << p.string() << "\n";
    }
  }
  vasa::write_text_file(fs::path(out_dir) / "predictions.json",
                        vasa::prediction_manifest(items, result.records).dump() + "\n");
  std::cout << vasa::report_to_markdown(result.report, title);
  std::size_t failed = 0;
  for (const auto& r : result.records) failed += r.error ? 1 : 0;
  if (failed > 0) std::cerr << failed << " item(s) failed; scored with their partial masks\n";
  return kExitOk;
}

int cmd_replay(const std::vector<std::string>& traces, const std::string& out_dir) {
  int status = kExitOk;
  for (const auto& path : traces) {
    const vasa::Trace t = vasa::read_trace(path);
    const vasa::ReplayResult r = vasa::verify_trace(t);
    if (r.ok) {
      std::cout << path << ": verified " << r.updates_checked << " update(s), " << t.entries.size()
                << " entries, final area " << r.final_mask->area() << "\n";
      if (!out_dir.empty()) {
        vasa::write_mask_png(fs::path(out_dir) / (fs::path(path).stem().string() + ".replay.png"), *r.final_mask);
      }
    } else {
      std::cout << path << ": DIVERGED at entry " << r.divergent_entry.value_or(0) << " (round "
                << r.divergent_round << "): " << r.detail << "\n";
      status = kExitFailure;
    }
  }
  return status;
}

int cmd_metrics(const std::string& predictions, const std::string& out_dir,
                const std::vector<std::string>& format_names) {
  const auto formats = parse_formats(format_names);
  const auto pairs = vasa::pairs_from_prediction_manifest(vasa::read_json_file(predictions));
  const vasa::MetricsReport report = vasa::evaluate(pairs);
  if (!out_dir.empty()) {
    std::vector<vasa::RunRecord> none;
    for (auto f : formats) {
      if (f == vasa::ReportFormat::Jsonl) continue;  // no run records without an agent
      if (f == vasa::ReportFormat::Csv) {
        vasa::write_text_file(fs::path(out_dir) / "report.csv", vasa::report_to_csv(report));
      } else {
        vasa::emit_report(report, none, f, out_dir);
      }
    }
  }
  std::cout << vasa::report_to_markdown(report);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agentic mask construction with a persistent working mask"};
  app.name("vasa");
  app.require_subcommand(1);

  BackendFlags seg_backends, eval_backends;
  EngineFlags seg_engine, eval_engine;

  auto* segment = app.add_subcommand("segment", "Segment one image for one query");
  std::string image_path, query, seg_out = ".", dump_dir;
  segment->add_option("image", image_path, "Input PNG")->required()->check(CLI::ExistingFile);
  segment->add_option("query", query, "Free-form query")->required();
  segment->add_option("--out", seg_out, "Output directory")->capture_default_str();
  segment->add_option("--dump-overlays", dump_dir, "Write every overlay shown to the VLM here");
  seg_backends.add_to(segment);
  seg_engine.add_to(segment);

  auto* eval = app.add_subcommand("eval", "Run a dataset manifest and write reports");
  std::string manifest, field = "short", eval_out = "report";
  int jobs = 1;
  std::vector<std::string> eval_formats{"csv", "markdown", "jsonl"};
  eval->add_option("manifest", manifest, "Dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
  eval->add_option("--query-field", field, "Query field to use")->capture_default_str()->check(
      CLI::IsMember({"short", "long"}));
  eval->add_option("--jobs", jobs, "Parallel sessions")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--out", eval_out, "Report directory")->capture_default_str();
  eval->add_option("--format", eval_formats, "Report formats (csv, markdown, jsonl)")->capture_default_str();
  eval_backends.add_to(eval);
  eval_engine.add_to(eval);

  auto* replay = app.add_subcommand("replay", "Recompute masks from traces and verify every round");
  std::vector<std::string> traces;
  std::string replay_out;
  replay->add_option("trace", traces, "Trace JSONL file(s)")->required()->check(CLI::ExistingFile);
  replay->add_option("--out", replay_out, "Write recomputed final masks here");

  auto* metrics = app.add_subcommand("metrics", "Score a prediction manifest without running the agent");
  std::string predictions, metrics_out;
  std::vector<std::string> metrics_formats{"csv", "markdown"};
  metrics->add_option("predictions", predictions, "Prediction manifest (JSON)")->required()->check(CLI::ExistingFile);
  metrics->add_option("--out", metrics_out, "Report directory");
  metrics->add_option("--format", metrics_formats, "Report formats (csv, markdown)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return kExitOk;
    std::cerr << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*segment) return cmd_segment(seg_backends, seg_engine, segment, image_path, query, seg_out, dump_dir);
    if (*eval) return cmd_eval(eval_backends, eval_engine, eval, manifest, field, jobs, eval_out, eval_formats);
    if (*replay) return cmd_replay(traces, replay_out);
    if (*metrics) return cmd_metrics(predictions, metrics_out, metrics_formats);
  } catch (const UsageError& e) {
    std::cerr << "vasa: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const vasa::Error& e) {
    std::cerr << "vasa: " << vasa::to_string(e.code()) << ": " << e.what() << "\n";
    return e.code() == vasa::Errc::InvalidConfig ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "vasa: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
