#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "memtrack/memtrack.hpp"

namespace {

using memtrack::ConfigError;
using memtrack::EngineConfig;

struct CliState {
  std::string config_path;
  std::string mode_str;
  std::string axis_str = "mode";
  std::string out_path;
  std::string values_csv;
  std::uint64_t seed = 0;
  int frames = 10;
  int reps = 0;
  int fp = 0;
  bool seed_given = false;
  bool mode_given = false;
};

EngineConfig build_config(const CliState& s) {
  EngineConfig cfg = EngineConfig::desk();
  if (!s.config_path.empty()) {
    std::ifstream in(s.config_path);
    if (!in) throw ConfigError("cannot open config file: " + s.config_path);
    cfg = memtrack::parse_config(in, cfg);
  }
  if (s.seed_given) cfg.seed = s.seed;
  if (s.mode_given) cfg.mode = memtrack::parse_mode(s.mode_str);
  cfg.validate();
  return cfg;
}

std::vector<std::int64_t> parse_values(const std::string& csv) {
  std::vector<std::int64_t> values;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    values.push_back(memtrack::detail::parse_int("--values", memtrack::detail::trim(item)));
  }
  if (values.empty()) throw ConfigError("--values: expected a comma-separated integer list");
  return values;
}

/// Routes CSV output to --out when given, stdout otherwise.
class OutputSink {
 public:
  explicit OutputSink(const std::string& path) : path_(path) {
    if (!path_.empty()) {
      file_.open(path_);
      if (!file_) throw ConfigError("cannot open output file: " + path_);
    }
  }

  std::ostream& stream() { return path_.empty() ? std::cout : file_; }
  bool to_file() const { return !path_.empty(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream file_;
};

template <typename T>
int do_run(const EngineConfig& cfg, const CliState& s) {
  if (s.frames < 1) throw ConfigError("run: --frames must be positive");
  memtrack::Engine<T> engine(cfg);
  memtrack::MotionSpec spec;
  spec.frames = s.frames;
  spec.seed = cfg.seed + 17;
  const auto video =
      memtrack::make_synthetic_video<T>(cfg.h * memtrack::kPatch, cfg.w * memtrack::kPatch, spec);
  const memtrack::RunResult<T> result = memtrack::run_video(engine, video);

  std::uint64_t cross = 0;
  std::uint64_t self = 0;
  std::uint64_t wall = 0;
  for (const auto& t : result.traces) {
    cross += t.cross_mac;
    self += t.self_mac;
    wall += t.wall_ns;
  }
  const double mean_iou =
      std::accumulate(result.frame_iou.begin(), result.frame_iou.end(), 0.0) /
      static_cast<double>(result.frame_iou.size());

  std::cout << "frames processed: " << result.traces.size() << "\n"
            << "memory mode: " << memtrack::to_string(cfg.mode) << "\n"
            << "memory tokens at last frame: " << result.traces.back().mem_tokens << "\n"
            << "total cross-attention MAC: " << cross << "\n"
            << "total self-attention MAC: " << self << "\n"
            << "total fuse wall time: " << static_cast<double>(wall) * 1e-6 << " ms\n"
            << "mean mask IoU vs synthetic truth: " << mean_iou << "\n";

  OutputSink sink(s.out_path);
  memtrack::write_trace_csv(sink.stream(), result.traces);
  if (sink.to_file()) std::cout << "trace written to: " << sink.path() << "\n";
  return 0;
}

template <typename T>
int do_sweep(const EngineConfig& cfg, const CliState& s, bool timed) {
  memtrack::SweepOptions opt;
  opt.axis = memtrack::parse_axis(s.axis_str);
  if (!s.values_csv.empty()) opt.values = parse_values(s.values_csv);
  opt.timed = timed;
  if (timed) {
    if (s.reps < 10) throw ConfigError("bench: --reps must be at least 10");
    opt.reps = s.reps;
  }
  const auto rows = memtrack::run_sweep<T>(cfg, opt);
  OutputSink sink(s.out_path);
  memtrack::write_sweep_csv(sink.stream(), rows);
  if (sink.to_file()) std::cout << "report written to: " << sink.path() << "\n";
  return 0;
}

int do_grad_check(const EngineConfig& cfg, const CliState& s) {
  if (s.reps < 1) throw ConfigError("grad-check: --reps must be positive");
  const auto reports = memtrack::run_gradient_suite(cfg.seed, s.reps);
  bool all_pass = true;
  std::cout << "loss,fixtures,coords_checked,max_rel_err,tol,status\n";
  for (const auto& r : reports) {
    all_pass = all_pass && r.pass();
    std::cout << r.loss << ',' << r.fixtures << ',' << r.checked << ',' << r.max_rel_err << ','
              << r.tol << ',' << (r.pass() ? "PASS" : "FAIL") << "\n";
  }
  if (!all_pass) {
    std::cerr << "error: gradient check failed\n";
    return 3;
  }
  return 0;
}

int do_props(const EngineConfig& cfg) {
  const auto reports = memtrack::run_property_suite(cfg.seed);
  bool all_pass = true;
  std::cout << "property,cases,failures,status\n";
  for (const auto& r : reports) {
    all_pass = all_pass && r.pass();
    std::cout << r.name << ',' << r.cases << ',' << r.failures << ','
              << (r.pass() ? "PASS" : "FAIL") << "\n";
    if (!r.pass()) std::cerr << "  " << r.detail << "\n";
  }
  if (!all_pass) {
    std::cerr << "error: property suite failed\n";
    return 3;
  }
  return 0;
}

int do_emit_config(const EngineConfig& cfg, const CliState& s) {
  OutputSink sink(s.out_path);
  memtrack::serialize_config(cfg, sink.stream());
  if (sink.to_file()) std::cout << "config written to: " << sink.path() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memory-compressed video object tracker: run, benchmark, and verify"};
  app.require_subcommand(1);
  CliState s;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", s.config_path, "key=value config file");
    cmd->add_option("--seed", s.seed, "RNG seed overriding the config")
        ->each([&](const std::string&) { s.seed_given = true; });
    cmd->add_option("--mode", s.mode_str, "memory mode: dense or compressed")
        ->check(CLI::IsMember({"dense", "compressed"}))
        ->each([&](const std::string&) { s.mode_given = true; });
    cmd->add_option("--out", s.out_path, "output file (stdout when omitted)");
  };
  auto add_fp = [&](CLI::App* cmd, int dflt) {
    s.fp = dflt;
    cmd->add_option("--fp", s.fp, "element type width")->check(CLI::IsMember({32, 64}));
  };
  auto add_axis = [&](CLI::App* cmd) {
    cmd->add_option("--axis", s.axis_str, "sweep axis: frames, latents, depth, or mode");
    cmd->add_option("--values", s.values_csv, "comma-separated axis values");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "track a synthetic clip and emit a frame trace");
  add_common(run_cmd);
  add_fp(run_cmd, 64);
  run_cmd->add_option("--frames", s.frames, "clip length")->check(CLI::PositiveNumber);

  CLI::App* bench_cmd =
      app.add_subcommand("bench", "wall-clock sweep over one axis, CSV report");
  add_common(bench_cmd);
  add_fp(bench_cmd, 32);
  add_axis(bench_cmd);
  s.reps = 20;
  bench_cmd->add_option("--reps", s.reps, "timed repetitions per row (minimum 10)");

  CLI::App* flops_cmd =
      app.add_subcommand("flops", "closed-form MAC sweep over one axis, CSV report");
  add_common(flops_cmd);
  add_axis(flops_cmd);

  CLI::App* grad_cmd =
      app.add_subcommand("grad-check", "finite-difference check of every loss gradient");
  add_common(grad_cmd);
  grad_cmd->add_option("--reps", s.reps, "fixtures per loss");

  CLI::App* props_cmd = app.add_subcommand("props", "randomized property suite");
  add_common(props_cmd);

  CLI::App* emit_cmd =
      app.add_subcommand("emit-config", "print the effective config in parseable form");
  add_common(emit_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*grad_cmd && grad_cmd->count("--reps") == 0) s.reps = 100;
    const EngineConfig cfg = build_config(s);
    if (*run_cmd) return s.fp == 32 ? do_run<float>(cfg, s) : do_run<double>(cfg, s);
    if (*bench_cmd) return s.fp == 32 ? do_sweep<float>(cfg, s, true) : do_sweep<double>(cfg, s, true);
    if (*flops_cmd) return do_sweep<double>(cfg, s, false);
    if (*grad_cmd) return do_grad_check(cfg, s);
    if (*props_cmd) return do_props(cfg);
    if (*emit_cmd) return do_emit_config(cfg, s);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
