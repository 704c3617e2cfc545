#include "statelens/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "statelens/blackbox.hpp"
#include "statelens/learner.hpp"

namespace statelens::cli {

namespace fs = std::filesystem;

namespace {

struct RunConfig {
  std::string protocol;
  std::vector<std::string> params;
  learner::LearnConfig gb;
  blackbox::BlackBoxConfig bb;
  std::string out = "out";
};

vm::ParamMap parse_params(const std::vector<std::string>& raw) {
  vm::ParamMap out;
  for (const auto& p : raw) {
    auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("parameter must be NAME=VALUE: " + p);
    out[p.substr(0, eq)] = std::stoll(p.substr(eq + 1), nullptr, 0);
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

void write_artifacts(const fs::path& dir, const LearnReport& r) {
  fs::create_directories(dir / "snapshots");
  write_file(dir / "model.json", model::export_json(r.model));
  write_file(dir / "model.dot", model::export_dot(r.model));
  write_file(dir / "report.json", report_to_json(r));
  write_file(dir / "candidates.json", memdiff::candidates_to_json(r.candidates));
}

// Happy-flow snapshots and allocation log, for offline inspection.
void write_snapshots(const fs::path& dir, const protocols::ProtocolSpec& spec,
                     std::uint64_t seed) {
  monitor::MonitorOptions opts;
  opts.seed = seed;
  auto run = monitor::run_monitored(spec, spec.happy_flow, opts);
  monitor::write_snapshot_dump(dir / "snapshots" / "happy_flow.snap", run.snapshots);
  write_file(dir / "snapshots" / "happy_flow.alloc", monitor::format_allocation_log(run.alloc_log));
}

void summarize(std::ostream& out, const LearnReport& r, const fs::path& dir) {
  const auto& s = r.stats;
  out << r.mode << " " << r.protocol << ": " << s.io_states << " states, " << s.total_queries
      << " queries (" << s.io_mem_queries << " io/mem, " << s.watchpoint_queries
      << " watchpoint), " << s.merges << " merges, " << std::fixed << std::setprecision(2)
      << s.total_time << " s, exit " << to_string(r.exit) << "\n"
      << "artifacts in " << dir.string() << "\n";
}

int cmd_learn(const RunConfig& cfg, std::ostream& out) {
  auto spec = protocols::load_spec(cfg.protocol, parse_params(cfg.params));
  auto report = learner::learn(spec, cfg.gb);
  write_artifacts(cfg.out, report);
  write_snapshots(cfg.out, spec, cfg.gb.seed);
  summarize(out, report, cfg.out);
  return report.exit_code();
}

int cmd_learn_bb(const RunConfig& cfg, std::ostream& out) {
  auto spec = protocols::load_spec(cfg.protocol, parse_params(cfg.params));
  auto report = blackbox::learn_bb(spec, cfg.bb);
  write_artifacts(cfg.out, report);
  summarize(out, report, cfg.out);
  return report.exit_code();
}

int cmd_compare(const std::string& a, const std::string& b, std::ostream& out) {
  auto load = [](const std::string& path) {
    auto text = read_file(path);
    if (text.find("\"mode\"") != std::string::npos) return report_from_json(text).model;
    return model::import_json(text);
  };
  auto ma = load(a);
  auto mb = load(b);
  auto eq = model::equivalent(ma, mb);
  if (eq.equal) {
    out << "Equal\n";
    return 0;
  }
  out << "Counterexample:";
  for (const auto& i : eq.counterexample) out << " " << i;
  out << "\n  " << a << ":";
  for (const auto& o : ma.run(eq.counterexample)) out << " " << o;
  out << "\n  " << b << ":";
  for (const auto& o : mb.run(eq.counterexample)) out << " " << o;
  out << "\n";
  return 0;
}

std::string hex(std::optional<std::uint64_t> v) {
  if (!v) return "-";
  std::ostringstream ss;
  ss << "0x" << std::hex << *v;
  return ss.str();
}

int cmd_explain(const std::string& report_path, const std::string& a, const std::string& b,
                unsigned W, std::ostream& out) {
  auto report = report_from_json(read_file(report_path));
  auto spec = protocols::load_spec(report.protocol, report.params);
  auto ex = learner::explain(spec, report, a, b, W);
  out << "differing locations between " << a << " and " << b << ": " << ex.differing.size()
      << "\n";
  out << std::left << std::setw(16) << "location" << std::setw(12) << "probe" << std::setw(22)
      << "verdict" << std::setw(8) << "branch" << std::setw(8) << "write" << std::setw(10)
      << "alt" << "note\n";
  for (const auto& v : ex.verdicts) {
    std::ostringstream loc;
    loc << "a" << v.location.alloc_id << "+" << v.location.offset << ":" << v.location.size;
    auto line = [](int l) { return l ? std::to_string(l) : std::string("-"); };
    out << std::setw(16) << loc.str() << std::setw(12) << v.probe << std::setw(22)
        << dataflow::to_string(v.verdict.kind) << std::setw(8) << line(v.verdict.branch_line)
        << std::setw(8) << line(v.verdict.write_line) << std::setw(10)
        << hex(v.verdict.alternate_value) << v.verdict.note << "\n";
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Grey-box protocol state machine learner for the toy VM", "statelens"};
  app.require_subcommand(1);
  RunConfig cfg;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--protocol", cfg.protocol, "Bundled protocol name")->required();
    sub->add_option("--param", cfg.params, "Program parameter NAME=VALUE (repeatable)");
    sub->add_option("--out", cfg.out, "Artifact directory")->capture_default_str();
  };

  auto* learn = app.add_subcommand("learn", "Grey-box learning");
  add_common(learn);
  learn->add_option("--T", cfg.gb.T, "Bootstrap repetitions")->capture_default_str();
  learn->add_option("--D", cfg.gb.D, "Merge reachability depth")->capture_default_str();
  learn->add_option("--W", cfg.gb.W, "Dataflow window")->capture_default_str();
  learn->add_option("--time-bound", cfg.gb.time_bound, "Seconds")->capture_default_str();
  learn->add_option("--query-cap", cfg.gb.query_cap, "0 = unlimited")->capture_default_str();
  learn->add_option("--seed", cfg.gb.seed)->capture_default_str();

  auto* learn_bb = app.add_subcommand("learn-bb", "Black-box learning");
  add_common(learn_bb);
  learn_bb->add_option("--depth-bound", cfg.bb.depth_bound, "W-method middle length")
      ->capture_default_str();
  learn_bb->add_option("--query-cap", cfg.bb.query_cap)->capture_default_str();
  learn_bb->add_option("--time-bound", cfg.bb.time_bound, "Seconds")->capture_default_str();
  learn_bb->add_option("--seed", cfg.bb.seed)->capture_default_str();

  std::string model_a, model_b;
  auto* compare = app.add_subcommand("compare", "Product-equivalence check of two models");
  compare->add_option("model_a", model_a, "model.json or report.json")->required();
  compare->add_option("model_b", model_b, "model.json or report.json")->required();

  std::string report_path, state_a, state_b;
  unsigned explain_w = dataflow::kDefaultWindow;
  auto* explain = app.add_subcommand("explain", "Classify the locations separating two states");
  explain->add_option("report", report_path, "report.json of a grey-box run")->required();
  explain->add_option("state_a", state_a)->required();
  explain->add_option("state_b", state_b)->required();
  explain->add_option("--W", explain_w, "Dataflow window")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  try {
    if (learn->parsed()) return cmd_learn(cfg, out);
    if (learn_bb->parsed()) return cmd_learn_bb(cfg, out);
    if (compare->parsed()) return cmd_compare(model_a, model_b, out);
    if (explain->parsed()) return cmd_explain(report_path, state_a, state_b, explain_w, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace statelens::cli
