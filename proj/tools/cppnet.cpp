// cppnet: generate scenarios, label them, train, solve, benchmark and plot.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cppnet/cppnet.hpp"

namespace {

using namespace cppnet;

constexpr const char* kVersion =
    "cppnet 0.1.0 (formats: cpp-scenario v1, cpp-scenario-set v1, cpp-labels v1, cpp-traj v1, checkpoint v1)";

Connectivity to_connectivity(int c) { return c == 8 ? Connectivity::eight : Connectivity::four; }

void pin_single_worker() { ::setenv("CPPNET_THREADS", "1", 1); }

struct GenerateArgs {
  int count = 0, rows = 10, cols = 10;
  double cell_size = 1.0, density_min = 0.0, density_max = 0.5;
  double val_ratio = 200.0 / 1384, test_ratio = 160.0 / 1384;
  std::uint64_t seed = 0;
  std::string out;
  int connectivity = 4;
  std::string placement = "connected";
};

int run_generate(const GenerateArgs& a) {
  DatasetSpec spec;
  spec.count = a.count;
  spec.rows = a.rows;
  spec.cols = a.cols;
  spec.cell_size = a.cell_size;
  spec.density_lo = a.density_min;
  spec.density_hi = a.density_max;
  spec.ratios = {1.0 - a.val_ratio - a.test_ratio, a.val_ratio, a.test_ratio};
  spec.seed = a.seed;
  spec.generate.connectivity = to_connectivity(a.connectivity);
  spec.generate.placement = parse_placement(a.placement);
  save_scenarios(dataset_build(spec), a.out);
  return 0;
}

int run_label(const std::string& scenarios, const std::string& out, int conn) {
  auto set = load_scenarios(scenarios);
  LabelCache cache(out);
  parallel_for(set.size(), [&](std::size_t i) { label_with_cache(set.scenarios[i], to_connectivity(conn), &cache); });
  return 0;
}

int run_train(const std::string& scenarios, const std::string& config_path, const std::string& out, bool timing) {
  auto set = load_scenarios(scenarios);
  auto settings = parse_train_config(read_file(config_path));
  settings.train.checkpoint_dir = out;
  settings.train.record_time = timing;
  auto result = train(set, settings.train, settings.model, [](const EpochStats& e) {
    std::cerr << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " val_f1 "
              << e.val_f1 << "\n";
  });
  write_file_atomic(fs::path(out) / "report.csv", report_csv(result.report));
  return 0;
}

int run_solve(const std::string& scenario, const std::string& model, const std::string& out, const std::string& svg,
              int conn, bool timing) {
  auto map = load_scenario(scenario);
  auto params = load_checkpoint(model);
  PlanOptions po;
  po.connectivity = to_connectivity(conn);
  auto traj = plan(map, params, po);
  if (!timing) traj.inference_ms = 0;
  write_file_atomic(out, to_text(traj, scenario_hash(map)));
  if (!svg.empty()) write_file_atomic(svg, render_trajectory(map, traj));
  return 0;
}

int run_bench(const std::string& scenarios, const std::string& model, const std::string& out,
              const std::string& summary, const std::string& split, int conn, bool timing) {
  auto set = load_scenarios(scenarios);
  auto params = load_checkpoint(model);
  auto maps = split == "all" ? set.scenarios : set.subset(parse_split(split));
  std::vector<BenchRecord> existing;
  if (fs::exists(out)) existing = parse_records(read_file(out));
  BenchOptions bo;
  bo.connectivity = to_connectivity(conn);
  bo.timing = timing;
  auto res = run_benchmark(maps, params, bo, existing);
  write_file_atomic(out, records_csv(res.records));
  if (!summary.empty()) write_file_atomic(summary, summary_csv(summarize(res.records)));
  for (const auto& f : res.failures) {
    std::cerr << "failed: " << f.scenario_hash << " " << to_string(f.method) << ": " << f.message << "\n";
  }
  return res.failures.empty() ? 0 : 2;
}

int run_plot(const std::string& records, const std::string& trajectory, const std::string& scenario,
             const std::string& out) {
  if (!records.empty()) {
    auto recs = parse_records(read_file(records));
    write_file_atomic(out, render_summary(summarize(recs)));
    return 0;
  }
  auto file = parse_trajectory(read_file(trajectory));
  auto map = load_scenario(scenario);
  if (file.scenario_hash != scenario_hash(map)) {
    throw Error(Errc::invalid_argument, "trajectory belongs to scenario " + file.scenario_hash);
  }
  write_file_atomic(out, render_trajectory(map, file.trajectory));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coverage path planning with a graph network trained against a 2-opt oracle", "cppnet"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1, 1);

  auto add_conn = [](CLI::App* cmd, int& conn) {
    cmd->add_option("--connectivity", conn, "Grid connectivity")->check(CLI::IsMember({4, 8}));
  };

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Build a random scenario set");
  g->add_option("--count", gen.count)->required();
  g->add_option("--rows", gen.rows)->required();
  g->add_option("--cols", gen.cols)->required();
  g->add_option("--cell-size", gen.cell_size)->required();
  g->add_option("--density-min", gen.density_min)->required();
  g->add_option("--density-max", gen.density_max)->required();
  g->add_option("--seed", gen.seed)->required();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--val-ratio", gen.val_ratio);
  g->add_option("--test-ratio", gen.test_ratio);
  g->add_option("--placement", gen.placement)->check(CLI::IsMember({"connected", "rejection"}));
  add_conn(g, gen.connectivity);

  std::string scenarios, out, config, scenario, model, svg, records, trajectory, summary, split = "test";
  int conn = 4;
  bool timing = false;

  auto* l = app.add_subcommand("label", "Write 2-opt label files for a scenario set");
  l->add_option("--scenarios", scenarios)->required();
  l->add_option("--out", out, "Label cache directory")->required();
  add_conn(l, conn);

  auto* t = app.add_subcommand("train", "Train a model; writes best.ckpt, final.ckpt and report.csv");
  t->add_option("--scenarios", scenarios)->required();
  t->add_option("--config", config, "key = value training config")->required();
  t->add_option("--out", out, "Output directory")->required();
  t->add_flag("--timing", timing, "Record wall-clock seconds (pins one worker)");

  auto* s = app.add_subcommand("solve", "Plan a coverage trajectory for one scenario");
  s->add_option("--scenario", scenario)->required();
  s->add_option("--model", model)->required();
  s->add_option("--out", out)->required();
  s->add_option("--svg", svg);
  s->add_flag("--timing", timing, "Record inference time");
  add_conn(s, conn);

  auto* b = app.add_subcommand("bench", "Compare 2-opt and the learned planner; resumes an existing CSV");
  b->add_option("--scenarios", scenarios)->required();
  b->add_option("--model", model)->required();
  b->add_option("--out", out, "Records CSV")->required();
  b->add_option("--summary", summary, "Quartile summary CSV");
  b->add_option("--split", split)->check(CLI::IsMember({"train", "validation", "test", "all"}));
  b->add_flag("--timing", timing, "Record wall times (pins one worker)");
  add_conn(b, conn);

  auto* p = app.add_subcommand("plot", "Render a records box plot or a trajectory as SVG");
  auto* rec_opt = p->add_option("--records", records);
  auto* traj_opt = p->add_option("--trajectory", trajectory);
  auto* scen_opt = p->add_option("--scenario", scenario, "Scenario file of the trajectory");
  p->add_option("--out", out)->required();
  rec_opt->excludes(traj_opt);
  rec_opt->excludes(scen_opt);
  traj_opt->needs(scen_opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  if (p->parsed() && records.empty() && trajectory.empty()) {
    std::cerr << "error: plot needs --records or --trajectory\n\n" << app.help();
    return 1;
  }

  try {
    if (timing) pin_single_worker();
    if (g->parsed()) return run_generate(gen);
    if (l->parsed()) return run_label(scenarios, out, conn);
    if (t->parsed()) return run_train(scenarios, config, out, timing);
    if (s->parsed()) return run_solve(scenario, model, out, svg, conn, timing);
    if (b->parsed()) return run_bench(scenarios, model, out, summary, split, conn, timing);
    if (p->parsed()) return run_plot(records, trajectory, scenario, out);
  } catch (const std::exception& e) {
    std::cerr << "cppnet: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
