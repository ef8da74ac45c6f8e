#include "tracepipe/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "tracepipe/backends.hpp"
#include "tracepipe/core.hpp"
#include "tracepipe/hash.hpp"
#include "tracepipe/pareto.hpp"
#include "tracepipe/report.hpp"
#include "tracepipe/runner.hpp"
#include "tracepipe/sim.hpp"

namespace tracepipe {

namespace fs = std::filesystem;

namespace {

std::size_t default_parallelism() { return std::max(1u, std::thread::hardware_concurrency()); }

struct RunArgs {
  std::string config;
  std::string dataset;
  std::string regime;
  std::string out_dir;
  std::size_t parallelism = default_parallelism();
  bool resume = false;
  std::string model;
  std::string planner;
  std::string executor;
  std::string critic;
  std::string prices;
  std::string templates;
  std::optional<std::size_t> limit;
  double timeout_s = 60.0;
  std::optional<std::uint64_t> seed;
};

struct ReportArgs {
  std::vector<std::string> traces;
  std::string prices;
  std::string out_dir;
};

struct ParetoArgs {
  std::string report;
  std::string out_dir;
};

struct SimulateArgs {
  std::string profiles;
  std::size_t n = 0;
  std::uint64_t seed = 42;
  std::string out_dir;
  std::size_t parallelism = default_parallelism();
  std::string planner;
  std::string executor;
  std::string critic;
};

int cmd_validate(const std::string& file, std::ostream& out) {
  const Dataset d = load_dataset(file);
  out << "ok: " << d.size() << " items in '" << d.name() << "' (sha256 " << dataset_hash(d) << ")\n";
  return kExitOk;
}

int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err) {
  const auto regime = regime_from_string(a.regime);
  if (!regime) throw Error("--regime must be baseline, simple or accountable");
  const ExperimentConfig config = ExperimentConfig::load(a.config);
  const Dataset dataset = load_dataset(a.dataset);
  const BackendRegistry registry(config, a.seed);

  RunOptions options;
  options.parallelism = std::max<std::size_t>(1, a.parallelism);
  options.limit = a.limit;
  options.timeout_s = a.timeout_s;
  if (!a.prices.empty()) {
    options.prices = PriceSheet::load(a.prices);
  } else if (config.prices) {
    options.prices = PriceSheet::from_json(*config.prices);
  }
  if (!a.templates.empty()) options.templates = PromptTemplates::load(a.templates);

  RunSummary summary;
  if (a.resume) {
    const RunManifest existing = RunManifest::load(a.out_dir);
    if (existing.regime != *regime) {
      throw Error("run in '" + a.out_dir + "' uses regime " + std::string(to_string(existing.regime)));
    }
    summary = resume(a.out_dir, dataset, registry, options);
  } else if (*regime == Regime::Baseline) {
    if (a.model.empty()) throw Error("--model is required for the baseline regime");
    if (!a.planner.empty() || !a.executor.empty() || !a.critic.empty()) {
      throw Error("--planner/--executor/--critic do not apply to the baseline regime");
    }
    const ModelId& model = config.model(a.model);
    summary = run_baseline(model, registry.agent(model), dataset, a.out_dir, options);
  } else {
    if (a.planner.empty() || a.executor.empty() || a.critic.empty()) {
      throw Error("--planner, --executor and --critic are required for pipeline regimes");
    }
    const PipelineConfig pipeline(config.model(a.planner), config.model(a.executor),
                                  config.model(a.critic), *regime);
    const AgentTriple agents = {registry.agent(pipeline.model(StageRole::Planner)),
                                registry.agent(pipeline.model(StageRole::Executor)),
                                registry.agent(pipeline.model(StageRole::Critic))};
    summary = run_pipeline(pipeline, agents, dataset, a.out_dir, options);
  }

  const RunManifest& m = summary.manifest;
  out << "run " << m.label << " (" << to_string(m.regime) << ") on " << m.dataset_name << ": "
      << summary.new_records << " new, " << summary.skipped << " skipped, " << m.records << "/"
      << m.dataset_items << " recorded" << (m.complete ? "" : " (incomplete)") << '\n';
  if (m.item_errors > 0) {
    err << "warning: " << m.item_errors << " item(s) recorded backend errors; see the error field in "
        << (fs::path(a.out_dir) / kTracesFile).string() << '\n';
    return kExitPartial;
  }
  return kExitOk;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<RunData> runs;
  for (const auto& dir : a.traces) runs.push_back(load_run(dir));
  std::optional<PriceSheet> prices;
  if (!a.prices.empty()) prices = PriceSheet::load(a.prices);
  const auto tables = build_report(runs, prices ? &*prices : nullptr);
  if (!a.out_dir.empty()) write_report(tables, a.out_dir);
  out << render_markdown(tables);
  return kExitOk;
}

int cmd_pareto(const ParetoArgs& a, std::ostream& out) {
  const auto points = read_points_csv(a.report);
  if (points.empty()) throw Error("'" + a.report + "' has no rows with a cost");
  const fs::path out_dir = a.out_dir.empty() ? fs::path(a.report).parent_path() / "pareto" : fs::path(a.out_dir);
  write_pareto_outputs(points, out_dir);
  std::ifstream in(out_dir / "frontier.csv", std::ios::binary);
  out << in.rdbuf();
  return kExitOk;
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  if (a.n == 0) throw Error("--n must be at least 1");
  const ExperimentConfig config = ExperimentConfig::load(a.profiles);

  std::array<std::string, 3> keys = {a.planner, a.executor, a.critic};
  const bool any = !a.planner.empty() || !a.executor.empty() || !a.critic.empty();
  if (!any) {
    if (config.models.size() != 1) {
      throw Error("profile file has " + std::to_string(config.models.size()) +
                  " models; choose them with --planner, --executor and --critic");
    }
    keys.fill(config.models[0].key);
  } else if (a.planner.empty() || a.executor.empty() || a.critic.empty()) {
    throw Error("give all of --planner, --executor and --critic, or none");
  }

  std::array<StochasticAgentProfile, 3> profiles;
  std::array<ModelId, 3> models;
  for (std::size_t i = 0; i < 3; ++i) {
    models[i] = config.model(keys[i]);
    const BackendSpec& spec = config.backends.at(models[i].backend_ref);
    if (spec.type != "stochastic") {
      throw Error("model '" + keys[i] + "' is bound to a " + spec.type + " backend, not stochastic");
    }
    profiles[i] = profile_from_json(spec.params, fnv1a64(spec.name));
  }

  RunOptions options;
  options.parallelism = std::max<std::size_t>(1, a.parallelism);
  if (config.prices) options.prices = PriceSheet::from_json(*config.prices);

  std::optional<fs::path> scratch;
  fs::path out_dir = a.out_dir;
  if (out_dir.empty()) {
    scratch = fs::temp_directory_path() /
              ("tracepipe-sim-" + std::to_string(fnv1a64(std::to_string(reinterpret_cast<std::uintptr_t>(&a)) +
                                                          std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()))));
    out_dir = *scratch;
  }
  struct Cleanup {
    const std::optional<fs::path>& dir;
    ~Cleanup() {
      std::error_code ec;
      if (dir) fs::remove_all(*dir, ec);
    }
  } cleanup{scratch};

  const CalibrationReport report = calibrate(profiles, models, a.n, a.seed, out_dir, options);
  if (!scratch) {
    std::ofstream json_out(out_dir / "calibration.json", std::ios::binary | std::ios::trunc);
    json_out << report.to_json().dump(2) << '\n';
    std::ofstream text_out(out_dir / "calibration.txt", std::ios::binary | std::ios::trunc);
    text_out << report.summary();
    if (!json_out || !text_out) throw Error("failed writing calibration report");
  }
  out << report.summary();
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Traceable Planner -> Executor -> Critic pipelines: runs, blame reports, Pareto "
               "analysis and simulation."};
  app.name("tracepipe");
  app.require_subcommand(1);

  std::string dataset_file;
  auto* validate = app.add_subcommand("validate-dataset", "Check a JSONL dataset file");
  validate->add_option("file", dataset_file, "Dataset (JSONL)")->required();

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a baseline or pipeline over a dataset");
  run_cmd->add_option("--config", run.config, "Backend config (JSON)")->required();
  run_cmd->add_option("--dataset", run.dataset, "Dataset (JSONL)")->required();
  run_cmd->add_option("--regime", run.regime, "baseline | simple | accountable")
      ->required()
      ->check(CLI::IsMember({"baseline", "simple", "accountable"}));
  run_cmd->add_option("--out", run.out_dir, "Run directory")->required();
  run_cmd->add_option("--parallelism", run.parallelism, "Items in flight")->check(CLI::PositiveNumber);
  run_cmd->add_flag("--resume", run.resume, "Continue a partial run in --out");
  run_cmd->add_option("--model", run.model, "Model key (baseline)");
  run_cmd->add_option("--planner", run.planner, "Planner model key");
  run_cmd->add_option("--executor", run.executor, "Executor model key");
  run_cmd->add_option("--critic", run.critic, "Critic model key");
  run_cmd->add_option("--prices", run.prices, "Price sheet (JSON)");
  run_cmd->add_option("--templates", run.templates, "Directory of prompt template overrides");
  run_cmd->add_option("--limit", run.limit, "Stop after this many new items");
  run_cmd->add_option("--timeout", run.timeout_s, "Per-request timeout in seconds")->check(CLI::PositiveNumber);
  run_cmd->add_option("--seed", run.seed, "Override the seed of stochastic backends");

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "Metric tables over one or more runs");
  report_cmd->add_option("--traces", report.traces, "Run directories")->required()->expected(1, -1);
  report_cmd->add_option("--prices", report.prices, "Recompute costs with this price sheet");
  report_cmd->add_option("--out", report.out_dir, "Write CSV and Markdown tables here");

  ParetoArgs pareto;
  auto* pareto_cmd = app.add_subcommand("pareto", "Accuracy/cost frontier from a runs.csv report");
  pareto_cmd->add_option("--report", pareto.report, "runs.csv from `report --out`")->required();
  pareto_cmd->add_option("--out", pareto.out_dir, "Output directory (default: <report dir>/pareto)");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Calibrate the pipeline against stochastic agents");
  sim_cmd->add_option("--profiles", sim.profiles, "Backend config with stochastic backends")->required();
  sim_cmd->add_option("--n", sim.n, "Number of synthetic items")->required();
  sim_cmd->add_option("--seed", sim.seed, "Master seed");
  sim_cmd->add_option("--out", sim.out_dir, "Keep traces and reports here");
  sim_cmd->add_option("--parallelism", sim.parallelism, "Items in flight")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--planner", sim.planner, "Planner model key");
  sim_cmd->add_option("--executor", sim.executor, "Executor model key");
  sim_cmd->add_option("--critic", sim.critic, "Critic model key");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (validate->parsed()) return cmd_validate(dataset_file, out);
    if (run_cmd->parsed()) return cmd_run(run, out, err);
    if (report_cmd->parsed()) return cmd_report(report, out);
    if (pareto_cmd->parsed()) return cmd_pareto(pareto, out);
    if (sim_cmd->parsed()) return cmd_simulate(sim, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace tracepipe
