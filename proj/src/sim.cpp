#include "tracepipe/sim.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "tracepipe/metrics.hpp"

namespace tracepipe {

using nlohmann::json;

void ChainParams::validate() const {
  for (double p : {planner_correct, executor_repair, executor_harm, critic_repair, critic_harm}) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error("chain probabilities must be in [0, 1]");
  }
}

ChainPrediction predict(const ChainParams& c) {
  c.validate();
  ChainPrediction p;
  p.planner_correct = c.planner_correct;
  p.after_executor = c.planner_correct * (1.0 - c.executor_harm) + (1.0 - c.planner_correct) * c.executor_repair;
  p.final_correct = p.after_executor * (1.0 - c.critic_harm) + (1.0 - p.after_executor) * c.critic_repair;
  p.executor_repair_raw = (1.0 - c.planner_correct) * c.executor_repair;
  p.executor_harm_raw = c.planner_correct * c.executor_harm;
  p.critic_repair_raw = (1.0 - p.after_executor) * c.critic_repair;
  p.critic_harm_raw = p.after_executor * c.critic_harm;
  return p;
}

double predict_accuracy(double planner_correct, double executor_repair, double executor_harm,
                        double critic_repair, double critic_harm) {
  return predict({planner_correct, executor_repair, executor_harm, critic_repair, critic_harm})
      .final_correct;
}

ChainParams chain_params(const std::array<StochasticAgentProfile, 3>& profiles) {
  const auto& p = profiles[0].role(StageRole::Planner);
  const auto& e = profiles[1].role(StageRole::Executor);
  const auto& c = profiles[2].role(StageRole::Critic);
  return {p.base_correct, e.repair_prob, e.harm_prob, c.repair_prob, c.harm_prob};
}

Dataset synthetic_dataset(std::size_t n, std::uint64_t seed) {
  Rng rng(seed ^ 0x5eed5eed5eed5eedULL);
  std::vector<TaskItem> items;
  items.reserve(n);
  char id[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(id, sizeof id, "sim-%06zu", i + 1);
    TaskItem item;
    item.id = id;
    item.question = "Synthetic question " + std::to_string(i + 1) + ".";
    for (std::size_t k = 0; k < 4; ++k) {
      item.choices.emplace(kAllLetters[k], std::string("Option ") + static_cast<char>('A' + k));
    }
    item.gold = kAllLetters[rng.below(4)];
    items.push_back(std::move(item));
  }
  return Dataset("synthetic-" + std::to_string(n) + "-seed" + std::to_string(seed), std::move(items));
}

bool CalibrationCheck::within(double k) const { return !defined || std::fabs(z) <= k; }

bool CalibrationReport::all_within(double k) const {
  for (const auto& c : checks) {
    if (!c.within(k)) return false;
  }
  return true;
}

namespace {

CalibrationCheck make_check(std::string name, std::int64_t count, std::int64_t n, double expected) {
  CalibrationCheck c;
  c.name = std::move(name);
  c.n = n;
  c.expected = expected;
  if (n == 0) {
    c.defined = false;
    return c;
  }
  c.measured = static_cast<double>(count) / static_cast<double>(n);
  c.sigma = std::sqrt(expected * (1.0 - expected) / static_cast<double>(n));
  const double diff = c.measured - expected;
  if (c.sigma > 0.0) {
    c.z = diff / c.sigma;
  } else if (diff != 0.0) {
    c.z = std::copysign(std::numeric_limits<double>::infinity(), diff);
  }
  return c;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

CalibrationReport evaluate_calibration(const std::vector<TraceRecord>& traces, const ChainParams& params) {
  const ChainPrediction pred = predict(params);
  const auto n = static_cast<std::int64_t>(traces.size());
  CalibrationReport rep;
  rep.n_items = traces.size();
  rep.params = params;

  std::int64_t planner_errors = 0;
  for (const auto& t : traces) {
    if (t.flags.planner_error()) ++planner_errors;
  }
  const Rate acc = accuracy(traces);
  const RoleBehavior ex = role_behavior(traces, StageRole::Executor);
  const RoleBehavior cr = role_behavior(traces, StageRole::Critic);

  rep.checks.push_back(make_check("final_accuracy", acc.count, n, pred.final_correct));
  rep.checks.push_back(make_check("planner_error_rate", planner_errors, n, 1.0 - params.planner_correct));
  rep.checks.push_back(make_check("executor_repair_conditional", ex.repair_count, ex.repair_eligible,
                                  params.executor_repair));
  rep.checks.push_back(make_check("executor_harm_conditional", ex.harm_count, ex.harm_eligible,
                                  params.executor_harm));
  rep.checks.push_back(make_check("critic_repair_conditional", cr.repair_count, cr.repair_eligible,
                                  params.critic_repair));
  rep.checks.push_back(make_check("critic_harm_conditional", cr.harm_count, cr.harm_eligible,
                                  params.critic_harm));
  rep.checks.push_back(make_check("executor_repair_raw", ex.repair_count, ex.total_cases, pred.executor_repair_raw));
  rep.checks.push_back(make_check("executor_harm_raw", ex.harm_count, ex.total_cases, pred.executor_harm_raw));
  rep.checks.push_back(make_check("critic_repair_raw", cr.repair_count, cr.total_cases, pred.critic_repair_raw));
  rep.checks.push_back(make_check("critic_harm_raw", cr.harm_count, cr.total_cases, pred.critic_harm_raw));
  return rep;
}

json CalibrationReport::to_json() const {
  json cs = json::array();
  for (const auto& c : checks) {
    cs.push_back({{"name", c.name},
                  {"defined", c.defined},
                  {"measured", c.defined ? json(c.measured) : json(nullptr)},
                  {"expected", c.expected},
                  {"n", c.n},
                  {"sigma", c.defined ? json(c.sigma) : json(nullptr)},
                  {"z", c.defined ? number_or_null(c.z) : json(nullptr)},
                  {"within_3_sigma", c.within(3.0)}});
  }
  return {{"schema_version", 1},
          {"n_items", n_items},
          {"seed", seed},
          {"label", label},
          {"params",
           {{"planner_correct", params.planner_correct},
            {"executor_repair", params.executor_repair},
            {"executor_harm", params.executor_harm},
            {"critic_repair", params.critic_repair},
            {"critic_harm", params.critic_harm}}},
          {"predicted_accuracy", predict(params).final_correct},
          {"checks", cs},
          {"all_within_3_sigma", all_within(3.0)}};
}

std::string CalibrationReport::summary() const {
  std::ostringstream out;
  out << "calibration " << label << ": n=" << n_items << " seed=" << seed << '\n';
  char line[160];
  std::snprintf(line, sizeof line, "%-30s %10s %10s %8s %9s %8s\n", "check", "measured", "expected", "n",
                "sigma", "z");
  out << line;
  for (const auto& c : checks) {
    if (!c.defined) {
      std::snprintf(line, sizeof line, "%-30s %10s %10.6f %8lld %9s %8s\n", c.name.c_str(), "-",
                    c.expected, static_cast<long long>(c.n), "-", "n/a");
    } else {
      std::snprintf(line, sizeof line, "%-30s %10.6f %10.6f %8lld %9.6f %8.3f%s\n", c.name.c_str(),
                    c.measured, c.expected, static_cast<long long>(c.n), c.sigma, c.z,
                    c.within(3.0) ? "" : "  OUTSIDE 3 sigma");
    }
    out << line;
  }
  out << (all_within(3.0) ? "all checks within 3 sigma\n" : "some checks outside 3 sigma\n");
  return out.str();
}

CalibrationReport calibrate(const std::array<StochasticAgentProfile, 3>& profiles,
                            const std::array<ModelId, 3>& models, std::size_t n_items,
                            std::uint64_t seed, const std::filesystem::path& out_dir,
                            RunOptions options) {
  if (n_items == 0) throw Error("calibration needs at least one item");
  if (!options.clock) options.clock = fixed_clock("1970-01-01T00:00:00.000Z");
  const Dataset dataset = synthetic_dataset(n_items, seed);
  const PipelineConfig config(models[0], models[1], models[2], Regime::Accountable);
  const AgentTriple agents = {std::make_shared<StochasticAgent>(profiles[0], seed),
                              std::make_shared<StochasticAgent>(profiles[1], seed),
                              std::make_shared<StochasticAgent>(profiles[2], seed)};
  run_pipeline(config, agents, dataset, out_dir, options);

  CalibrationReport rep = evaluate_calibration(read_traces(out_dir / kTracesFile), chain_params(profiles));
  rep.seed = seed;
  rep.label = config.label();
  return rep;
}

}  // namespace tracepipe
