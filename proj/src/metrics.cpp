#include "tracepipe/metrics.hpp"

#include <map>
#include <tuple>

namespace tracepipe {

Money stage_cost(const TokenUsage& usage, const ModelPrice& price) {
  // micro-USD per 1K tokens == nano-USD per token.
  return Money::from_nano_usd(usage.prompt_tokens * price.input_micro_usd_per_1k +
                              usage.completion_tokens * price.output_micro_usd_per_1k);
}

std::optional<Money> pipeline_cost(const TraceRecord& trace) {
  Money total;
  bool any = false;
  for (const auto& s : trace.stages) {
    if (!s) continue;
    if (!s->cost) return std::nullopt;
    total += *s->cost;
    any = true;
  }
  if (!any) return std::nullopt;
  return total;
}

std::optional<Money> pipeline_cost(const TraceRecord& trace, const PriceSheet& prices) {
  Money total;
  bool any = false;
  for (const auto& s : trace.stages) {
    if (!s) continue;
    const ModelPrice* price = prices.find(s->model);
    if (!s->usage || price == nullptr) return std::nullopt;
    total += stage_cost(*s->usage, *price);
    any = true;
  }
  if (!any) return std::nullopt;
  return total;
}

double item_latency(const TraceRecord& trace) {
  double total = 0.0;
  for (const auto& s : trace.stages) {
    if (s) total += s->latency_s;
  }
  return total;
}

std::int64_t Rate::hundredths() const {
  if (!defined()) throw Error("rate with zero denominator");
  // round(10000 * count / total) with halves rounded up.
  return (20000 * count + total) / (2 * total);
}

double Rate::percent() const {
  if (!defined()) throw Error("rate with zero denominator");
  return 100.0 * static_cast<double>(count) / static_cast<double>(total);
}

std::string format_hundredths(std::int64_t h) {
  const bool negative = h < 0;
  const std::int64_t mag = negative ? -h : h;
  std::string frac = std::to_string(mag % 100);
  if (frac.size() < 2) frac.insert(0, "0");
  return (negative ? "-" : "") + std::to_string(mag / 100) + "." + frac;
}

std::string Rate::percent_string() const {
  return defined() ? format_hundredths(hundredths()) : std::string("undefined");
}

Rate accuracy(std::span<const TraceRecord> traces) {
  if (traces.empty()) throw Error("accuracy of an empty trace set");
  Rate r{0, static_cast<std::int64_t>(traces.size())};
  for (const auto& t : traces) {
    if (t.correct()) ++r.count;
  }
  return r;
}

Rate planner_error_rate(std::span<const RunData> runs) {
  Rate r;
  for (const auto& run : runs) {
    r.total += static_cast<std::int64_t>(run.manifest.dataset_items);
    for (const auto& t : run.traces) {
      if (t.flags.planner_error()) ++r.count;
    }
  }
  return r;
}

std::vector<PlannerErrorRow> planner_error_table(std::span<const RunData> runs, Regime regime) {
  std::vector<PlannerErrorRow> rows;
  std::vector<std::vector<RunData>> groups;
  for (const auto& run : runs) {
    if (run.manifest.regime != regime || run.manifest.regime == Regime::Baseline) continue;
    const ModelId& planner = run.manifest.model(StageRole::Planner);
    std::size_t i = 0;
    while (i < rows.size() &&
           !(rows[i].model == planner.key && rows[i].dataset == run.manifest.dataset_name)) {
      ++i;
    }
    if (i == rows.size()) {
      rows.push_back({planner.key, planner.display_name, run.manifest.dataset_name, {}});
      groups.emplace_back();
    }
    groups[i].push_back(run);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rate = planner_error_rate(groups[i]);
  return rows;
}

RoleBehavior role_behavior(std::span<const TraceRecord> traces, StageRole role) {
  if (role == StageRole::Planner) throw Error("repair and harm apply to the executor and critic only");
  const StageRole upstream_role = role == StageRole::Executor ? StageRole::Planner : StageRole::Executor;
  RoleBehavior b;
  b.role = role;
  for (const auto& t : traces) {
    if (!t.stage(role)) continue;
    if (b.model.empty()) b.model = t.stage(role)->model;
    ++b.total_cases;
    if (t.stage_answer(upstream_role) == t.gold) {
      ++b.harm_eligible;
    } else {
      ++b.repair_eligible;
    }
    if (t.flags.repair(role)) ++b.repair_count;
    if (t.flags.harm(role)) ++b.harm_count;
  }
  return b;
}

std::vector<RoleBehavior> repair_harm_rates(std::span<const RunData> runs, Regime regime) {
  // (model key, role) -> traces in which that model held that role.
  std::map<std::tuple<std::string, StageRole>, std::vector<TraceRecord>> by_role;
  std::map<std::string, std::string> display;
  for (const auto& run : runs) {
    if (run.manifest.regime != regime || run.manifest.regime == Regime::Baseline) continue;
    for (StageRole role : {StageRole::Executor, StageRole::Critic}) {
      const ModelId& m = run.manifest.model(role);
      display.emplace(m.key, m.display_name);
      auto& bucket = by_role[{m.key, role}];
      bucket.insert(bucket.end(), run.traces.begin(), run.traces.end());
    }
  }
  std::vector<RoleBehavior> out;
  for (const auto& [key, traces] : by_role) {
    RoleBehavior b = role_behavior(traces, std::get<1>(key));
    b.model = std::get<0>(key);
    b.model_display = display[b.model];
    out.push_back(std::move(b));
  }
  return out;
}

double CostReport::cost_coverage() const {
  return items == 0 ? 0.0 : static_cast<double>(items_with_cost) / static_cast<double>(items);
}

CostReport cost_report(std::span<const TraceRecord> traces, const PriceSheet* prices) {
  CostReport rep;
  rep.items = traces.size();

  struct Acc {
    ModelCost cost;
    std::vector<Money> per_call;
    Money stored_total;
    bool stored_complete = true;
  };
  std::map<std::string, Acc> models;
  std::vector<Money> item_costs;
  std::vector<double> latencies;
  std::vector<std::int64_t> tokens;

  for (const auto& t : traces) {
    std::int64_t item_tokens = 0;
    for (const auto& s : t.stages) {
      if (!s) continue;
      Acc& acc = models[s->model];
      acc.cost.model = s->model;
      ++acc.cost.calls;
      if (!s->usage) {
        ++acc.cost.calls_without_usage;
        acc.stored_complete = false;
        continue;
      }
      acc.cost.total_input_tokens += s->usage->prompt_tokens;
      acc.cost.total_output_tokens += s->usage->completion_tokens;
      rep.total_input_tokens += s->usage->prompt_tokens;
      rep.total_output_tokens += s->usage->completion_tokens;
      item_tokens += s->usage->total();

      std::optional<Money> call_cost = s->cost;
      if (prices != nullptr) {
        const ModelPrice* price = prices->find(s->model);
        call_cost = price ? std::optional<Money>(stage_cost(*s->usage, *price)) : std::nullopt;
      }
      if (call_cost) {
        acc.per_call.push_back(*call_cost);
        acc.stored_total += *call_cost;
      } else {
        acc.stored_complete = false;
      }
    }
    tokens.push_back(item_tokens);
    latencies.push_back(item_latency(t));
    const auto cost = prices ? pipeline_cost(t, *prices) : pipeline_cost(t);
    if (cost) {
      ++rep.items_with_cost;
      rep.total_cost += *cost;
      item_costs.push_back(*cost);
    }
  }

  for (auto& [key, acc] : models) {
    if (prices != nullptr) {
      if (const ModelPrice* price = prices->find(key)) {
        acc.cost.total_cost = stage_cost(
            TokenUsage{acc.cost.total_input_tokens, acc.cost.total_output_tokens}, *price);
      }
    } else if (acc.stored_complete) {
      acc.cost.total_cost = acc.stored_total;
    }
    if (!acc.per_call.empty()) acc.cost.median_cost_per_call = lower_median(acc.per_call);
    rep.per_model.push_back(std::move(acc.cost));
  }
  if (!item_costs.empty()) rep.median_cost_per_item = lower_median(item_costs);
  if (!latencies.empty()) rep.median_latency_s = lower_median(latencies);
  if (!tokens.empty()) rep.median_tokens_per_item = lower_median(tokens);
  return rep;
}

}  // namespace tracepipe
