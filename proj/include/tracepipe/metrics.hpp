#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tracepipe/core.hpp"
#include "tracepipe/money.hpp"
#include "tracepipe/runner.hpp"
#include "tracepipe/trace.hpp"

namespace tracepipe {

// prompt/1000 * input rate + completion/1000 * output rate, exact.
Money stage_cost(const TokenUsage& usage, const ModelPrice& price);

// Sum of the recorded stage costs; nullopt when any executed stage lacks a
// cost (usage or price missing).
std::optional<Money> pipeline_cost(const TraceRecord& trace);
// Same, recomputed from usage with `prices`.
std::optional<Money> pipeline_cost(const TraceRecord& trace, const PriceSheet& prices);

// End-to-end latency: the sum of stage latencies.
double item_latency(const TraceRecord& trace);

// A count over a denominator. Percentages are rounded half up to two
// decimals in exact integer arithmetic; a zero denominator is undefined.
struct Rate {
  std::int64_t count = 0;
  std::int64_t total = 0;

  bool defined() const { return total > 0; }
  // 100 * count / total in hundredths of a percent, rounded half up.
  std::int64_t hundredths() const;
  double percent() const;
  // "40.49", or "undefined".
  std::string percent_string() const;
};

// Renders hundredths of a percent ("-0.78", "36.22").
std::string format_hundredths(std::int64_t hundredths);

// Share of traces whose final answer equals gold. UNDEFINED finals count as
// wrong. Throws Error on an empty set.
Rate accuracy(std::span<const TraceRecord> traces);

// Lower median: element (n-1)/2 of the sorted values. Throws on empty input.
template <class T>
T lower_median(std::vector<T> values) {
  if (values.empty()) throw Error("median of an empty set");
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

// Planner error bookkeeping over the pipeline runs in which one model was
// the planner on one dataset: total cases is the sum of the runs' dataset
// sizes, errors the number of planner_error flags.
Rate planner_error_rate(std::span<const RunData> runs);

struct PlannerErrorRow {
  std::string model;          // key
  std::string model_display;  // display name
  std::string dataset;
  Rate rate;
};

// Groups runs of `regime` by (planner model, dataset), in first-seen order.
std::vector<PlannerErrorRow> planner_error_table(std::span<const RunData> runs,
                                                 Regime regime = Regime::Accountable);

struct RoleBehavior {
  std::string model;
  std::string model_display;
  StageRole role = StageRole::Executor;
  std::int64_t total_cases = 0;
  std::int64_t repair_count = 0;
  std::int64_t harm_count = 0;
  std::int64_t repair_eligible = 0;  // upstream wrong
  std::int64_t harm_eligible = 0;    // upstream right

  std::int64_t noop_count() const { return total_cases - repair_count - harm_count; }
  Rate repair_raw() const { return {repair_count, total_cases}; }
  Rate harm_raw() const { return {harm_count, total_cases}; }
  Rate repair_conditional() const { return {repair_count, repair_eligible}; }
  Rate harm_conditional() const { return {harm_count, harm_eligible}; }
};

// Tallies one role over traces; the upstream of the executor is the planner
// answer and the upstream of the critic is the executor answer.
RoleBehavior role_behavior(std::span<const TraceRecord> traces, StageRole role);

// Executor and critic behaviour per model, aggregated over every pipeline run
// of `regime`. Rows ordered by model key then role.
std::vector<RoleBehavior> repair_harm_rates(std::span<const RunData> runs,
                                            Regime regime = Regime::Accountable);

struct ModelCost {
  std::string model;
  std::int64_t calls = 0;
  std::int64_t calls_without_usage = 0;
  std::int64_t total_input_tokens = 0;
  std::int64_t total_output_tokens = 0;
  // Rate formula applied to the token totals; absent without a price row.
  std::optional<Money> total_cost;
  std::optional<Money> median_cost_per_call;
};

struct CostReport {
  std::size_t items = 0;
  std::size_t items_with_cost = 0;
  std::int64_t total_input_tokens = 0;
  std::int64_t total_output_tokens = 0;
  Money total_cost;  // over items with a cost
  std::optional<Money> median_cost_per_item;
  std::optional<double> median_latency_s;
  std::optional<std::int64_t> median_tokens_per_item;
  std::vector<ModelCost> per_model;

  double cost_coverage() const;
};

// Costs are recomputed from usage with `prices` when given, otherwise the
// costs stored on the traces are used.
CostReport cost_report(std::span<const TraceRecord> traces, const PriceSheet* prices = nullptr);

}  // namespace tracepipe
