#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tracepipe {

// One configuration in accuracy/cost space; latency rides along for
// plotting and never affects dominance.
struct ConfigPoint {
  std::string label;
  double accuracy = 0.0;      // percent
  double median_cost = 0.0;   // USD
  double median_latency = 0.0;  // seconds

  friend bool operator==(const ConfigPoint&, const ConfigPoint&) = default;
};

// Throws Error unless accuracy is in [0, 100] and cost and latency are
// finite and non-negative.
ConfigPoint make_config_point(std::string label, double accuracy, double median_cost,
                              double median_latency);

// a is at least as accurate and at most as expensive as b, and strictly
// better in one of the two.
bool dominates(const ConfigPoint& a, const ConfigPoint& b);

// Non-dominated points ordered by ascending cost (then label). Points tied
// in both coordinates are all kept. Throws Error on empty input.
std::vector<ConfigPoint> frontier(std::span<const ConfigPoint> points);

// Points read from a run summary CSV, keyed by an optional grouping column.
struct GroupedPoint {
  std::string group;
  ConfigPoint point;
};

// Reads `label`, `accuracy`, `median_cost_usd` and `median_latency_s`
// columns; `dataset` and `regime`, when present, form the group key.
// Rows with an empty cost are skipped.
std::vector<GroupedPoint> read_points_csv(const std::filesystem::path& path);

// Computes one frontier per group and writes:
//   frontier.csv  group,label,accuracy,median_cost_usd,median_latency_s
//   plot.csv      group,label,x_cost_usd,y_accuracy,color_latency_s,on_frontier
void write_pareto_outputs(std::span<const GroupedPoint> points, const std::filesystem::path& out_dir);

}  // namespace tracepipe
