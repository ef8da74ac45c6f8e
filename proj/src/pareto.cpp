#include "tracepipe/pareto.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "tracepipe/core.hpp"
#include "tracepipe/csv.hpp"

namespace tracepipe {

namespace fs = std::filesystem;

ConfigPoint make_config_point(std::string label, double accuracy, double median_cost,
                              double median_latency) {
  if (!(accuracy >= 0.0 && accuracy <= 100.0)) {
    throw Error("config point '" + label + "': accuracy must be in [0, 100]");
  }
  if (!(median_cost >= 0.0) || !std::isfinite(median_cost)) {
    throw Error("config point '" + label + "': cost must be finite and >= 0");
  }
  if (!(median_latency >= 0.0) || !std::isfinite(median_latency)) {
    throw Error("config point '" + label + "': latency must be finite and >= 0");
  }
  return ConfigPoint{std::move(label), accuracy, median_cost, median_latency};
}

bool dominates(const ConfigPoint& a, const ConfigPoint& b) {
  return a.accuracy >= b.accuracy && a.median_cost <= b.median_cost &&
         (a.accuracy > b.accuracy || a.median_cost < b.median_cost);
}

std::vector<ConfigPoint> frontier(std::span<const ConfigPoint> points) {
  if (points.empty()) throw Error("frontier of an empty point set");
  std::vector<ConfigPoint> sorted(points.begin(), points.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const ConfigPoint& a, const ConfigPoint& b) {
    if (a.median_cost != b.median_cost) return a.median_cost < b.median_cost;
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    return a.label < b.label;
  });

  // Sweep cost levels in ascending order. Within a level only the most
  // accurate points can survive, and only if they beat everything cheaper.
  std::vector<ConfigPoint> out;
  bool have_best = false;
  double best_accuracy = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].median_cost == sorted[i].median_cost) ++j;
    const double level_best = sorted[i].accuracy;
    if (!have_best || level_best > best_accuracy) {
      for (std::size_t k = i; k < j && sorted[k].accuracy == level_best; ++k) out.push_back(sorted[k]);
      best_accuracy = level_best;
      have_best = true;
    }
    i = j;
  }
  return out;
}

namespace {

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error("csv: column '" + what + "' has non-numeric value '" + s + "'");
  }
}

}  // namespace

std::vector<GroupedPoint> read_points_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  const auto rows = parse_csv(in);
  if (rows.empty()) throw Error("'" + path.string() + "' is empty");

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].size(); ++i) col[rows[0][i]] = i;
  for (const char* required : {"label", "accuracy", "median_cost_usd", "median_latency_s"}) {
    if (!col.contains(required)) {
      throw Error("'" + path.string() + "' lacks column '" + required + "'");
    }
  }
  auto cell = [&](const CsvRow& row, const std::string& name) -> std::string {
    auto it = col.find(name);
    if (it == col.end() || it->second >= row.size()) return {};
    return row[it->second];
  };

  std::vector<GroupedPoint> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const CsvRow& row = rows[r];
    const std::string cost = cell(row, "median_cost_usd");
    if (cost.empty()) continue;
    std::string group = cell(row, "dataset");
    const std::string regime = cell(row, "regime");
    if (!regime.empty()) group += group.empty() ? regime : "/" + regime;
    const std::string latency = cell(row, "median_latency_s");
    out.push_back({group, make_config_point(cell(row, "label"),
                                            parse_double(cell(row, "accuracy"), "accuracy"),
                                            parse_double(cost, "median_cost_usd"),
                                            latency.empty() ? 0.0 : parse_double(latency, "median_latency_s"))});
  }
  return out;
}

void write_pareto_outputs(std::span<const GroupedPoint> points, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::string> order;
  std::map<std::string, std::vector<ConfigPoint>> groups;
  for (const auto& gp : points) {
    if (!groups.contains(gp.group)) order.push_back(gp.group);
    groups[gp.group].push_back(gp.point);
  }

  std::ofstream front(out_dir / "frontier.csv", std::ios::binary | std::ios::trunc);
  std::ofstream plot(out_dir / "plot.csv", std::ios::binary | std::ios::trunc);
  if (!front || !plot) throw Error("cannot write Pareto outputs to '" + out_dir.string() + "'");
  write_csv_row(front, {"group", "label", "accuracy", "median_cost_usd", "median_latency_s"});
  write_csv_row(plot, {"group", "label", "x_cost_usd", "y_accuracy", "color_latency_s", "on_frontier"});

  for (const auto& group : order) {
    const auto& pts = groups[group];
    const auto best = frontier(pts);
    for (const auto& p : best) {
      write_csv_row(front, {group, p.label, format_number(p.accuracy), format_number(p.median_cost),
                            format_number(p.median_latency)});
    }
    for (const auto& p : pts) {
      const bool on = std::find(best.begin(), best.end(), p) != best.end();
      write_csv_row(plot, {group, p.label, format_number(p.median_cost), format_number(p.accuracy),
                           format_number(p.median_latency), on ? "1" : "0"});
    }
  }
  if (!front || !plot) throw Error("failed writing Pareto outputs");
}

}  // namespace tracepipe
