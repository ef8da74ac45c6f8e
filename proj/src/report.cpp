#include "tracepipe/report.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "tracepipe/metrics.hpp"

namespace tracepipe {

namespace {

std::string model_name(const ModelId& m) {
  return m.display_name == m.key ? m.key : m.display_name + " (" + m.key + ")";
}

std::optional<Rate> run_accuracy(const RunData& run) {
  if (run.traces.empty()) return std::nullopt;
  return accuracy(run.traces);
}

std::string accuracy_cell(const std::optional<Rate>& r) { return r ? r->percent_string() : ""; }

}  // namespace

std::vector<Table> build_report(std::span<const RunData> runs, const PriceSheet* prices) {
  Table summary{"runs", "Runs",
                {"dataset", "regime", "label", "items", "records", "accuracy", "median_cost_usd",
                 "median_latency_s", "median_tokens", "cost_coverage", "item_errors"},
                {}};
  Table baseline{"baseline", "Single-model baseline",
                 {"dataset", "model", "accuracy", "median_latency_s", "median_cost_per_prompt_usd"},
                 {}};
  Table pipelines{"pipelines", "Simple vs accountable pipelines",
                  {"dataset", "config", "simple", "accountable", "delta"},
                  {}};

  struct Pair {
    std::optional<Rate> simple;
    std::optional<Rate> accountable;
  };
  std::vector<std::pair<std::string, std::string>> pair_order;
  std::map<std::pair<std::string, std::string>, Pair> pairs;

  for (const auto& run : runs) {
    const RunManifest& m = run.manifest;
    const CostReport cost = cost_report(run.traces, prices);
    const auto acc = run_accuracy(run);
    summary.rows.push_back(
        {m.dataset_name, std::string(to_string(m.regime)), m.label, std::to_string(m.dataset_items),
         std::to_string(run.traces.size()), accuracy_cell(acc),
         cost.median_cost_per_item ? cost.median_cost_per_item->to_usd_string(9) : "",
         cost.median_latency_s ? format_fixed(*cost.median_latency_s, 3) : "",
         cost.median_tokens_per_item ? std::to_string(*cost.median_tokens_per_item) : "",
         format_fixed(cost.cost_coverage(), 4), std::to_string(m.item_errors)});

    if (m.regime == Regime::Baseline) {
      baseline.rows.push_back(
          {m.dataset_name, model_name(m.models.at(0)), accuracy_cell(acc),
           cost.median_latency_s ? format_fixed(*cost.median_latency_s, 2) : "",
           cost.median_cost_per_item ? cost.median_cost_per_item->to_usd_string(4) : ""});
      continue;
    }
    const auto key = std::make_pair(m.dataset_name, m.label);
    if (!pairs.contains(key)) pair_order.push_back(key);
    (m.regime == Regime::Simple ? pairs[key].simple : pairs[key].accountable) = acc;
  }

  for (const auto& key : pair_order) {
    const Pair& p = pairs[key];
    std::string delta;
    if (p.simple && p.accountable) {
      const std::int64_t d = p.accountable->hundredths() - p.simple->hundredths();
      delta = (d > 0 ? "+" : "") + format_hundredths(d);
    }
    pipelines.rows.push_back({key.first, key.second, accuracy_cell(p.simple), accuracy_cell(p.accountable), delta});
  }

  Table planner{"planner_errors", "Planner error rate",
                {"planner_model", "dataset", "total_cases", "errors", "error_rate"},
                {}};
  for (const auto& row : planner_error_table(runs)) {
    planner.rows.push_back({model_name({row.model, row.model_display, ""}), row.dataset,
                            std::to_string(row.rate.total), std::to_string(row.rate.count),
                            row.rate.percent_string()});
  }

  Table roles{"repair_harm", "Repair and harm rates by role",
              {"model", "role", "cases", "repair_rate", "harm_rate", "repair_rate_conditional",
               "harm_rate_conditional", "repair_count", "harm_count"},
              {}};
  for (const auto& b : repair_harm_rates(runs)) {
    roles.rows.push_back({model_name({b.model, b.model_display, ""}), std::string(to_string(b.role)),
                          std::to_string(b.total_cases), b.repair_raw().percent_string(),
                          b.harm_raw().percent_string(), b.repair_conditional().percent_string(),
                          b.harm_conditional().percent_string(), std::to_string(b.repair_count),
                          std::to_string(b.harm_count)});
  }

  return {summary, baseline, pipelines, planner, roles};
}

std::string render_markdown(std::span<const Table> tables) {
  std::ostringstream out;
  bool first = true;
  for (const auto& t : tables) {
    if (!first) out << '\n';
    first = false;
    out << "## " << t.title << "\n\n";
    if (t.rows.empty()) {
      out << "(no data)\n";
      continue;
    }
    auto row = [&](const CsvRow& cells) {
      out << '|';
      for (const auto& c : cells) out << ' ' << c << " |";
      out << '\n';
    };
    row(t.header);
    out << '|';
    for (std::size_t i = 0; i < t.header.size(); ++i) out << " --- |";
    out << '\n';
    for (const auto& r : t.rows) row(r);
  }
  return out.str();
}

void write_report(std::span<const Table> tables, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& t : tables) {
    std::ofstream out(out_dir / (t.name + ".csv"), std::ios::binary | std::ios::trunc);
    write_csv_row(out, t.header);
    for (const auto& r : t.rows) write_csv_row(out, r);
    if (!out) throw Error("failed writing " + t.name + ".csv");
  }
  std::ofstream md(out_dir / "report.md", std::ios::binary | std::ios::trunc);
  md << render_markdown(tables);
  if (!md) throw Error("failed writing report.md");
}

}  // namespace tracepipe
