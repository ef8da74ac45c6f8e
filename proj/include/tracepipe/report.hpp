#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tracepipe/csv.hpp"
#include "tracepipe/money.hpp"
#include "tracepipe/runner.hpp"

namespace tracepipe {

struct Table {
  std::string name;   // file stem of the CSV
  std::string title;  // Markdown heading
  CsvRow header;
  std::vector<CsvRow> rows;
};

// Builds, in order:
//   runs            one row per run (input for the Pareto step)
//   baseline        single-model accuracy, median latency and cost per prompt
//   pipelines       simple vs accountable accuracy per dataset and config
//   planner_errors  planner error rate per model and dataset (accountable runs)
//   repair_harm     executor/critic repair and harm rates per model (accountable runs)
// With `prices`, costs are recomputed from token usage; otherwise the costs
// stored on the traces are used.
std::vector<Table> build_report(std::span<const RunData> runs, const PriceSheet* prices = nullptr);

std::string render_markdown(std::span<const Table> tables);

// Writes <name>.csv for every table plus report.md.
void write_report(std::span<const Table> tables, const std::filesystem::path& out_dir);

}  // namespace tracepipe
