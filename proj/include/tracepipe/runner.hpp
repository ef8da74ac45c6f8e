#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tracepipe/backends.hpp"
#include "tracepipe/core.hpp"
#include "tracepipe/handoff.hpp"
#include "tracepipe/money.hpp"
#include "tracepipe/trace.hpp"

namespace tracepipe {

// Source of record timestamps (ISO-8601 UTC strings).
using Clock = std::function<std::string()>;

Clock system_clock();
// Always returns `stamp`; keeps simulated runs byte-reproducible.
Clock fixed_clock(std::string stamp);

struct RunOptions {
  std::size_t parallelism = 1;
  // Stop after this many newly executed items; the run stays resumable.
  std::optional<std::size_t> limit;
  PriceSheet prices = PriceSheet::defaults();
  PromptTemplates templates = PromptTemplates::defaults();
  Clock clock;  // system_clock() when empty
  double timeout_s = 60.0;
  nlohmann::json sampling = nlohmann::json::object();
  // One re-ask with a format reminder when an accountable stage's reply
  // does not parse.
  bool reask_on_malformed = true;
};

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTracesFile = "traces.jsonl";

struct RunManifest {
  Regime regime = Regime::Simple;
  std::string label;
  // One model for baseline runs, planner/executor/critic otherwise.
  std::vector<ModelId> models;
  std::string dataset_name;
  std::string dataset_sha256;
  std::size_t dataset_items = 0;
  nlohmann::json prices;
  std::string prices_sha256;
  std::string created_at;
  std::string updated_at;
  std::size_t records = 0;
  std::size_t item_errors = 0;
  bool complete = false;

  const ModelId& model(StageRole role) const;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  static RunManifest load(const std::filesystem::path& run_dir);
  // Written to a temporary file and renamed into place.
  void save(const std::filesystem::path& run_dir) const;
};

struct RunSummary {
  RunManifest manifest;
  std::size_t new_records = 0;
  std::size_t skipped = 0;
  std::size_t new_item_errors = 0;
};

using AgentTriple = std::array<std::shared_ptr<Agent>, 3>;

// Per-item execution, exposed for tests. Backend failures become an
// UNDEFINED stage answer with the error recorded on the stage.
TraceRecord execute_baseline_item(const TaskItem& item, const ModelId& model, Agent& agent,
                                  const RunOptions& options);
TraceRecord execute_pipeline_item(const TaskItem& item, const PipelineConfig& config,
                                  const AgentTriple& agents, const RunOptions& options);

// Single-model regime: one plain question prompt per item.
// Throws if `out_dir` already holds traces.
RunSummary run_baseline(const ModelId& model, std::shared_ptr<Agent> agent, const Dataset& dataset,
                        const std::filesystem::path& out_dir, const RunOptions& options);

// Planner -> Executor -> Critic over every item, up to options.parallelism
// items at a time. Stages within an item run in order.
RunSummary run_pipeline(const PipelineConfig& config, const AgentTriple& agents,
                        const Dataset& dataset, const std::filesystem::path& out_dir,
                        const RunOptions& options);

// Continues a partial run. The dataset must hash to the manifest's value;
// agents are resolved through `registry` by the manifest's backend refs and
// the manifest's price sheet is reused.
RunSummary resume(const std::filesystem::path& run_dir, const Dataset& dataset,
                  const BackendRegistry& registry, RunOptions options);

// Convenience for analysis code.
struct RunData {
  RunManifest manifest;
  std::vector<TraceRecord> traces;
};

RunData load_run(const std::filesystem::path& run_dir);

}  // namespace tracepipe
