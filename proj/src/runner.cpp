#include "tracepipe/runner.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>
#include <unordered_set>

#include "tracepipe/blame.hpp"
#include "tracepipe/hash.hpp"
#include "tracepipe/metrics.hpp"

namespace tracepipe {

namespace fs = std::filesystem;
using nlohmann::json;

Clock system_clock() {
  return [] {
    const auto now = std::chrono::system_clock::now();
    const auto secs = std::chrono::time_point_cast<std::chrono::seconds>(now);
    const auto millis = std::chrono::duration_cast<std::chrono::milliseconds>(now - secs).count();
    const std::time_t t = std::chrono::system_clock::to_time_t(secs);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                  static_cast<int>(millis));
    return std::string(buf);
  };
}

Clock fixed_clock(std::string stamp) {
  return [stamp = std::move(stamp)] { return stamp; };
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

const ModelId& RunManifest::model(StageRole role) const {
  const std::size_t i = regime == Regime::Baseline ? 0 : position(role);
  if (i >= models.size()) throw Error("manifest has no model for " + std::string(to_string(role)));
  return models[i];
}

json RunManifest::to_json() const {
  json ms = json::array();
  for (const auto& m : models) {
    ms.push_back({{"key", m.key}, {"display_name", m.display_name}, {"backend", m.backend_ref}});
  }
  return {{"schema_version", kManifestSchemaVersion},
          {"regime", std::string(to_string(regime))},
          {"label", label},
          {"models", ms},
          {"dataset", {{"name", dataset_name}, {"sha256", dataset_sha256}, {"items", dataset_items}}},
          {"prices", prices},
          {"prices_sha256", prices_sha256},
          {"created_at", created_at},
          {"updated_at", updated_at},
          {"records", records},
          {"item_errors", item_errors},
          {"complete", complete},
          {"traces", kTracesFile}};
}

RunManifest RunManifest::from_json(const json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kManifestSchemaVersion) {
      throw Error("unsupported manifest schema_version " + std::to_string(version));
    }
    RunManifest m;
    auto regime = regime_from_string(j.at("regime").get<std::string>());
    if (!regime) throw Error("manifest: unknown regime " + j.at("regime").dump());
    m.regime = *regime;
    m.label = j.at("label").get<std::string>();
    for (const auto& x : j.at("models")) {
      m.models.push_back({x.at("key").get<std::string>(), x.at("display_name").get<std::string>(),
                          x.at("backend").get<std::string>()});
    }
    if (m.models.size() != (m.regime == Regime::Baseline ? 1u : 3u)) {
      throw Error("manifest: wrong number of models for regime " + std::string(to_string(m.regime)));
    }
    const json& d = j.at("dataset");
    m.dataset_name = d.at("name").get<std::string>();
    m.dataset_sha256 = d.at("sha256").get<std::string>();
    m.dataset_items = d.at("items").get<std::size_t>();
    m.prices = j.at("prices");
    m.prices_sha256 = j.at("prices_sha256").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    m.updated_at = j.at("updated_at").get<std::string>();
    m.records = j.at("records").get<std::size_t>();
    m.item_errors = j.at("item_errors").get<std::size_t>();
    m.complete = j.at("complete").get<bool>();
    return m;
  } catch (const json::exception& e) {
    throw Error(std::string("manifest: ") + e.what());
  }
}

RunManifest RunManifest::load(const fs::path& run_dir) {
  const fs::path path = run_dir / kManifestFile;
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest '" + path.string() + "'");
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error("manifest '" + path.string() + "': " + e.what());
  }
}

void RunManifest::save(const fs::path& run_dir) const {
  const fs::path path = run_dir / kManifestFile;
  const fs::path tmp = run_dir / (std::string(kManifestFile) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << to_json().dump(2) << '\n';
    if (!out) throw Error("cannot write manifest '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Item execution
// ---------------------------------------------------------------------------

namespace {

struct StageRun {
  StageTrace trace;
  std::string raw;  // reply that was parsed (empty on failure)
};

TaskContext context_for(const TaskItem& item, const Answer& upstream) {
  return TaskContext{item.id, item.gold, item.letters(), upstream};
}

StageRun run_stage(Agent& agent, const ModelId& model, StageRole role, std::string prompt,
                   const TaskContext& ctx, bool allow_reask, const RunOptions& options) {
  StageRun out;
  StageTrace& st = out.trace;
  st.model = model.key;
  st.prompt_sha256 = sha256_hex(prompt);

  AgentRequest request;
  request.prompt = std::move(prompt);
  request.role = role;
  request.model = model;
  request.sampling = options.sampling;
  request.timeout_s = options.timeout_s;
  request.context = ctx;

  try {
    AgentResponse first = agent.invoke(request);
    st.attempts = 1;
    st.usage = first.usage;
    st.latency_s = first.latency_s;
    out.raw = std::move(first.raw_text);
    st.answer = parse_answer_letter(out.raw);

    if (!st.answer && allow_reask) {
      request.prompt += format_reminder();
      request.attempt = 1;
      AgentResponse second = agent.invoke(request);
      st.attempts = 2;
      if (st.usage && second.usage) {
        *st.usage += *second.usage;
      } else {
        st.usage.reset();
      }
      st.latency_s += second.latency_s;
      out.raw = std::move(second.raw_text);
      st.answer = parse_answer_letter(out.raw);
    }
  } catch (const std::exception& e) {
    st.error = e.what();
    st.answer.reset();
  }
  st.raw_output = out.raw;

  if (st.usage) {
    if (const ModelPrice* price = options.prices.find(model.key)) st.cost = stage_cost(*st.usage, *price);
  }
  return out;
}

std::string now(const RunOptions& options) {
  return options.clock ? options.clock() : system_clock()();
}

}  // namespace

TraceRecord execute_baseline_item(const TaskItem& item, const ModelId& model, Agent& agent,
                                  const RunOptions& options) {
  TraceRecord r;
  r.task_id = item.id;
  r.label = model.key;
  r.regime = Regime::Baseline;
  r.gold = item.gold;
  r.started_at = now(options);

  StageRun p = run_stage(agent, model, StageRole::Planner,
                         build_simple_handoff(item, std::nullopt, options.templates),
                         context_for(item, std::nullopt), false, options);
  const Answer answer = p.trace.answer;
  r.stages[position(StageRole::Planner)] = std::move(p.trace);

  // A single answer occupies every slot, so no repair or harm can fire.
  const BlameResult blame = assign_blame(answer, answer, answer, item.gold);
  r.final_answer = blame.final_answer;
  r.flags = blame.flags;
  r.origin = blame.origin;
  r.finished_at = now(options);
  return r;
}

TraceRecord execute_pipeline_item(const TaskItem& item, const PipelineConfig& config,
                                  const AgentTriple& agents, const RunOptions& options) {
  const bool accountable = config.regime() == Regime::Accountable;
  TraceRecord r;
  r.task_id = item.id;
  r.label = config.label();
  r.regime = config.regime();
  r.gold = item.gold;
  r.started_at = now(options);

  std::vector<StageArtifact> artifacts;
  artifacts.reserve(3);
  Answer upstream;
  for (StageRole role : kAllRoles) {
    const ModelId& model = config.model(role);
    std::string prompt;
    if (accountable) {
      prompt = build_accountable_handoff(item, role, artifacts, options.templates);
    } else {
      const std::optional<StageArtifact> prior =
          artifacts.empty() ? std::nullopt : std::optional<StageArtifact>(artifacts.back());
      prompt = build_simple_handoff(item, prior, options.templates);
    }
    StageRun run = run_stage(*agents[position(role)], model, role, std::move(prompt),
                             context_for(item, upstream), accountable && options.reask_on_malformed,
                             options);
    artifacts.push_back(validate_artifact(run.raw, item.id, role, model, artifacts));
    upstream = run.trace.answer;
    r.stages[position(role)] = std::move(run.trace);
  }

  const BlameResult blame =
      assign_blame(artifacts[0].answer, artifacts[1].answer, artifacts[2].answer, item.gold);
  r.final_answer = blame.final_answer;
  r.flags = blame.flags;
  r.origin = blame.origin;
  r.finished_at = now(options);
  return r;
}

// ---------------------------------------------------------------------------
// Run driver
// ---------------------------------------------------------------------------

namespace {

using ItemFn = std::function<TraceRecord(const TaskItem&)>;

// Appends records in dataset order regardless of which worker finishes
// first, so the trace file is independent of scheduling.
class OrderedTraceWriter {
 public:
  explicit OrderedTraceWriter(const fs::path& path) : path_(path), out_(path, std::ios::binary | std::ios::app) {
    if (!out_) throw Error("cannot open trace file '" + path.string() + "' for append");
  }

  void submit(std::size_t index, TraceRecord record) {
    std::lock_guard lock(mu_);
    pending_.emplace(index, std::move(record));
    while (!pending_.empty() && pending_.begin()->first == next_) {
      const TraceRecord& rec = pending_.begin()->second;
      if (rec.has_item_error()) ++item_errors_;
      out_ << to_jsonl_line(rec) << '\n';
      out_.flush();
      if (!out_) throw Error("failed writing trace file '" + path_.string() + "'");
      pending_.erase(pending_.begin());
      ++next_;
    }
  }

  std::size_t written() const { return next_; }
  std::size_t item_errors() const { return item_errors_; }

 private:
  fs::path path_;
  std::ofstream out_;
  std::mutex mu_;
  std::map<std::size_t, TraceRecord> pending_;
  std::size_t next_ = 0;
  std::size_t item_errors_ = 0;
};

RunSummary drive(const fs::path& out_dir, RunManifest manifest, const Dataset& dataset,
                 const std::vector<TraceRecord>& existing, const ItemFn& fn,
                 const RunOptions& options) {
  std::unordered_set<std::string> done;
  std::size_t existing_errors = 0;
  for (const auto& r : existing) {
    done.insert(r.task_id);
    if (r.has_item_error()) ++existing_errors;
  }

  std::vector<const TaskItem*> todo;
  for (const auto& item : dataset.items()) {
    if (!done.contains(item.id)) todo.push_back(&item);
  }
  RunSummary summary;
  summary.skipped = done.size();
  if (options.limit && todo.size() > *options.limit) todo.resize(*options.limit);

  manifest.updated_at = now(options);
  manifest.save(out_dir);

  OrderedTraceWriter writer(out_dir / kTracesFile);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      try {
        writer.submit(i, fn(*todo[i]));
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
    }
  };

  const std::size_t n_workers = std::max<std::size_t>(1, std::min(options.parallelism, todo.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }

  summary.new_records = writer.written();
  summary.new_item_errors = writer.item_errors();
  manifest.records = existing.size() + writer.written();
  manifest.item_errors = existing_errors + writer.item_errors();
  manifest.complete = manifest.records == dataset.size();
  manifest.updated_at = now(options);
  manifest.save(out_dir);
  summary.manifest = std::move(manifest);
  if (failure) std::rethrow_exception(failure);
  return summary;
}

RunManifest new_manifest(Regime regime, std::string label, std::vector<ModelId> models,
                         const Dataset& dataset, const RunOptions& options) {
  RunManifest m;
  m.regime = regime;
  m.label = std::move(label);
  m.models = std::move(models);
  m.dataset_name = dataset.name();
  m.dataset_sha256 = dataset_hash(dataset);
  m.dataset_items = dataset.size();
  m.prices = options.prices.to_json();
  m.prices_sha256 = options.prices.hash();
  m.created_at = now(options);
  return m;
}

void prepare_fresh_dir(const fs::path& out_dir) {
  fs::create_directories(out_dir);
  if (fs::exists(out_dir / kTracesFile) || fs::exists(out_dir / kManifestFile)) {
    throw Error("'" + out_dir.string() + "' already holds a run; use resume to continue it");
  }
}

}  // namespace

RunSummary run_baseline(const ModelId& model, std::shared_ptr<Agent> agent, const Dataset& dataset,
                        const fs::path& out_dir, const RunOptions& options) {
  if (!agent) throw Error("no agent for model '" + model.key + "'");
  prepare_fresh_dir(out_dir);
  RunManifest m = new_manifest(Regime::Baseline, model.key, {model}, dataset, options);
  return drive(out_dir, std::move(m), dataset, {},
               [&](const TaskItem& item) { return execute_baseline_item(item, model, *agent, options); },
               options);
}

RunSummary run_pipeline(const PipelineConfig& config, const AgentTriple& agents,
                        const Dataset& dataset, const fs::path& out_dir, const RunOptions& options) {
  for (StageRole role : kAllRoles) {
    if (!agents[position(role)]) {
      throw Error("no agent for " + std::string(to_string(role)) + " model '" + config.model(role).key + "'");
    }
  }
  prepare_fresh_dir(out_dir);
  RunManifest m = new_manifest(config.regime(), config.label(),
                               {config.model(StageRole::Planner), config.model(StageRole::Executor),
                                config.model(StageRole::Critic)},
                               dataset, options);
  return drive(out_dir, std::move(m), dataset, {},
               [&](const TaskItem& item) { return execute_pipeline_item(item, config, agents, options); },
               options);
}

RunSummary resume(const fs::path& run_dir, const Dataset& dataset, const BackendRegistry& registry,
                  RunOptions options) {
  RunManifest m = RunManifest::load(run_dir);
  const std::string hash = dataset_hash(dataset);
  if (hash != m.dataset_sha256) {
    throw Error("refusing to resume: dataset hash " + hash.substr(0, 12) +
                " does not match the run's " + m.dataset_sha256.substr(0, 12));
  }
  options.prices = PriceSheet::from_json(m.prices);

  std::vector<TraceRecord> existing;
  if (fs::exists(run_dir / kTracesFile)) existing = read_traces(run_dir / kTracesFile);
  std::unordered_set<std::string> ids;
  for (const auto& item : dataset.items()) ids.insert(item.id);
  std::unordered_set<std::string> seen;
  for (const auto& r : existing) {
    if (!ids.contains(r.task_id)) throw Error("trace task '" + r.task_id + "' is not in the dataset");
    if (!seen.insert(r.task_id).second) throw Error("trace file repeats task '" + r.task_id + "'");
  }

  if (m.regime == Regime::Baseline) {
    const ModelId model = m.models.at(0);
    auto agent = registry.agent(model);
    return drive(run_dir, m, dataset, existing,
                 [&](const TaskItem& item) { return execute_baseline_item(item, model, *agent, options); },
                 options);
  }
  const PipelineConfig config(m.models.at(0), m.models.at(1), m.models.at(2), m.regime);
  if (config.label() != m.label) throw Error("manifest label does not match its models");
  const AgentTriple agents = {registry.agent(m.models[0]), registry.agent(m.models[1]),
                              registry.agent(m.models[2])};
  return drive(run_dir, m, dataset, existing,
               [&](const TaskItem& item) { return execute_pipeline_item(item, config, agents, options); },
               options);
}

RunData load_run(const fs::path& run_dir) {
  RunData d;
  d.manifest = RunManifest::load(run_dir);
  const fs::path traces = run_dir / kTracesFile;
  if (fs::exists(traces)) d.traces = read_traces(traces);
  return d;
}

}  // namespace tracepipe
