#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>
#include <sstream>

#include "support.hpp"
#include "tracepipe/metrics.hpp"
#include "tracepipe/runner.hpp"

using namespace testing;

namespace {

RunOptions quiet_options(std::size_t parallelism = 1) {
  RunOptions o;
  o.parallelism = parallelism;
  o.clock = fixed_clock("2025-01-01T00:00:00.000Z");
  return o;
}

AgentTriple stochastic_triple(const StochasticAgentProfile& p, std::uint64_t seed) {
  return {std::make_shared<StochasticAgent>(p, seed), std::make_shared<StochasticAgent>(p, seed),
          std::make_shared<StochasticAgent>(p, seed)};
}

PipelineConfig abc(Regime regime = Regime::Accountable) {
  return PipelineConfig(model_id("A"), model_id("B"), model_id("C"), regime);
}

// Answers gold for every item except the listed ids, which get the next letter.
std::shared_ptr<Agent> scripted_baseline(const Dataset& ds, const std::set<std::string>& wrong,
                                         const RunOptions& options) {
  std::vector<Fixture> fixtures;
  for (const auto& item : ds.items()) {
    const auto prompt = build_simple_handoff(item, std::nullopt, options.templates);
    AnswerLetter ans = item.gold;
    if (wrong.contains(item.id)) ans = item.gold == AnswerLetter::A ? AnswerLetter::B : AnswerLetter::A;
    fixtures.push_back({sha256_hex(prompt), std::string(1, to_char(ans)), {40, 1}, 0.2});
  }
  return std::make_shared<ScriptedAgent>(fixtures);
}

class FailingAgent final : public Agent {
 public:
  AgentResponse invoke(const AgentRequest&) override {
    throw BackendError(BackendErrorKind::Timeout, "simulated timeout");
  }
};

}  // namespace

TEST_CASE("baseline with a perfect stochastic model scores 100%") {
  TempDir dir("baseline");
  const Dataset ds = make_dataset(50);
  auto agent = std::make_shared<StochasticAgent>(chain_profile(1.0, 0, 0, 0, 0), 1);
  const auto summary = run_baseline(model_id("A"), agent, ds, dir.path(), quiet_options());
  CHECK(summary.new_records == 50);
  CHECK(summary.manifest.complete);
  const auto run = load_run(dir.path());
  CHECK(accuracy(run.traces).hundredths() == 10000);
  for (const auto& t : run.traces) {
    CHECK(t.stage(StageRole::Planner));
    CHECK_FALSE(t.stage(StageRole::Executor));
    CHECK_FALSE(t.stage(StageRole::Critic));
    CHECK_FALSE(t.flags.executor_repair());
    CHECK_FALSE(t.flags.executor_harm());
    CHECK_FALSE(t.flags.critic_repair());
    CHECK_FALSE(t.flags.critic_harm());
    CHECK(t.regime == Regime::Baseline);
  }
}

TEST_CASE("baseline with a scripted model right on 3 of 4 items scores 75%") {
  TempDir dir("baseline75");
  const Dataset ds = make_dataset(4);
  const auto options = quiet_options();
  const auto summary =
      run_baseline(model_id("A"), scripted_baseline(ds, {"q3"}, options), ds, dir.path(), options);
  const auto run = load_run(dir.path());
  CHECK(accuracy(run.traces).percent_string() == "75.00");
  CHECK(run.traces[2].origin == ErrorOrigin::Planner);
  REQUIRE(run.traces[0].stage(StageRole::Planner)->cost);
  // 40 prompt, 1 completion tokens at 5000/20000 micro-USD per 1K.
  CHECK(run.traces[0].stage(StageRole::Planner)->cost->nano_usd() == 40 * 5000 + 1 * 20000);
  CHECK(summary.manifest.item_errors == 0);
}

TEST_CASE("an empty dataset is rejected before any invocation") {
  std::istringstream in("");
  CHECK_THROWS_AS(validate_dataset(in, "empty"), DatasetError);
  CHECK_THROWS_AS(Dataset("empty", {}), DatasetError);
}

TEST_CASE("executor that repairs everything yields 100% accuracy") {
  TempDir dir("repair");
  const Dataset ds = make_dataset(300);
  const auto p = chain_profile(0.6, 1.0, 0.0, 0.0, 0.0);
  run_pipeline(abc(), stochastic_triple(p, 9), ds, dir.path(), quiet_options(4));
  const auto run = load_run(dir.path());
  CHECK(run.traces.size() == 300);
  CHECK(accuracy(run.traces).hundredths() == 10000);
}

TEST_CASE("a critic that always answers gold clears every origin") {
  TempDir dir("critic");
  std::vector<TaskItem> items;
  for (int i = 0; i < 6; ++i) items.push_back(make_item("g" + std::to_string(i), AnswerLetter::A));
  const Dataset ds("allA", items);
  auto planner = std::make_shared<RecordingAgent>([](const AgentRequest&) { return "Answer: C"; });
  auto executor = std::make_shared<RecordingAgent>([](const AgentRequest&) { return "Answer: B"; });
  auto critic = std::make_shared<RecordingAgent>([](const AgentRequest&) { return "Answer: A"; });
  run_pipeline(abc(Regime::Simple), {planner, executor, critic}, ds, dir.path(), quiet_options());

  // Replay the recorded prompts through scripted agents in a second run.
  TempDir replay("critic-replay");
  run_pipeline(abc(Regime::Simple),
               {std::make_shared<ScriptedAgent>(planner->fixtures()),
                std::make_shared<ScriptedAgent>(executor->fixtures()),
                std::make_shared<ScriptedAgent>(critic->fixtures())},
               ds, replay.path(), quiet_options());
  for (const auto& t : load_run(replay.path()).traces) {
    CHECK(t.origin == ErrorOrigin::None);
    CHECK(t.final_answer == AnswerLetter::A);
    CHECK(t.flags.planner_error());
    CHECK(t.flags.critic_repair());
  }
}

TEST_CASE("manifest records the derived label") {
  TempDir dir("label");
  const Dataset ds = make_dataset(3);
  const PipelineConfig cfg(model_id("C"), model_id("B"), model_id("A"), Regime::Simple);
  const auto p = chain_profile(1.0, 0, 0, 0, 0);
  run_pipeline(cfg, stochastic_triple(p, 1), ds, dir.path(), quiet_options());
  const auto m = RunManifest::load(dir.path());
  CHECK(m.label == "CBA");
  CHECK(m.models.size() == 3);
  CHECK(m.model(StageRole::Planner).key == "C");
  CHECK(m.dataset_sha256 == dataset_hash(ds));
  CHECK(m.prices_sha256 == PriceSheet::defaults().hash());
  CHECK(m.created_at == "2025-01-01T00:00:00.000Z");
  for (const auto& t : load_run(dir.path()).traces) CHECK(t.label == "CBA");
}

TEST_CASE("resume after an interrupted run") {
  TempDir dir("resume");
  const Dataset ds = make_dataset(50);
  const auto p = chain_profile(0.7, 0.3, 0.1, 0.3, 0.1, 4);

  BackendRegistry registry;
  auto counting = std::make_shared<CountingAgent>(std::make_shared<StochasticAgent>(p, 3));
  for (const auto& key : {"A", "B", "C"}) registry.put(model_id(key).backend_ref, counting);

  auto options = quiet_options(3);
  options.limit = 10;
  const AgentTriple agents = {counting, counting, counting};
  const auto first = run_pipeline(abc(), agents, ds, dir.path(), options);
  CHECK(first.new_records == 10);
  CHECK_FALSE(first.manifest.complete);
  CHECK(counting->calls() == 30);

  options.limit.reset();
  const auto second = resume(dir.path(), ds, registry, options);
  CHECK(second.new_records == 40);
  CHECK(second.skipped == 10);
  CHECK(second.manifest.complete);
  CHECK(counting->calls() == 150);

  const auto run = load_run(dir.path());
  REQUIRE(run.traces.size() == 50);
  std::set<std::string> ids;
  for (const auto& t : run.traces) ids.insert(t.task_id);
  CHECK(ids.size() == 50);
  for (const auto& item : ds.items()) CHECK(ids.contains(item.id));

  // Same records as an uninterrupted run.
  TempDir whole("resume-whole");
  run_pipeline(abc(), stochastic_triple(p, 3), ds, whole.path(), quiet_options());
  CHECK(slurp(whole / kTracesFile) == slurp(dir / kTracesFile));

  const auto third = resume(dir.path(), ds, registry, quiet_options());
  CHECK(third.new_records == 0);
  CHECK(counting->calls() == 150);
}

TEST_CASE("resume refuses a different dataset and corrupt traces") {
  TempDir dir("resume-bad");
  const Dataset ds = make_dataset(5);
  const auto p = chain_profile(1.0, 0, 0, 0, 0);
  auto options = quiet_options();
  options.limit = 2;
  run_pipeline(abc(), stochastic_triple(p, 1), ds, dir.path(), options);

  BackendRegistry registry;
  for (const auto& key : {"A", "B", "C"}) {
    registry.put(model_id(key).backend_ref, std::make_shared<StochasticAgent>(p, 1));
  }
  const Dataset other = make_dataset(5, "ds", 8);
  try {
    resume(dir.path(), other, registry, quiet_options());
    FAIL("expected refusal");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("refusing to resume") != std::string::npos);
  }

  {
    std::ofstream out(dir / kTracesFile, std::ios::app);
    out << "{\"truncated\":\n";
  }
  try {
    resume(dir.path(), ds, registry, quiet_options());
    FAIL("expected a trace error");
  } catch (const TraceError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("a fresh run refuses to overwrite an existing one") {
  TempDir dir("overwrite");
  const Dataset ds = make_dataset(2);
  const auto p = chain_profile(1.0, 0, 0, 0, 0);
  run_pipeline(abc(), stochastic_triple(p, 1), ds, dir.path(), quiet_options());
  CHECK_THROWS_AS(run_pipeline(abc(), stochastic_triple(p, 1), ds, dir.path(), quiet_options()), Error);
}

TEST_CASE("stochastic runs do not depend on parallelism") {
  const Dataset ds = make_dataset(200);
  const auto p = chain_profile(0.6, 0.5, 0.1, 0.5, 0.1, 12);
  TempDir one("par1");
  TempDir eight("par8");
  run_pipeline(abc(), stochastic_triple(p, 42), ds, one.path(), quiet_options(1));
  run_pipeline(abc(), stochastic_triple(p, 42), ds, eight.path(), quiet_options(8));
  CHECK(slurp(one / kTracesFile) == slurp(eight / kTracesFile));
  CHECK(slurp(one / kManifestFile) == slurp(eight / kManifestFile));
}

TEST_CASE("backend failures become undefined answers and the run continues") {
  TempDir dir("failing");
  const Dataset ds = make_dataset(4);
  const auto p = chain_profile(1.0, 0, 0, 0, 0);
  const AgentTriple agents = {std::make_shared<StochasticAgent>(p, 1), std::make_shared<FailingAgent>(),
                              std::make_shared<StochasticAgent>(p, 1)};
  const auto summary = run_pipeline(abc(), agents, ds, dir.path(), quiet_options());
  CHECK(summary.manifest.complete);
  CHECK(summary.manifest.item_errors == 4);
  for (const auto& t : load_run(dir.path()).traces) {
    const auto& ex = t.stage(StageRole::Executor);
    REQUIRE(ex);
    CHECK_FALSE(ex->answer);
    REQUIRE(ex->error);
    CHECK(ex->error->find("simulated timeout") != std::string::npos);
    CHECK_FALSE(ex->usage);
    CHECK_FALSE(ex->cost);
    CHECK(t.flags.executor_harm());
    CHECK(t.has_item_error());
  }
}

TEST_CASE("accountable regime re-asks once on malformed output") {
  const TaskItem item = make_item("r1", AnswerLetter::B);
  int calls = 0;
  auto fragile = std::make_shared<RecordingAgent>([&](const AgentRequest& req) {
    ++calls;
    return req.attempt == 0 ? std::string("Jupiter, clearly.") : std::string("Answer: B");
  });
  auto options = quiet_options();
  const auto acc = execute_pipeline_item(item, abc(), {fragile, fragile, fragile}, options);
  CHECK(calls == 6);
  CHECK(acc.final_answer == AnswerLetter::B);
  CHECK(acc.stage(StageRole::Planner)->attempts == 2);
  CHECK(acc.stage(StageRole::Planner)->usage->completion_tokens == 16);

  calls = 0;
  const auto simple = execute_pipeline_item(item, abc(Regime::Simple), {fragile, fragile, fragile}, options);
  CHECK(calls == 3);
  CHECK_FALSE(simple.final_answer);
  CHECK(simple.stage(StageRole::Planner)->attempts == 1);

  calls = 0;
  options.reask_on_malformed = false;
  const auto no_reask = execute_pipeline_item(item, abc(), {fragile, fragile, fragile}, options);
  CHECK(calls == 3);
  CHECK_FALSE(no_reask.final_answer);
}

TEST_CASE("regimes share blame math for identical stage answers") {
  const Dataset ds = make_dataset(40);
  const auto p = chain_profile(0.5, 0.5, 0.3, 0.5, 0.3, 2);
  const auto options = quiet_options();
  for (const auto& item : ds.items()) {
    const auto s = execute_pipeline_item(item, abc(Regime::Simple), stochastic_triple(p, 5), options);
    const auto a = execute_pipeline_item(item, abc(Regime::Accountable), stochastic_triple(p, 5), options);
    for (StageRole role : kAllRoles) CHECK(s.stage_answer(role) == a.stage_answer(role));
    CHECK(s.flags == a.flags);
    CHECK(s.origin == a.origin);
    CHECK(s.stage(StageRole::Planner)->prompt_sha256 != a.stage(StageRole::Planner)->prompt_sha256);
  }
}

TEST_CASE("trace records round trip through JSON") {
  const Dataset ds = make_dataset(30);
  const auto p = chain_profile(0.5, 0.5, 0.3, 0.5, 0.3, 2);
  for (const auto& item : ds.items()) {
    const auto rec = execute_pipeline_item(item, abc(), stochastic_triple(p, 5), quiet_options());
    CHECK(trace_from_json(nlohmann::json::parse(to_jsonl_line(rec))) == rec);
  }
  TraceRecord bad;
  auto j = to_json(bad);
  j["schema_version"] = 9;
  CHECK_THROWS_AS(trace_from_json(j), TraceError);
}

TEST_CASE("manifest round trip") {
  RunManifest m;
  m.regime = Regime::Accountable;
  m.label = "ABC";
  m.models = {model_id("A"), model_id("B"), model_id("C")};
  m.dataset_name = "d";
  m.dataset_sha256 = "00";
  m.dataset_items = 3;
  m.prices = PriceSheet::defaults().to_json();
  m.prices_sha256 = PriceSheet::defaults().hash();
  m.records = 2;
  m.item_errors = 1;
  const auto back = RunManifest::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  auto j = m.to_json();
  j["schema_version"] = 2;
  CHECK_THROWS(RunManifest::from_json(j));
}
