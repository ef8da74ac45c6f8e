#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "support.hpp"

using namespace testing;
using nlohmann::json;

namespace {

AgentRequest request_for(std::string prompt, StageRole role = StageRole::Planner) {
  AgentRequest r;
  r.prompt = std::move(prompt);
  r.role = role;
  r.model = model_id("A");
  return r;
}

BackendErrorKind kind_of(Agent& agent, const AgentRequest& req) {
  try {
    agent.invoke(req);
  } catch (const BackendError& e) {
    return e.kind();
  }
  FAIL("expected BackendError");
  return BackendErrorKind::Config;
}

// Local provider stand-in. The handler is swapped per test.
class FakeProvider {
 public:
  FakeProvider() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeProvider() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

HttpBackendConfig config_for(const FakeProvider& p) {
  return HttpBackendConfig::from_json(json{
      {"base_url", p.url()},
      {"request_template", {{"model", "m"}, {"messages", json::array({{{"role", "user"}, {"content", "{prompt}"}}})}}},
      {"max_retries", 3},
      {"backoff_initial_s", 0.5},
      {"backoff_max_s", 1.0}});
}

const std::string kOkReply =
    R"({"choices":[{"message":{"content":"Answer: B"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}})";

}  // namespace

TEST_CASE("scripted backend hit and miss") {
  const std::string prompt = "What is 1+1?";
  ScriptedAgent agent({{sha256_hex(prompt), "Answer: B", {100, 5}, 0.0}});
  const auto r = agent.invoke(request_for(prompt));
  CHECK(r.raw_text == "Answer: B");
  REQUIRE(r.usage);
  CHECK(*r.usage == TokenUsage{100, 5});
  CHECK(r.latency_s == doctest::Approx(0.0));
  CHECK(kind_of(agent, request_for("something else")) == BackendErrorKind::FixtureMiss);
}

TEST_CASE("scripted backend loads JSONL and rejects duplicates") {
  TempDir dir("fixtures");
  const std::string h = sha256_hex("p");
  spit(dir / "f.jsonl", json{{"prompt_sha256", h}, {"response_text", "C"}, {"prompt_tokens", 7},
                             {"completion_tokens", 1}, {"latency_s", 0.25}}.dump() + "\n\n");
  auto agent = ScriptedAgent::load(dir / "f.jsonl");
  CHECK(agent->size() == 1);
  const auto r = agent->invoke(request_for("p"));
  CHECK(r.raw_text == "C");
  CHECK(r.latency_s == doctest::Approx(0.25));

  const std::string line = json{{"prompt_sha256", h}, {"response_text", "C"}, {"prompt_tokens", 7},
                                {"completion_tokens", 1}}.dump();
  spit(dir / "dup.jsonl", line + "\n" + line + "\n");
  CHECK_THROWS_AS(ScriptedAgent::load(dir / "dup.jsonl"), BackendError);
  spit(dir / "bad.jsonl", "{\n");
  CHECK_THROWS_AS(ScriptedAgent::load(dir / "bad.jsonl"), BackendError);
  CHECK_THROWS_AS(ScriptedAgent::load(dir / "missing.jsonl"), BackendError);
}

TEST_CASE("request validation") {
  ScriptedAgent agent({});
  CHECK(kind_of(agent, request_for("")) == BackendErrorKind::Config);
  auto r = request_for("x");
  r.timeout_s = 0;
  CHECK(kind_of(agent, r) == BackendErrorKind::Config);
}

TEST_CASE("stochastic planner degenerate cases") {
  const std::vector<AnswerLetter> abc = {AnswerLetter::A, AnswerLetter::B, AnswerLetter::C};
  const auto sure = chain_profile(1.0, 0, 0, 0, 0);
  const auto never = chain_profile(0.0, 0, 0, 0, 0);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    CHECK(stochastic_step(sure, StageRole::Planner, AnswerLetter::C, abc, std::nullopt, rng) == AnswerLetter::C);
    const auto wrong = stochastic_step(never, StageRole::Planner, AnswerLetter::A, abc, std::nullopt, rng);
    CHECK(wrong != AnswerLetter::A);
    CHECK((wrong == AnswerLetter::B || wrong == AnswerLetter::C));
  }
}

TEST_CASE("stochastic executor and critic degenerate cases") {
  const std::vector<AnswerLetter> abcd = {AnswerLetter::A, AnswerLetter::B, AnswerLetter::C, AnswerLetter::D};
  const auto noop = chain_profile(1.0, 0, 0, 0, 0);
  const auto fixer = chain_profile(1.0, 1, 0, 1, 0);
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    CHECK(stochastic_step(noop, StageRole::Executor, AnswerLetter::B, abcd, AnswerLetter::B, rng) == AnswerLetter::B);
    CHECK(stochastic_step(noop, StageRole::Critic, AnswerLetter::B, abcd, AnswerLetter::D, rng) == AnswerLetter::D);
    CHECK(stochastic_step(fixer, StageRole::Critic, AnswerLetter::B, abcd, AnswerLetter::D, rng) == AnswerLetter::B);
    const auto from_undefined = stochastic_step_traced(noop, StageRole::Critic, AnswerLetter::B, abcd, std::nullopt, rng);
    CHECK(from_undefined.answer != AnswerLetter::B);
    CHECK(from_undefined.event == StepEvent::NoOp);
  }
}

TEST_CASE("executor harm frequency within 3 sigma at seed 42") {
  const std::vector<AnswerLetter> abcd = {AnswerLetter::A, AnswerLetter::B, AnswerLetter::C, AnswerLetter::D};
  const auto profile = chain_profile(1.0, 0.0, 0.25, 0, 0);
  Rng rng(42);
  const int n = 10000;
  int harmed = 0;
  for (int i = 0; i < n; ++i) {
    const auto out = stochastic_step_traced(profile, StageRole::Executor, AnswerLetter::A, abcd, AnswerLetter::A, rng);
    CHECK((out.event == StepEvent::Harm) == (out.answer != AnswerLetter::A));
    if (out.answer != AnswerLetter::A) ++harmed;
  }
  const double sigma = std::sqrt(0.25 * 0.75 / n);
  CHECK(std::fabs(static_cast<double>(harmed) / n - 0.25) <= 3 * sigma);
}

TEST_CASE("wrong letters are drawn uniformly") {
  const std::vector<AnswerLetter> abcd = {AnswerLetter::A, AnswerLetter::B, AnswerLetter::C, AnswerLetter::D};
  const auto never = chain_profile(0.0, 0, 0, 0, 0);
  Rng rng(8);
  std::array<int, 4> counts{};
  const int n = 30000;
  for (int i = 0; i < n; ++i) {
    ++counts[static_cast<std::size_t>(
        stochastic_step(never, StageRole::Planner, AnswerLetter::A, abcd, std::nullopt, rng))];
  }
  CHECK(counts[0] == 0);
  const double p = 1.0 / 3.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (std::size_t k = 1; k < 4; ++k) CHECK(std::fabs(counts[k] - n * p) <= 4 * sigma);
}

TEST_CASE("rng streams are reproducible and keyed") {
  auto a = Rng::for_task(42, "q1", StageRole::Executor, 3);
  auto b = Rng::for_task(42, "q1", StageRole::Executor, 3);
  auto c = Rng::for_task(42, "q1", StageRole::Critic, 3);
  auto d = Rng::for_task(43, "q1", StageRole::Executor, 3);
  bool differs_c = false;
  bool differs_d = false;
  for (int i = 0; i < 32; ++i) {
    const double x = a.uniform();
    CHECK(x == b.uniform());
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    differs_c |= x != c.uniform();
    differs_d |= x != d.uniform();
  }
  CHECK(differs_c);
  CHECK(differs_d);
  Rng r(5);
  for (int i = 0; i < 1000; ++i) CHECK(r.below(3) < 3);
}

TEST_CASE("stochastic agent is reproducible and reports profile usage") {
  const auto profile = chain_profile(0.5, 0.5, 0.5, 0.5, 0.5, 77);
  StochasticAgent one(profile, 42);
  StochasticAgent two(profile, 42);
  const Dataset ds = make_dataset(200);
  for (const auto& item : ds.items()) {
    auto req = request_for("prompt for " + item.id);
    req.context = TaskContext{item.id, item.gold, item.letters(), std::nullopt};
    const auto x = one.invoke(req);
    const auto y = two.invoke(req);
    CHECK(x.raw_text == y.raw_text);
    CHECK(parse_answer_letter(x.raw_text).has_value());
    REQUIRE(x.usage);
    CHECK(*x.usage == TokenUsage{300, 20});
    CHECK(x.latency_s == doctest::Approx(0.5));
  }
  CHECK(kind_of(one, request_for("no context")) == BackendErrorKind::Config);
}

TEST_CASE("profile validation") {
  auto p = chain_profile(0.5, 0, 0, 0, 0);
  CHECK_NOTHROW(p.validate());
  p.role(StageRole::Executor).harm_prob = 1.5;
  CHECK_THROWS(p.validate());
  p = chain_profile(0.5, 0, 0, 0, 0);
  p.role(StageRole::Critic).mean_prompt_tokens = -1;
  CHECK_THROWS(p.validate());
  CHECK_THROWS(StochasticAgent(p, 1));
}

TEST_CASE("http backend maps a normal reply") {
  FakeProvider provider;
  json seen;
  provider.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    res.set_content(kOkReply, "application/json");
  });
  HttpAgent agent(config_for(provider));
  auto req = request_for("hello");
  req.sampling = {{"temperature", 0.2}};
  const auto r = agent.invoke(req);
  CHECK(r.raw_text == "Answer: B");
  REQUIRE(r.usage);
  CHECK(*r.usage == TokenUsage{12, 3});
  CHECK(r.latency_s >= 0.0);
  CHECK(seen["messages"][0]["content"] == "hello");
  CHECK(seen["temperature"] == 0.2);
  CHECK(seen["model"] == "m");
}

TEST_CASE("http backend never fabricates usage") {
  FakeProvider provider;
  provider.server().Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[{"message":{"content":"C"}}]})", "application/json");
  });
  HttpAgent agent(config_for(provider));
  const auto r = agent.invoke(request_for("hello"));
  CHECK(r.raw_text == "C");
  CHECK_FALSE(r.usage);
}

TEST_CASE("http backend retries transient failures with capped backoff") {
  FakeProvider provider;
  int calls = 0;
  provider.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    if (calls <= 2) {
      res.status = calls == 1 ? 429 : 503;
      return;
    }
    res.set_content(kOkReply, "application/json");
  });
  std::vector<double> sleeps;
  HttpAgent agent(config_for(provider), [&](double s) { sleeps.push_back(s); });
  CHECK(agent.invoke(request_for("hi")).raw_text == "Answer: B");
  CHECK(calls == 3);
  CHECK(sleeps == std::vector<double>{0.5, 1.0});
}

TEST_CASE("http backend gives up after the retry budget") {
  FakeProvider provider;
  int calls = 0;
  provider.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 500;
  });
  std::vector<double> sleeps;
  HttpAgent agent(config_for(provider), [&](double s) { sleeps.push_back(s); });
  CHECK(kind_of(agent, request_for("hi")) == BackendErrorKind::RetryExhausted);
  CHECK(calls == 4);
  CHECK(sleeps == std::vector<double>{0.5, 1.0, 1.0});
}

TEST_CASE("http backend auth, protocol and timeout errors") {
  FakeProvider provider;
  provider.server().Post("/auth", [](const httplib::Request& req, httplib::Response& res) {
    res.status = req.get_header_value("Authorization") == "Bearer sekrit" ? 200 : 401;
    if (res.status == 200) res.set_content(kOkReply, "application/json");
  });
  provider.server().Post("/bad", [](const httplib::Request&, httplib::Response& res) { res.status = 400; });
  provider.server().Post("/slow", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1500));
    res.set_content(kOkReply, "application/json");
  });

  auto cfg = config_for(provider);
  cfg.path = "/auth";
  cfg.api_key_env = "TRACEPIPE_TEST_KEY";
  ::unsetenv("TRACEPIPE_TEST_KEY");
  {
    HttpAgent agent(cfg);
    CHECK(kind_of(agent, request_for("x")) == BackendErrorKind::Auth);
  }
  ::setenv("TRACEPIPE_TEST_KEY", "wrong", 1);
  {
    HttpAgent agent(cfg);
    CHECK(kind_of(agent, request_for("x")) == BackendErrorKind::Auth);
  }
  ::setenv("TRACEPIPE_TEST_KEY", "sekrit", 1);
  {
    HttpAgent agent(cfg);
    CHECK(agent.invoke(request_for("x")).raw_text == "Answer: B");
  }

  cfg = config_for(provider);
  cfg.path = "/bad";
  {
    HttpAgent agent(cfg);
    CHECK(kind_of(agent, request_for("x")) == BackendErrorKind::Protocol);
  }

  cfg.path = "/slow";
  {
    HttpAgent agent(cfg, [](double) {});
    auto req = request_for("x");
    req.timeout_s = 0.3;
    CHECK(kind_of(agent, req) == BackendErrorKind::Timeout);
  }
}

TEST_CASE("config file parsing and registry") {
  TempDir dir("config");
  const std::string h = sha256_hex("p");
  spit(dir / "fx.jsonl", json{{"prompt_sha256", h}, {"response_text", "Answer: A"}, {"prompt_tokens", 1},
                              {"completion_tokens", 1}}.dump() + "\n");
  const json cfg = {
      {"schema_version", 1},
      {"models",
       json::array({{{"key", "A"}, {"display_name", "GPT-4o"}, {"backend", "script"}},
                    {{"key", "S"}, {"display_name", "Sim"}, {"backend", "sim"}}})},
      {"backends",
       {{"script", {{"type", "scripted"}, {"fixtures", "fx.jsonl"}}},
        {"sim", {{"type", "stochastic"}, {"seed", 3}, {"planner", {{"base_correct", 1.0}}}}}}}};
  spit(dir / "cfg.json", cfg.dump());
  const auto config = ExperimentConfig::load(dir / "cfg.json");
  CHECK(config.models.size() == 2);
  CHECK(config.model("A").display_name == "GPT-4o");
  CHECK_THROWS(config.model("Z"));

  const BackendRegistry registry(config);
  auto scripted = registry.agent(config.model("A"));
  CHECK(scripted->invoke(request_for("p")).raw_text == "Answer: A");
  auto sim = registry.agent(config.model("S"));
  auto req = request_for("q");
  req.context = TaskContext{"t", AnswerLetter::C, {AnswerLetter::A, AnswerLetter::B, AnswerLetter::C}, std::nullopt};
  CHECK(sim->invoke(req).raw_text == "Answer: C");

  json bad = cfg;
  bad["schema_version"] = 2;
  CHECK_THROWS(ExperimentConfig::from_json(bad, dir.path()));
  bad = cfg;
  bad["backends"]["script"]["type"] = "carrier-pigeon";
  CHECK_THROWS(ExperimentConfig::from_json(bad, dir.path()));
  bad = cfg;
  bad["models"][1]["backend"] = "nowhere";
  CHECK_THROWS(ExperimentConfig::from_json(bad, dir.path()));
  bad = cfg;
  bad["models"][1]["key"] = "A";
  CHECK_THROWS(ExperimentConfig::from_json(bad, dir.path()));
}
