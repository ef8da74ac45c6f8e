#include "tracepipe/backends.hpp"

#include <cmath>
#include <fstream>

#include "tracepipe/hash.hpp"

namespace tracepipe {

using nlohmann::json;

std::string_view to_string(BackendErrorKind kind) {
  switch (kind) {
    case BackendErrorKind::Timeout: return "timeout";
    case BackendErrorKind::Auth: return "auth";
    case BackendErrorKind::RetryExhausted: return "retry-exhausted";
    case BackendErrorKind::FixtureMiss: return "fixture-miss";
    case BackendErrorKind::Protocol: return "protocol";
    case BackendErrorKind::Config: return "config";
  }
  return "?";
}

BackendError::BackendError(BackendErrorKind kind, const std::string& message)
    : Error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void check_request(const AgentRequest& request) {
  if (request.prompt.empty()) throw BackendError(BackendErrorKind::Config, "empty prompt");
  if (!(request.timeout_s > 0)) throw BackendError(BackendErrorKind::Config, "timeout must be > 0");
}

// ---------------------------------------------------------------------------
// Scripted
// ---------------------------------------------------------------------------

ScriptedAgent::ScriptedAgent(std::vector<Fixture> fixtures) {
  for (auto& f : fixtures) {
    const std::string key = f.prompt_sha256;
    if (!fixtures_.emplace(key, std::move(f)).second) {
      throw BackendError(BackendErrorKind::Config, "duplicate fixture for prompt " + key);
    }
  }
}

std::shared_ptr<ScriptedAgent> ScriptedAgent::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BackendError(BackendErrorKind::Config, "cannot open fixtures '" + path.string() + "'");
  std::vector<Fixture> fixtures;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Fixture f;
      f.prompt_sha256 = j.at("prompt_sha256").get<std::string>();
      f.response_text = j.at("response_text").get<std::string>();
      f.usage = make_usage(j.at("prompt_tokens").get<std::int64_t>(),
                           j.at("completion_tokens").get<std::int64_t>());
      f.latency_s = j.value("latency_s", 0.0);
      fixtures.push_back(std::move(f));
    } catch (const std::exception& e) {
      throw BackendError(BackendErrorKind::Config, path.string() + " line " +
                                                       std::to_string(line_no) + ": " + e.what());
    }
  }
  return std::make_shared<ScriptedAgent>(std::move(fixtures));
}

AgentResponse ScriptedAgent::invoke(const AgentRequest& request) {
  check_request(request);
  const std::string key = sha256_hex(request.prompt);
  auto it = fixtures_.find(key);
  if (it == fixtures_.end()) {
    throw BackendError(BackendErrorKind::FixtureMiss,
                       "no fixture for prompt " + key + " (" + std::string(to_string(request.role)) +
                           ", model " + request.model.key + ")");
  }
  return AgentResponse{it->second.response_text, it->second.usage, it->second.latency_s};
}

// ---------------------------------------------------------------------------
// Stochastic
// ---------------------------------------------------------------------------

Rng Rng::for_task(std::uint64_t master_seed, std::string_view task_id, StageRole role,
                  std::uint64_t stream_id) {
  const std::uint64_t task = fnv1a64(task_id);
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                    static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(task),
                    static_cast<std::uint32_t>(task >> 32),
                    static_cast<std::uint32_t>(position(role)),
                    static_cast<std::uint32_t>(stream_id),
                    static_cast<std::uint32_t>(stream_id >> 32)};
  Rng rng(0);
  rng.engine_.seed(seq);
  return rng;
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t x = engine_();
    if (x >= threshold) return x % n;
  }
}

void StochasticAgentProfile::validate() const {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(std::string("profile ") + what + " must be in [0, 1]");
  };
  auto non_negative = [](double v, const char* what) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(std::string("profile ") + what + " must be >= 0");
  };
  for (const auto& r : roles) {
    prob(r.base_correct, "base_correct");
    prob(r.repair_prob, "repair_prob");
    prob(r.harm_prob, "harm_prob");
    non_negative(r.mean_prompt_tokens, "prompt_tokens");
    non_negative(r.mean_completion_tokens, "completion_tokens");
    non_negative(r.latency_s, "latency_s");
  }
}

namespace {

AnswerLetter draw_wrong(AnswerLetter gold, const std::vector<AnswerLetter>& letters, Rng& rng) {
  std::vector<AnswerLetter> wrong;
  wrong.reserve(letters.size());
  for (AnswerLetter l : letters) {
    if (l != gold) wrong.push_back(l);
  }
  if (wrong.empty()) throw Error("stochastic step: no wrong letter available");
  return wrong[rng.below(wrong.size())];
}

}  // namespace

StepOutcome stochastic_step_traced(const StochasticAgentProfile& profile, StageRole role,
                                   AnswerLetter gold, const std::vector<AnswerLetter>& letters,
                                   const Answer& upstream, Rng& rng) {
  const RoleProfile& p = profile.role(role);
  if (role == StageRole::Planner) {
    if (rng.bernoulli(p.base_correct)) return {gold, StepEvent::Correct};
    return {draw_wrong(gold, letters, rng), StepEvent::Wrong};
  }
  if (upstream == gold) {
    if (rng.bernoulli(1.0 - p.harm_prob)) return {gold, StepEvent::Kept};
    return {draw_wrong(gold, letters, rng), StepEvent::Harm};
  }
  if (rng.bernoulli(p.repair_prob)) return {gold, StepEvent::Repair};
  if (upstream) return {*upstream, StepEvent::NoOp};
  return {draw_wrong(gold, letters, rng), StepEvent::NoOp};
}

AnswerLetter stochastic_step(const StochasticAgentProfile& profile, StageRole role,
                             AnswerLetter gold, const std::vector<AnswerLetter>& letters,
                             const Answer& upstream, Rng& rng) {
  return stochastic_step_traced(profile, role, gold, letters, upstream, rng).answer;
}

StochasticAgent::StochasticAgent(StochasticAgentProfile profile, std::uint64_t master_seed)
    : profile_(std::move(profile)), master_seed_(master_seed) {
  profile_.validate();
}

AgentResponse StochasticAgent::invoke(const AgentRequest& request) {
  check_request(request);
  if (!request.context) {
    throw BackendError(BackendErrorKind::Config, "stochastic backend needs a task context");
  }
  const TaskContext& ctx = *request.context;
  Rng rng = Rng::for_task(master_seed_, ctx.task_id, request.role, profile_.stream_id);
  const AnswerLetter letter =
      stochastic_step(profile_, request.role, ctx.gold, ctx.letters, ctx.upstream, rng);
  const RoleProfile& p = profile_.role(request.role);
  return AgentResponse{format_answer(letter),
                       make_usage(std::llround(p.mean_prompt_tokens),
                                  std::llround(p.mean_completion_tokens)),
                       p.latency_s};
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

StochasticAgentProfile profile_from_json(const json& j, std::uint64_t stream_id) {
  StochasticAgentProfile profile;
  profile.stream_id = stream_id;
  for (StageRole role : kAllRoles) {
    auto it = j.find(std::string(role_key(role)));
    if (it == j.end()) continue;
    if (!it->is_object()) throw Error("profile '" + std::string(role_key(role)) + "' must be an object");
    RoleProfile& r = profile.role(role);
    r.base_correct = it->value("base_correct", r.base_correct);
    r.repair_prob = it->value("repair_prob", r.repair_prob);
    r.harm_prob = it->value("harm_prob", r.harm_prob);
    r.mean_prompt_tokens = it->value("prompt_tokens", r.mean_prompt_tokens);
    r.mean_completion_tokens = it->value("completion_tokens", r.mean_completion_tokens);
    r.latency_s = it->value("latency_s", r.latency_s);
  }
  profile.validate();
  return profile;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, std::filesystem::path base_dir) {
  if (!j.is_object()) throw Error("config must be a JSON object");
  const int version = j.value("schema_version", 0);
  if (version != kConfigSchemaVersion) {
    throw Error("config: unsupported schema_version " + std::to_string(version) + " (expected " +
                std::to_string(kConfigSchemaVersion) + ")");
  }
  ExperimentConfig cfg;
  cfg.base_dir = std::move(base_dir);
  try {
    for (const auto& [name, b] : j.at("backends").items()) {
      BackendSpec spec{name, b.at("type").get<std::string>(), b};
      if (spec.type != "http" && spec.type != "scripted" && spec.type != "stochastic") {
        throw Error("config: backend '" + name + "' has unknown type '" + spec.type + "'");
      }
      cfg.backends.emplace(name, std::move(spec));
    }
    for (const auto& m : j.at("models")) {
      ModelId id{m.at("key").get<std::string>(), m.value("display_name", std::string()),
                 m.at("backend").get<std::string>()};
      if (id.key.empty()) throw Error("config: model key is empty");
      if (id.display_name.empty()) id.display_name = id.key;
      for (const auto& other : cfg.models) {
        if (other.key == id.key) throw Error("config: duplicate model key '" + id.key + "'");
      }
      if (!cfg.backends.contains(id.backend_ref)) {
        throw Error("config: model '" + id.key + "' refers to unknown backend '" + id.backend_ref + "'");
      }
      cfg.models.push_back(std::move(id));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  if (auto p = j.find("prices"); p != j.end()) cfg.prices = *p;
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("config '" + path.string() + "': " + e.what());
  }
  return from_json(j, path.parent_path());
}

const ModelId& ExperimentConfig::model(std::string_view key) const {
  for (const auto& m : models) {
    if (m.key == key) return m;
  }
  throw Error("config: unknown model key '" + std::string(key) + "'");
}

BackendRegistry::BackendRegistry(const ExperimentConfig& config,
                                 std::optional<std::uint64_t> seed_override) {
  for (const auto& [name, spec] : config.backends) {
    try {
      if (spec.type == "scripted") {
        std::filesystem::path fixtures = spec.params.at("fixtures").get<std::string>();
        if (fixtures.is_relative()) fixtures = config.base_dir / fixtures;
        agents_[name] = ScriptedAgent::load(fixtures);
      } else if (spec.type == "stochastic") {
        const std::uint64_t seed = seed_override.value_or(spec.params.value("seed", std::uint64_t{0}));
        agents_[name] = std::make_shared<StochasticAgent>(profile_from_json(spec.params, fnv1a64(name)), seed);
      } else {
        agents_[name] = std::make_shared<HttpAgent>(HttpBackendConfig::from_json(spec.params));
      }
    } catch (const json::exception& e) {
      throw Error("backend '" + name + "': " + e.what());
    }
  }
}

std::shared_ptr<Agent> BackendRegistry::agent(const ModelId& model) const {
  auto it = agents_.find(model.backend_ref);
  if (it == agents_.end()) {
    throw Error("no backend '" + model.backend_ref + "' for model '" + model.key + "'");
  }
  return it->second;
}

void BackendRegistry::put(const std::string& backend, std::shared_ptr<Agent> agent) {
  agents_[backend] = std::move(agent);
}

}  // namespace tracepipe
