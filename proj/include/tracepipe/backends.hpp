#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "tracepipe/core.hpp"

namespace tracepipe {

// Ground truth the runner attaches to each request. Only simulation
// backends look at it; live and scripted backends see the prompt alone.
struct TaskContext {
  std::string task_id;
  AnswerLetter gold = AnswerLetter::A;
  std::vector<AnswerLetter> letters;
  // Answer of the immediately preceding stage; unused for the planner.
  Answer upstream;
};

struct AgentRequest {
  std::string prompt;
  StageRole role = StageRole::Planner;
  ModelId model;
  // Passed through verbatim to providers that accept sampling controls.
  nlohmann::json sampling = nlohmann::json::object();
  double timeout_s = 60.0;
  std::optional<TaskContext> context;
  int attempt = 0;  // 0 for the first ask, 1 for a format re-ask
};

struct AgentResponse {
  std::string raw_text;
  std::optional<TokenUsage> usage;
  double latency_s = 0.0;
};

enum class BackendErrorKind { Timeout, Auth, RetryExhausted, FixtureMiss, Protocol, Config };

std::string_view to_string(BackendErrorKind kind);

class BackendError : public Error {
 public:
  BackendError(BackendErrorKind kind, const std::string& message);
  BackendErrorKind kind() const { return kind_; }

 private:
  BackendErrorKind kind_;
};

// Uniform contract for every backend. Implementations must tolerate
// concurrent invoke() calls.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual AgentResponse invoke(const AgentRequest& request) = 0;
};

// Throws BackendError(Config) if the prompt is empty or the timeout is not
// positive.
void check_request(const AgentRequest& request);

// ---------------------------------------------------------------------------
// Scripted backend: replays canned replies keyed by SHA-256 of the prompt.
// ---------------------------------------------------------------------------

struct Fixture {
  std::string prompt_sha256;
  std::string response_text;
  TokenUsage usage;
  double latency_s = 0.0;
};

class ScriptedAgent final : public Agent {
 public:
  explicit ScriptedAgent(std::vector<Fixture> fixtures);
  // JSONL of {prompt_sha256, response_text, prompt_tokens, completion_tokens}
  // with an optional latency_s.
  static std::shared_ptr<ScriptedAgent> load(const std::filesystem::path& path);

  // Throws BackendError(FixtureMiss) for prompts outside the fixture set.
  AgentResponse invoke(const AgentRequest& request) override;
  std::size_t size() const { return fixtures_.size(); }

 private:
  std::unordered_map<std::string, Fixture> fixtures_;
};

// ---------------------------------------------------------------------------
// Stochastic backend
// ---------------------------------------------------------------------------

// Deterministic random source. The engine and the transforms below are fully
// specified, so a seed reproduces the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  // Stream for one (task, role) pair so results do not depend on scheduling.
  static Rng for_task(std::uint64_t master_seed, std::string_view task_id, StageRole role,
                      std::uint64_t stream_id);

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

struct RoleProfile {
  double base_correct = 1.0;  // planner only
  double repair_prob = 0.0;   // executor and critic
  double harm_prob = 0.0;     // executor and critic
  double mean_prompt_tokens = 0.0;
  double mean_completion_tokens = 0.0;
  double latency_s = 0.0;
};

struct StochasticAgentProfile {
  std::array<RoleProfile, 3> roles;  // by position(StageRole)
  std::uint64_t stream_id = 0;

  const RoleProfile& role(StageRole r) const { return roles[position(r)]; }
  RoleProfile& role(StageRole r) { return roles[position(r)]; }
  // Throws Error unless every probability is in [0, 1] and token means and
  // latency are non-negative and finite.
  void validate() const;
};

// Which generative branch a step took.
enum class StepEvent : std::uint8_t {
  Correct,  // planner drew gold
  Wrong,    // planner drew a wrong letter
  Kept,     // upstream right, stayed right
  Harm,     // upstream right, replaced with a wrong letter
  Repair,   // upstream wrong, replaced with gold
  NoOp,     // upstream wrong, kept
};

struct StepOutcome {
  AnswerLetter answer;
  StepEvent event;
};

// Planner: gold with probability base_correct, else a uniformly drawn wrong
// letter from `letters`. Executor and critic: a correct upstream answer
// survives with probability 1 - harm_prob (else a uniform wrong letter); a
// wrong one becomes gold with probability repair_prob, else it is retained.
// An undefined upstream counts as wrong; since it cannot be retained, the
// no-op branch draws a wrong letter instead.
StepOutcome stochastic_step_traced(const StochasticAgentProfile& profile, StageRole role,
                                   AnswerLetter gold, const std::vector<AnswerLetter>& letters,
                                   const Answer& upstream, Rng& rng);

AnswerLetter stochastic_step(const StochasticAgentProfile& profile, StageRole role,
                             AnswerLetter gold, const std::vector<AnswerLetter>& letters,
                             const Answer& upstream, Rng& rng);

class StochasticAgent final : public Agent {
 public:
  StochasticAgent(StochasticAgentProfile profile, std::uint64_t master_seed);

  // Requires request.context; replies "Answer: <letter>" with usage taken
  // from the role's token means and latency from the profile.
  AgentResponse invoke(const AgentRequest& request) override;
  const StochasticAgentProfile& profile() const { return profile_; }

 private:
  StochasticAgentProfile profile_;
  std::uint64_t master_seed_;
};

// ---------------------------------------------------------------------------
// HTTP chat-completion backend
// ---------------------------------------------------------------------------

// Adapter description for one provider. Request bodies are built from
// `request_template` by replacing every string equal to "{prompt}" and
// merging the request's sampling map at top level; replies are read through
// JSON pointers.
struct HttpBackendConfig {
  std::string base_url;
  std::string path = "/v1/chat/completions";
  std::string api_key_env;
  std::string auth_header = "Authorization";
  std::string auth_prefix = "Bearer ";
  std::map<std::string, std::string> headers;
  nlohmann::json request_template = nlohmann::json::object();
  std::string text_pointer = "/choices/0/message/content";
  std::string prompt_tokens_pointer = "/usage/prompt_tokens";
  std::string completion_tokens_pointer = "/usage/completion_tokens";
  int max_retries = 3;
  double backoff_initial_s = 1.0;
  double backoff_max_s = 30.0;

  static HttpBackendConfig from_json(const nlohmann::json& j);
};

class HttpAgent final : public Agent {
 public:
  using Sleeper = std::function<void(double seconds)>;

  explicit HttpAgent(HttpBackendConfig config, Sleeper sleeper = {});

  // Retries 429, 5xx and refused connections with exponential backoff;
  // 401/403 raise Auth, read timeouts raise Timeout. Usage is absent when
  // the provider omits it.
  AgentResponse invoke(const AgentRequest& request) override;

  nlohmann::json build_body(const AgentRequest& request) const;

 private:
  HttpBackendConfig config_;
  Sleeper sleeper_;
};

// ---------------------------------------------------------------------------
// Backend config file
// ---------------------------------------------------------------------------

inline constexpr int kConfigSchemaVersion = 1;

struct BackendSpec {
  std::string name;
  std::string type;  // "http" | "scripted" | "stochastic"
  nlohmann::json params;
};

StochasticAgentProfile profile_from_json(const nlohmann::json& j, std::uint64_t stream_id);

// Parsed experiment config: models, the backends they are bound to and an
// optional price sheet.
struct ExperimentConfig {
  std::vector<ModelId> models;
  std::map<std::string, BackendSpec> backends;
  std::optional<nlohmann::json> prices;
  std::filesystem::path base_dir;

  static ExperimentConfig from_json(const nlohmann::json& j, std::filesystem::path base_dir);
  static ExperimentConfig load(const std::filesystem::path& path);

  // Throws Error for unknown keys.
  const ModelId& model(std::string_view key) const;
};

// Instantiates and caches one Agent per backend.
class BackendRegistry {
 public:
  BackendRegistry() = default;
  // `seed_override` replaces the seed of every stochastic backend.
  explicit BackendRegistry(const ExperimentConfig& config,
                           std::optional<std::uint64_t> seed_override = std::nullopt);

  std::shared_ptr<Agent> agent(const ModelId& model) const;
  // Registers or replaces a backend by name; used by tests and the simulator.
  void put(const std::string& backend, std::shared_ptr<Agent> agent);

 private:
  std::map<std::string, std::shared_ptr<Agent>, std::less<>> agents_;
};

}  // namespace tracepipe
