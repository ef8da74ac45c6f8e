#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tracepipe/backends.hpp"
#include "tracepipe/core.hpp"
#include "tracepipe/hash.hpp"

namespace testing {

using namespace tracepipe;
namespace fs = std::filesystem;

inline TaskItem make_item(std::string id, AnswerLetter gold, std::size_t n_choices = 4,
                          std::string question = "") {
  TaskItem item;
  item.id = std::move(id);
  item.question = question.empty() ? "What is item " + item.id + "?" : std::move(question);
  for (std::size_t k = 0; k < n_choices; ++k) {
    item.choices.emplace(kAllLetters[k], "choice " + std::string(1, static_cast<char>('a' + k)));
  }
  item.gold = gold;
  return item;
}

inline Dataset make_dataset(std::size_t n, std::string name = "ds", std::uint64_t seed = 7) {
  std::mt19937_64 gen(seed);
  std::vector<TaskItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    items.push_back(make_item("q" + std::to_string(i + 1), kAllLetters[gen() % 4]));
  }
  return Dataset(std::move(name), std::move(items));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("tracepipe-test-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// Wraps a policy function and records every prompt/reply pair, so a run can
// be turned into a scripted fixture file and replayed.
class RecordingAgent final : public Agent {
 public:
  using Policy = std::function<std::string(const AgentRequest&)>;
  explicit RecordingAgent(Policy policy) : policy_(std::move(policy)) {}

  AgentResponse invoke(const AgentRequest& request) override {
    AgentResponse r;
    r.raw_text = policy_(request);
    r.usage = TokenUsage{static_cast<std::int64_t>(request.prompt.size() / 4), 8};
    std::lock_guard lock(mu_);
    fixtures_.push_back({sha256_hex(request.prompt), r.raw_text, *r.usage, 0.0});
    ++calls_;
    return r;
  }

  std::vector<Fixture> fixtures() const {
    std::lock_guard lock(mu_);
    return fixtures_;
  }
  int calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  Policy policy_;
  mutable std::mutex mu_;
  std::vector<Fixture> fixtures_;
  int calls_ = 0;
};

// Counts invocations and forwards to another agent.
class CountingAgent final : public Agent {
 public:
  explicit CountingAgent(std::shared_ptr<Agent> inner) : inner_(std::move(inner)) {}
  AgentResponse invoke(const AgentRequest& request) override {
    ++calls_;
    return inner_->invoke(request);
  }
  int calls() const { return calls_.load(); }

 private:
  std::shared_ptr<Agent> inner_;
  std::atomic<int> calls_{0};
};

// Writes fixtures in the scripted backend's JSONL format, deduplicated by hash.
inline void write_fixtures(const fs::path& path, const std::vector<Fixture>& fixtures) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  std::vector<std::string> seen;
  for (const auto& f : fixtures) {
    if (std::find(seen.begin(), seen.end(), f.prompt_sha256) != seen.end()) continue;
    seen.push_back(f.prompt_sha256);
    nlohmann::json j = {{"prompt_sha256", f.prompt_sha256},
                        {"response_text", f.response_text},
                        {"prompt_tokens", f.usage.prompt_tokens},
                        {"completion_tokens", f.usage.completion_tokens}};
    out << j.dump() << '\n';
  }
}

inline ModelId model_id(const std::string& key) { return ModelId{key, "Model " + key, "be-" + key}; }

inline StochasticAgentProfile chain_profile(double q, double re, double he, double rc, double hc,
                                            std::uint64_t stream = 1) {
  StochasticAgentProfile p;
  p.stream_id = stream;
  p.role(StageRole::Planner).base_correct = q;
  p.role(StageRole::Executor).repair_prob = re;
  p.role(StageRole::Executor).harm_prob = he;
  p.role(StageRole::Critic).repair_prob = rc;
  p.role(StageRole::Critic).harm_prob = hc;
  for (auto& r : p.roles) {
    r.mean_prompt_tokens = 300;
    r.mean_completion_tokens = 20;
    r.latency_s = 0.5;
  }
  return p;
}

}  // namespace testing
