#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tracepipe/backends.hpp"
#include "tracepipe/core.hpp"
#include "tracepipe/runner.hpp"

namespace tracepipe {

// Stage parameters of the two-state (correct / wrong) chain.
struct ChainParams {
  double planner_correct = 1.0;
  double executor_repair = 0.0;
  double executor_harm = 0.0;
  double critic_repair = 0.0;
  double critic_harm = 0.0;

  // Throws Error unless every value is in [0, 1].
  void validate() const;
};

// Closed-form expectations of the chain. Raw rates are per occupied case,
// i.e. the repair/harm probability weighted by how often it is eligible.
struct ChainPrediction {
  double planner_correct = 0.0;
  double after_executor = 0.0;
  double final_correct = 0.0;
  double executor_repair_raw = 0.0;
  double executor_harm_raw = 0.0;
  double critic_repair_raw = 0.0;
  double critic_harm_raw = 0.0;
};

ChainPrediction predict(const ChainParams& params);

// Probability that the published answer is gold.
double predict_accuracy(double planner_correct, double executor_repair, double executor_harm,
                        double critic_repair, double critic_harm);

// Chain parameters implied by the profiles bound to each role.
ChainParams chain_params(const std::array<StochasticAgentProfile, 3>& profiles);

// `n` four-choice items with gold drawn uniformly from A-D.
Dataset synthetic_dataset(std::size_t n, std::uint64_t seed);

struct CalibrationCheck {
  std::string name;
  double measured = 0.0;
  double expected = 0.0;
  std::int64_t n = 0;  // binomial trials behind `measured`
  double sigma = 0.0;
  // (measured - expected) / sigma; 0 when both agree exactly, infinite when
  // sigma is 0 and they disagree.
  double z = 0.0;
  bool defined = true;  // false when no case was eligible

  bool within(double k) const;
};

struct CalibrationReport {
  std::size_t n_items = 0;
  std::uint64_t seed = 0;
  std::string label;
  ChainParams params;
  std::vector<CalibrationCheck> checks;

  bool all_within(double k) const;
  nlohmann::json to_json() const;
  std::string summary() const;
};

// Builds the report from finished traces.
CalibrationReport evaluate_calibration(const std::vector<TraceRecord>& traces, const ChainParams& params);

// Runs an accountable pipeline of stochastic agents over a synthetic dataset
// in `out_dir` and compares the measured rates with the chain's predictions.
CalibrationReport calibrate(const std::array<StochasticAgentProfile, 3>& profiles,
                            const std::array<ModelId, 3>& models, std::size_t n_items,
                            std::uint64_t seed, const std::filesystem::path& out_dir,
                            RunOptions options);

}  // namespace tracepipe
