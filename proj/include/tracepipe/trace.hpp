#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tracepipe/core.hpp"
#include "tracepipe/money.hpp"

namespace tracepipe {

inline constexpr int kTraceSchemaVersion = 1;

struct StageTrace {
  std::string model;  // model key
  std::string prompt_sha256;
  std::string raw_output;
  Answer answer;
  // Absent when the provider did not report usage; cost is then absent too.
  std::optional<TokenUsage> usage;
  double latency_s = 0.0;
  std::optional<Money> cost;
  int attempts = 0;
  std::optional<std::string> error;

  friend bool operator==(const StageTrace&, const StageTrace&) = default;
};

// One line of traces.jsonl: everything needed to audit a single item of a run.
struct TraceRecord {
  std::string task_id;
  std::string label;
  Regime regime = Regime::Simple;
  AnswerLetter gold = AnswerLetter::A;
  // Indexed by position(StageRole). Baseline runs fill only the planner slot.
  std::array<std::optional<StageTrace>, 3> stages;
  Answer final_answer;
  BlameFlags flags;
  ErrorOrigin origin = ErrorOrigin::None;
  std::string started_at;
  std::string finished_at;

  const std::optional<StageTrace>& stage(StageRole role) const { return stages[position(role)]; }
  Answer stage_answer(StageRole role) const;
  bool correct() const { return final_answer == gold; }
  bool has_item_error() const;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

class TraceError : public Error {
 public:
  TraceError(std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

nlohmann::json to_json(const TraceRecord& record);
// Throws TraceError(0, ...) on schema violations.
TraceRecord trace_from_json(const nlohmann::json& j);

// Compact single-line JSON, no trailing newline.
std::string to_jsonl_line(const TraceRecord& record);

// Reads every record; a line that fails to parse raises TraceError naming it.
std::vector<TraceRecord> read_traces(const std::filesystem::path& path);

}  // namespace tracepipe
