#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tracepipe {

// Base for every error raised by the library. Subsystems derive from it so
// the CLI can map failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Answer space
// ---------------------------------------------------------------------------

enum class AnswerLetter : std::uint8_t { A = 0, B, C, D, E };

inline constexpr std::array<AnswerLetter, 5> kAllLetters = {
    AnswerLetter::A, AnswerLetter::B, AnswerLetter::C, AnswerLetter::D, AnswerLetter::E};

// std::nullopt is the UNDEFINED answer state: the model output could not be
// parsed, or the stage failed. It compares unequal to every gold label.
using Answer = std::optional<AnswerLetter>;

char to_char(AnswerLetter letter);
std::string to_string(AnswerLetter letter);
// "UNDEFINED" for the empty state.
std::string to_string(const Answer& answer);

// Accepts exactly one of "A".."E" (upper case only). Used for serialized
// fields, where case-folding would hide corrupt data.
std::optional<AnswerLetter> letter_from_string(std::string_view s);

struct AnswerExtraction {
  Answer answer;
  // Byte range of the text that produced `answer`; empty when undefined.
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Extraction grammar for free-text model output:
//  * the last "Answer: <letter>" marker wins (case-insensitive, optional
//    markdown emphasis and parentheses around the letter);
//  * otherwise the whole text, trimmed of whitespace and punctuation and
//    case-folded, must be a single letter A-E.
// Never throws.
AnswerExtraction extract_answer(std::string_view text);
Answer parse_answer_letter(std::string_view text);

// Canonical rendering that parse_answer_letter maps back to `letter`.
std::string format_answer(AnswerLetter letter);

// ---------------------------------------------------------------------------
// Tasks and datasets
// ---------------------------------------------------------------------------

struct TaskItem {
  std::string id;
  std::string question;
  std::map<AnswerLetter, std::string> choices;
  AnswerLetter gold = AnswerLetter::A;

  std::vector<AnswerLetter> letters() const;

  friend bool operator==(const TaskItem&, const TaskItem&) = default;
};

// Throws Error when the item breaks an invariant: empty id, fewer than 2
// choices, keys not contiguous from A, or gold outside the choice set.
void check_task_item(const TaskItem& item);

class DatasetError : public Error {
 public:
  DatasetError(std::size_t line, const std::string& message);
  // 1-based; 0 for whole-file errors.
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class Dataset {
 public:
  // Throws DatasetError if empty or if ids repeat.
  Dataset(std::string name, std::vector<TaskItem> items);

  const std::string& name() const { return name_; }
  const std::vector<TaskItem>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::string name_;
  std::vector<TaskItem> items_;
};

// Parses the JSONL dataset format: one object per line with `id`,
// `question`, `choices` ("A".."E" -> text) and `gold`. Unknown fields are
// ignored; blank lines are skipped. Errors carry the 1-based line number.
Dataset validate_dataset(std::istream& in, std::string name);
Dataset load_dataset(const std::filesystem::path& path);

// Canonical JSONL form; validate_dataset(serialize_dataset(d)) == d.
std::string serialize_dataset(const Dataset& dataset);
// SHA-256 of the canonical form, hex encoded.
std::string dataset_hash(const Dataset& dataset);

// ---------------------------------------------------------------------------
// Pipeline shape
// ---------------------------------------------------------------------------

enum class StageRole : std::uint8_t { Planner = 0, Executor = 1, Critic = 2 };

inline constexpr std::array<StageRole, 3> kAllRoles = {StageRole::Planner, StageRole::Executor,
                                                       StageRole::Critic};

inline constexpr std::size_t position(StageRole role) { return static_cast<std::size_t>(role); }

// "Planner", "Executor", "Critic".
std::string_view to_string(StageRole role);
// "planner", "executor", "critic"; used as JSON keys.
std::string_view role_key(StageRole role);
std::optional<StageRole> role_from_string(std::string_view s);

struct ModelId {
  std::string key;
  std::string display_name;
  std::string backend_ref;

  friend bool operator==(const ModelId&, const ModelId&) = default;
};

enum class Regime : std::uint8_t { Baseline, Simple, Accountable };

std::string_view to_string(Regime regime);
std::optional<Regime> regime_from_string(std::string_view s);

class PipelineConfig {
 public:
  // Throws Error when a key is empty or the regime is Baseline.
  PipelineConfig(ModelId planner, ModelId executor, ModelId critic, Regime regime);

  const ModelId& model(StageRole role) const { return models_[position(role)]; }
  Regime regime() const { return regime_; }
  // Model keys in planner -> executor -> critic order, e.g. "CBA".
  std::string label() const;

 private:
  std::array<ModelId, 3> models_;
  Regime regime_;
};

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  std::int64_t total() const { return prompt_tokens + completion_tokens; }
  TokenUsage& operator+=(const TokenUsage& other);

  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

// Throws Error on negative counts.
TokenUsage make_usage(std::int64_t prompt_tokens, std::int64_t completion_tokens);

// ---------------------------------------------------------------------------
// Blame vocabulary
// ---------------------------------------------------------------------------

class BlameFlags {
 public:
  BlameFlags() = default;
  // Throws std::logic_error if a repair and a harm flag are both set for the
  // same stage, or executor_repair is set without planner_error.
  BlameFlags(bool planner_error, bool executor_repair, bool executor_harm, bool critic_repair,
             bool critic_harm);

  bool planner_error() const { return planner_error_; }
  bool executor_repair() const { return executor_repair_; }
  bool executor_harm() const { return executor_harm_; }
  bool critic_repair() const { return critic_repair_; }
  bool critic_harm() const { return critic_harm_; }

  bool repair(StageRole role) const;
  bool harm(StageRole role) const;

  friend bool operator==(const BlameFlags&, const BlameFlags&) = default;

 private:
  bool planner_error_ = false;
  bool executor_repair_ = false;
  bool executor_harm_ = false;
  bool critic_repair_ = false;
  bool critic_harm_ = false;
};

enum class ErrorOrigin : std::uint8_t { None, Planner, Executor, Critic };

std::string_view to_string(ErrorOrigin origin);
std::optional<ErrorOrigin> origin_from_string(std::string_view s);

}  // namespace tracepipe
