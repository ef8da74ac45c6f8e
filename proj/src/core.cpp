#include "tracepipe/core.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "tracepipe/hash.hpp"

namespace tracepipe {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Answer space
// ---------------------------------------------------------------------------

char to_char(AnswerLetter letter) { return static_cast<char>('A' + static_cast<int>(letter)); }

std::string to_string(AnswerLetter letter) { return std::string(1, to_char(letter)); }

std::string to_string(const Answer& answer) {
  return answer ? to_string(*answer) : std::string("UNDEFINED");
}

std::optional<AnswerLetter> letter_from_string(std::string_view s) {
  if (s.size() != 1 || s[0] < 'A' || s[0] > 'E') return std::nullopt;
  return static_cast<AnswerLetter>(s[0] - 'A');
}

namespace {

std::optional<AnswerLetter> folded_letter(char c) {
  const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u < 'A' || u > 'E') return std::nullopt;
  return static_cast<AnswerLetter>(u - 'A');
}

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_emphasis(char c) { return c == '*' || c == '_' || is_space(c); }

// Tries to match `answer <emph> : <emph> [(] letter [)]` at `pos`, where pos
// points at the first character of "answer".
std::optional<AnswerExtraction> match_marker(std::string_view text, std::size_t pos) {
  static constexpr std::string_view kWord = "answer";
  if (pos + kWord.size() > text.size()) return std::nullopt;
  for (std::size_t k = 0; k < kWord.size(); ++k) {
    if (std::tolower(static_cast<unsigned char>(text[pos + k])) != kWord[k]) return std::nullopt;
  }
  if (pos > 0 && is_alnum(text[pos - 1])) return std::nullopt;

  std::size_t i = pos + kWord.size();
  while (i < text.size() && is_emphasis(text[i])) ++i;
  if (i >= text.size() || text[i] != ':') return std::nullopt;
  ++i;
  while (i < text.size() && is_emphasis(text[i])) ++i;
  const bool paren = i < text.size() && text[i] == '(';
  if (paren) ++i;
  if (i >= text.size()) return std::nullopt;
  const auto letter = folded_letter(text[i]);
  if (!letter) return std::nullopt;
  ++i;
  if (paren) {
    if (i >= text.size() || text[i] != ')') return std::nullopt;
    ++i;
  }
  if (i < text.size() && is_alnum(text[i])) return std::nullopt;
  return AnswerExtraction{letter, pos, i - pos};
}

}  // namespace

AnswerExtraction extract_answer(std::string_view text) {
  std::optional<AnswerExtraction> last;
  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    if (auto m = match_marker(text, pos)) last = m;
  }
  if (last) return *last;

  std::size_t begin = 0;
  std::size_t end = text.size();
  auto trimmable = [](char c) { return is_space(c) || std::ispunct(static_cast<unsigned char>(c)); };
  while (begin < end && trimmable(text[begin])) ++begin;
  while (end > begin && trimmable(text[end - 1])) --end;
  if (end - begin == 1) {
    if (auto letter = folded_letter(text[begin])) return AnswerExtraction{letter, begin, 1};
  }
  return AnswerExtraction{};
}

Answer parse_answer_letter(std::string_view text) { return extract_answer(text).answer; }

std::string format_answer(AnswerLetter letter) { return "Answer: " + to_string(letter); }

// ---------------------------------------------------------------------------
// Tasks and datasets
// ---------------------------------------------------------------------------

std::vector<AnswerLetter> TaskItem::letters() const {
  std::vector<AnswerLetter> out;
  out.reserve(choices.size());
  for (const auto& [letter, text] : choices) out.push_back(letter);
  return out;
}

void check_task_item(const TaskItem& item) {
  if (item.id.empty()) throw Error("task item has an empty id");
  if (item.choices.size() < 2 || item.choices.size() > 5) {
    throw Error("task item '" + item.id + "' must have 2-5 choices, has " +
                std::to_string(item.choices.size()));
  }
  std::size_t expected = 0;
  for (const auto& [letter, text] : item.choices) {
    if (static_cast<std::size_t>(letter) != expected++) {
      throw Error("task item '" + item.id + "' choice keys must be contiguous from A");
    }
  }
  if (!item.choices.contains(item.gold)) {
    throw Error("task item '" + item.id + "' gold " + to_string(item.gold) + " not in choices");
  }
}

DatasetError::DatasetError(std::size_t line, const std::string& message)
    : Error(line ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}

Dataset::Dataset(std::string name, std::vector<TaskItem> items)
    : name_(std::move(name)), items_(std::move(items)) {
  if (items_.empty()) throw DatasetError(0, "dataset '" + name_ + "' is empty");
  std::unordered_map<std::string_view, std::size_t> seen;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    check_task_item(items_[i]);
    if (!seen.emplace(items_[i].id, i).second) {
      throw DatasetError(0, "duplicate id '" + items_[i].id + "'");
    }
  }
}

namespace {

TaskItem parse_item(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DatasetError(line_no, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DatasetError(line_no, "expected a JSON object");

  auto require_string = [&](const char* field) -> std::string {
    auto it = j.find(field);
    if (it == j.end()) throw DatasetError(line_no, std::string("missing field '") + field + "'");
    if (!it->is_string()) throw DatasetError(line_no, std::string("field '") + field + "' must be a string");
    return it->get<std::string>();
  };

  TaskItem item;
  item.id = require_string("id");
  if (item.id.empty()) throw DatasetError(line_no, "field 'id' is empty");
  item.question = require_string("question");

  auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_object()) {
    throw DatasetError(line_no, "field 'choices' must be an object");
  }
  for (const auto& [key, value] : choices->items()) {
    auto letter = letter_from_string(key);
    if (!letter) throw DatasetError(line_no, "choice key '" + key + "' not in answer space A-E");
    if (!value.is_string()) throw DatasetError(line_no, "choice '" + key + "' must be a string");
    item.choices.emplace(*letter, value.get<std::string>());
  }
  if (item.choices.size() < 2) throw DatasetError(line_no, "need at least 2 choices");
  std::size_t expected = 0;
  for (const auto& [letter, text] : item.choices) {
    if (static_cast<std::size_t>(letter) != expected++) {
      throw DatasetError(line_no, "choice keys must be contiguous from A");
    }
  }

  const std::string gold = require_string("gold");
  auto letter = letter_from_string(gold);
  if (!letter) throw DatasetError(line_no, "gold '" + gold + "' not in answer space");
  if (!item.choices.contains(*letter)) {
    throw DatasetError(line_no, "gold '" + gold + "' not in choices");
  }
  item.gold = *letter;
  return item;
}

}  // namespace

Dataset validate_dataset(std::istream& in, std::string name) {
  std::vector<TaskItem> items;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    TaskItem item = parse_item(line, line_no);
    auto [it, inserted] = first_line.emplace(item.id, line_no);
    if (!inserted) {
      throw DatasetError(line_no, "duplicate id '" + item.id + "' (first seen on line " +
                                      std::to_string(it->second) + ")");
    }
    items.push_back(std::move(item));
  }
  if (items.empty()) throw DatasetError(0, "dataset '" + name + "' is empty");
  return Dataset(std::move(name), std::move(items));
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(0, "cannot open dataset '" + path.string() + "'");
  return validate_dataset(in, path.stem().string());
}

std::string serialize_dataset(const Dataset& dataset) {
  std::string out;
  for (const auto& item : dataset.items()) {
    json choices = json::object();
    for (const auto& [letter, text] : item.choices) choices[to_string(letter)] = text;
    json j = {{"id", item.id}, {"question", item.question}, {"choices", choices},
              {"gold", to_string(item.gold)}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string dataset_hash(const Dataset& dataset) { return sha256_hex(serialize_dataset(dataset)); }

// ---------------------------------------------------------------------------
// Pipeline shape
// ---------------------------------------------------------------------------

std::string_view to_string(StageRole role) {
  switch (role) {
    case StageRole::Planner: return "Planner";
    case StageRole::Executor: return "Executor";
    case StageRole::Critic: return "Critic";
  }
  return "?";
}

std::string_view role_key(StageRole role) {
  switch (role) {
    case StageRole::Planner: return "planner";
    case StageRole::Executor: return "executor";
    case StageRole::Critic: return "critic";
  }
  return "?";
}

std::optional<StageRole> role_from_string(std::string_view s) {
  for (StageRole role : kAllRoles) {
    if (s == to_string(role) || s == role_key(role)) return role;
  }
  return std::nullopt;
}

std::string_view to_string(Regime regime) {
  switch (regime) {
    case Regime::Baseline: return "baseline";
    case Regime::Simple: return "simple";
    case Regime::Accountable: return "accountable";
  }
  return "?";
}

std::optional<Regime> regime_from_string(std::string_view s) {
  for (Regime r : {Regime::Baseline, Regime::Simple, Regime::Accountable}) {
    if (s == to_string(r)) return r;
  }
  return std::nullopt;
}

PipelineConfig::PipelineConfig(ModelId planner, ModelId executor, ModelId critic, Regime regime)
    : models_{std::move(planner), std::move(executor), std::move(critic)}, regime_(regime) {
  if (regime_ == Regime::Baseline) throw Error("a pipeline needs the simple or accountable regime");
  for (const auto& m : models_) {
    if (m.key.empty()) throw Error("pipeline model key is empty");
  }
}

std::string PipelineConfig::label() const {
  return models_[0].key + models_[1].key + models_[2].key;
}

TokenUsage& TokenUsage::operator+=(const TokenUsage& other) {
  prompt_tokens += other.prompt_tokens;
  completion_tokens += other.completion_tokens;
  return *this;
}

TokenUsage make_usage(std::int64_t prompt_tokens, std::int64_t completion_tokens) {
  if (prompt_tokens < 0 || completion_tokens < 0) throw Error("token counts must be non-negative");
  return TokenUsage{prompt_tokens, completion_tokens};
}

// ---------------------------------------------------------------------------
// Blame vocabulary
// ---------------------------------------------------------------------------

BlameFlags::BlameFlags(bool planner_error, bool executor_repair, bool executor_harm,
                       bool critic_repair, bool critic_harm)
    : planner_error_(planner_error),
      executor_repair_(executor_repair),
      executor_harm_(executor_harm),
      critic_repair_(critic_repair),
      critic_harm_(critic_harm) {
  if (executor_repair_ && executor_harm_) throw std::logic_error("executor repair and harm both set");
  if (critic_repair_ && critic_harm_) throw std::logic_error("critic repair and harm both set");
  if (executor_repair_ && !planner_error_) {
    throw std::logic_error("executor repair without a planner error");
  }
}

bool BlameFlags::repair(StageRole role) const {
  switch (role) {
    case StageRole::Executor: return executor_repair_;
    case StageRole::Critic: return critic_repair_;
    default: return false;
  }
}

bool BlameFlags::harm(StageRole role) const {
  switch (role) {
    case StageRole::Executor: return executor_harm_;
    case StageRole::Critic: return critic_harm_;
    default: return false;
  }
}

std::string_view to_string(ErrorOrigin origin) {
  switch (origin) {
    case ErrorOrigin::None: return "NONE";
    case ErrorOrigin::Planner: return "PLANNER";
    case ErrorOrigin::Executor: return "EXECUTOR";
    case ErrorOrigin::Critic: return "CRITIC";
  }
  return "?";
}

std::optional<ErrorOrigin> origin_from_string(std::string_view s) {
  for (ErrorOrigin o : {ErrorOrigin::None, ErrorOrigin::Planner, ErrorOrigin::Executor,
                        ErrorOrigin::Critic}) {
    if (s == to_string(o)) return o;
  }
  return std::nullopt;
}

}  // namespace tracepipe
