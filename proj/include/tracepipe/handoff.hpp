#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tracepipe/core.hpp"

namespace tracepipe {

inline constexpr int kArtifactSchemaVersion = 1;

// Validated envelope one stage hands to the next in the accountable regime.
struct StageArtifact {
  std::string task_id;
  StageRole stage = StageRole::Planner;
  ModelId producer;
  Answer answer;
  std::string rationale;
  // Exactly the stages before `stage`, in pipeline order.
  std::vector<std::pair<StageRole, Answer>> upstream_answers;
  int schema_version = kArtifactSchemaVersion;

  friend bool operator==(const StageArtifact&, const StageArtifact&) = default;
};

class HandoffError : public Error {
 public:
  using Error::Error;
};

// Prompt templates with {question}, {choices} and {state_block} placeholders.
struct PromptTemplates {
  std::string simple;
  std::array<std::string, 3> accountable;  // by position(StageRole)

  static PromptTemplates defaults();
  // Reads simple.txt, planner.txt, executor.txt and critic.txt from `dir`;
  // files that are absent keep the default text.
  static PromptTemplates load(const std::filesystem::path& dir);
};

// Throws HandoffError if a template lacks one of the three placeholders.
void check_template(std::string_view name, std::string_view text);

// Single pass substitution: text inserted for one placeholder is never
// rescanned, so a question containing "{choices}" renders literally.
std::string render_template(std::string_view tmpl, std::string_view question,
                            std::string_view choices, std::string_view state_block);

// "A. text\nB. text\n..." without a trailing newline.
std::string render_choices(const TaskItem& item);

// Simple regime: question, choices and, when there is an upstream stage, its
// answer letter only.
std::string build_simple_handoff(const TaskItem& item, const std::optional<StageArtifact>& prior,
                                 const PromptTemplates& templates = PromptTemplates::defaults());

// Machine-readable block listing the upstream artifacts, one JSON object per
// line between <state> and </state>.
std::string serialize_state_block(std::span<const StageArtifact> upstream);

// Accountable regime. Throws HandoffError("upstream length mismatch ...") if
// `upstream` does not hold exactly the stages preceding `role`.
std::string build_accountable_handoff(const TaskItem& item, StageRole role,
                                      std::span<const StageArtifact> upstream,
                                      const PromptTemplates& templates = PromptTemplates::defaults());

// Appended to a prompt when the first reply could not be parsed.
std::string_view format_reminder();

// Parses the answer out of `raw_output`; the rest of the text (with the
// extracted span cut out) becomes the rationale. Never throws on bad output:
// an unparseable reply yields an UNDEFINED answer.
StageArtifact validate_artifact(std::string_view raw_output, std::string task_id, StageRole stage,
                                ModelId producer, std::span<const StageArtifact> upstream);

}  // namespace tracepipe
