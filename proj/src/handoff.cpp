#include "tracepipe/handoff.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace tracepipe {

namespace {

constexpr std::string_view kSimpleTemplate =
    "Question:\n"
    "{question}\n"
    "\n"
    "Choices:\n"
    "{choices}\n"
    "{state_block}"
    "\n"
    "Reply with the single letter of the correct choice.\n";

constexpr std::string_view kPlannerTemplate =
    "You are the Planner, the first stage of a Planner -> Executor -> Critic pipeline.\n"
    "\n"
    "Question:\n"
    "{question}\n"
    "\n"
    "Choices:\n"
    "{choices}\n"
    "\n"
    "Pipeline state (schema 1):\n"
    "{state_block}\n"
    "\n"
    "Propose an answer together with a brief plan for reaching it.\n"
    "The last line of your reply must be exactly: Answer: <letter>\n";

constexpr std::string_view kExecutorTemplate =
    "You are the Executor, the second stage of a Planner -> Executor -> Critic pipeline.\n"
    "\n"
    "Question:\n"
    "{question}\n"
    "\n"
    "Choices:\n"
    "{choices}\n"
    "\n"
    "Pipeline state (schema 1):\n"
    "{state_block}\n"
    "\n"
    "Solve the question, following the planner's plan where it is sound. Confirm the\n"
    "planner's answer or replace it, and say briefly why.\n"
    "The last line of your reply must be exactly: Answer: <letter>\n";

constexpr std::string_view kCriticTemplate =
    "You are the Critic, the final stage of a Planner -> Executor -> Critic pipeline.\n"
    "\n"
    "Question:\n"
    "{question}\n"
    "\n"
    "Choices:\n"
    "{choices}\n"
    "\n"
    "Pipeline state (schema 1):\n"
    "{state_block}\n"
    "\n"
    "Review the upstream answers and their reasoning, then give the final answer.\n"
    "The last line of your reply must be exactly: Answer: <letter>\n";

constexpr std::string_view kReminder =
    "\n\nYour previous reply did not follow the required format. "
    "Reply again and end with a final line of the form \"Answer: <letter>\".\n";

constexpr std::array<std::string_view, 3> kPlaceholders = {"{question}", "{choices}",
                                                           "{state_block}"};

void check_upstream(StageRole role, std::span<const StageArtifact> upstream) {
  if (upstream.size() != position(role)) {
    throw HandoffError("upstream length mismatch for " + std::string(to_string(role)) +
                       ": expected " + std::to_string(position(role)) + ", got " +
                       std::to_string(upstream.size()));
  }
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    if (position(upstream[i].stage) != i) {
      throw HandoffError("upstream artifact " + std::to_string(i) + " is from stage " +
                         std::string(to_string(upstream[i].stage)));
    }
  }
}

}  // namespace

PromptTemplates PromptTemplates::defaults() {
  return PromptTemplates{std::string(kSimpleTemplate),
                         {std::string(kPlannerTemplate), std::string(kExecutorTemplate),
                          std::string(kCriticTemplate)}};
}

void check_template(std::string_view name, std::string_view text) {
  for (auto placeholder : kPlaceholders) {
    if (text.find(placeholder) == std::string_view::npos) {
      throw HandoffError("template '" + std::string(name) + "' lacks placeholder " +
                         std::string(placeholder));
    }
  }
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw HandoffError("template directory '" + dir.string() + "' does not exist");
  }
  PromptTemplates out = defaults();
  auto read_into = [&](const char* file, std::string& slot) {
    const auto path = dir / file;
    if (!std::filesystem::exists(path)) return;
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    check_template(path.string(), ss.str());
    slot = ss.str();
  };
  read_into("simple.txt", out.simple);
  read_into("planner.txt", out.accountable[0]);
  read_into("executor.txt", out.accountable[1]);
  read_into("critic.txt", out.accountable[2]);
  return out;
}

std::string render_template(std::string_view tmpl, std::string_view question,
                            std::string_view choices, std::string_view state_block) {
  const std::array<std::string_view, 3> values = {question, choices, state_block};
  std::string out;
  out.reserve(tmpl.size() + question.size() + choices.size() + state_block.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (std::size_t k = 0; k < kPlaceholders.size(); ++k) {
        if (tmpl.substr(i, kPlaceholders[k].size()) == kPlaceholders[k]) {
          out += values[k];
          i += kPlaceholders[k].size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tmpl[i++];
  }
  return out;
}

std::string render_choices(const TaskItem& item) {
  std::string out;
  for (const auto& [letter, text] : item.choices) {
    if (!out.empty()) out += '\n';
    out += to_char(letter);
    out += ". ";
    out += text;
  }
  return out;
}

std::string build_simple_handoff(const TaskItem& item, const std::optional<StageArtifact>& prior,
                                 const PromptTemplates& templates) {
  std::string state;
  if (prior) {
    state = prior->answer
                ? "\nPrevious answer: " + to_string(*prior->answer) + "\n"
                : std::string("\nPrevious answer: none (the previous stage produced no valid answer)\n");
  }
  return render_template(templates.simple, item.question, render_choices(item), state);
}

std::string serialize_state_block(std::span<const StageArtifact> upstream) {
  std::string out = "<state>\n";
  for (const auto& a : upstream) {
    nlohmann::ordered_json j;
    j["stage"] = std::string(to_string(a.stage));
    j["producer"] = a.producer.key;
    j["answer"] = a.answer ? nlohmann::ordered_json(to_string(*a.answer)) : nullptr;
    j["rationale"] = a.rationale;
    out += j.dump();
    out += '\n';
  }
  out += "</state>";
  return out;
}

std::string build_accountable_handoff(const TaskItem& item, StageRole role,
                                      std::span<const StageArtifact> upstream,
                                      const PromptTemplates& templates) {
  check_upstream(role, upstream);
  return render_template(templates.accountable[position(role)], item.question,
                         render_choices(item), serialize_state_block(upstream));
}

std::string_view format_reminder() { return kReminder; }

StageArtifact validate_artifact(std::string_view raw_output, std::string task_id, StageRole stage,
                                ModelId producer, std::span<const StageArtifact> upstream) {
  check_upstream(stage, upstream);
  const AnswerExtraction ex = extract_answer(raw_output);

  StageArtifact out;
  out.task_id = std::move(task_id);
  out.stage = stage;
  out.producer = std::move(producer);
  out.answer = ex.answer;
  if (ex.answer) {
    out.rationale = std::string(raw_output.substr(0, ex.offset));
    out.rationale += raw_output.substr(ex.offset + ex.length);
  } else {
    out.rationale = std::string(raw_output);
  }
  for (const auto& a : upstream) out.upstream_answers.emplace_back(a.stage, a.answer);
  return out;
}

}  // namespace tracepipe
