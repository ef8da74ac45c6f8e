#pragma once

#include "tracepipe/core.hpp"

namespace tracepipe {

// Publishes the latest defined stage answer: critic, then executor, then
// planner (which may itself be undefined).
Answer select_final(const Answer& planner, const Answer& executor, const Answer& critic);

struct BlameResult {
  BlameFlags flags;
  ErrorOrigin origin = ErrorOrigin::None;
  Answer final_answer;

  friend bool operator==(const BlameResult&, const BlameResult&) = default;
};

// Flags compare each stage with gold (an undefined answer is never gold):
//   planner_error   = P != y
//   executor_repair = P != y and E == y
//   executor_harm   = P == y and E != y
//   critic_repair   = E != y and C == y
//   critic_harm     = E == y and C != y
// origin is NONE when the published answer is gold, otherwise the critic if
// it broke a correct executor answer, else the executor if it broke a
// correct plan, else the planner.
BlameResult assign_blame(const Answer& planner, const Answer& executor, const Answer& critic,
                         AnswerLetter gold);

}  // namespace tracepipe
