#include "tracepipe/blame.hpp"

namespace tracepipe {

Answer select_final(const Answer& planner, const Answer& executor, const Answer& critic) {
  if (critic) return critic;
  if (executor) return executor;
  return planner;
}

BlameResult assign_blame(const Answer& planner, const Answer& executor, const Answer& critic,
                         AnswerLetter gold) {
  const bool p_ok = planner == gold;
  const bool e_ok = executor == gold;
  const bool c_ok = critic == gold;

  BlameResult out;
  out.flags = BlameFlags(!p_ok, !p_ok && e_ok, p_ok && !e_ok, !e_ok && c_ok, e_ok && !c_ok);
  out.final_answer = select_final(planner, executor, critic);

  if (out.final_answer == gold) {
    out.origin = ErrorOrigin::None;
  } else if (e_ok && !c_ok) {
    out.origin = ErrorOrigin::Critic;
  } else if (p_ok && !e_ok) {
    out.origin = ErrorOrigin::Executor;
  } else {
    out.origin = ErrorOrigin::Planner;
  }
  return out;
}

}  // namespace tracepipe
