#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "scaffold/backends.hpp"
#include "scaffold/core.hpp"
#include "scaffold/evaluation.hpp"
#include "scaffold/prompt.hpp"
#include "scaffold/scoring.hpp"

namespace scaffold {

// One accepted step's audit trail. escalated is always exactly
// (draft_score < threshold_tau); the invariant is load-bearing for tests.
// wall_ms is diagnostic and deliberately left out of the canonical JSON so
// identical runs serialize identically.
struct GenerationEvent {
  int step_index = 0;
  double draft_score = 0.0;
  bool escalated = false;
  int slm_tokens_spent = 0; // the draft, kept or not
  int llm_tokens_spent = 0; // the replacement, 0 when the draft was kept
  long long wall_ms = 0;

  bool operator==(const GenerationEvent& o) const {
    return step_index == o.step_index && draft_score == o.draft_score &&
           escalated == o.escalated && slm_tokens_spent == o.slm_tokens_spent &&
           llm_tokens_spent == o.llm_tokens_spent;
  }
};

/**
 * First matching stop condition for a just-appended step, in fixed priority:
 * backend end-of-sequence, then a boxed final answer in the step text, then
 * the trajectory token budget, then the step budget. nullopt means keep
 * generating. cumulative_tokens may exceed l_max by up to one step: the
 * straddling step is kept, then generation halts.
 */
inline std::optional<Termination> detect_termination(const std::string& step_text,
                                                     FinishReason finish, int cumulative_tokens,
                                                     int step_index, const SearchConfig& config) {
  if (finish == FinishReason::EOS) return Termination::EOS;
  if (contains_boxed(step_text)) return Termination::BOXED_ANSWER;
  if (cumulative_tokens >= config.l_max) return Termination::TOKEN_BUDGET;
  if (step_index >= config.max_steps) return Termination::STEP_BUDGET;
  return std::nullopt;
}

struct GenerationOutcome {
  Trajectory trajectory;
  std::vector<GenerationEvent> events;
  long long slm_tokens_total = 0; // request-level spend, replaced drafts included
  long long llm_tokens_total = 0;
};

namespace detail {

inline bool whitespace_only(const std::string& s) {
  return s.find_first_not_of(" \t\r\n\f\v") == std::string::npos;
}

} // namespace detail

/**
 * Drafts a trajectory step by step with the small model, scoring every draft
 * in context. A draft scoring strictly below threshold_tau is discarded and
 * the step is regenerated by the large model from the accepted prefix only:
 * the rejected draft never appears in any prompt. Replacement steps are
 * accepted unconditionally and scored for the record; their score cannot
 * trigger a second correction.
 *
 * Two consecutive whitespace-only generations (drafts or replacements, with
 * no step accepted in between) abort the trajectory with step-budget
 * semantics: a deterministic backend would otherwise loop forever.
 */
inline GenerationOutcome smart_generate(const Problem& problem, const SearchConfig& config,
                                        StepGenerator& slm, StepGenerator& llm,
                                        const Scorer& scorer) {
  GenerationOutcome out;
  Trajectory& traj = out.trajectory;
  traj.problem_id = problem.id;
  traj.seed = config.seed;

  std::vector<std::string> accepted_texts;
  int cumulative_tokens = 0;
  int consecutive_empty = 0;
  std::optional<Termination> termination;

  while (!termination) {
    int index = static_cast<int>(traj.steps.size()) + 1;
    auto started = std::chrono::steady_clock::now();

    StepRequest request;
    request.problem_id = problem.id;
    request.step_index = index;
    request.prompt_prefix = render_prompt(problem.statement, accepted_texts);
    request.stop = {std::string(kStepDelimiter)};
    request.temperature = config.temperature;
    request.max_tokens = config.l_max;
    request.want_logprobs = config.scorer != ScorerKind::PRM;
    request.seed = config.seed;

    StepResponse draft = generate_step(slm, request);
    out.slm_tokens_total += draft.backend_token_count;

    if (detail::whitespace_only(draft.text)) {
      if (++consecutive_empty >= 2) {
        termination = Termination::STEP_BUDGET;
        break;
      }
      continue; // one retry at the same position
    }

    Step draft_step;
    draft_step.index = index;
    draft_step.text = draft.text;
    draft_step.tokens = draft.tokens;
    draft_step.token_count = draft.backend_token_count;
    draft_step.origin = Origin::SLM;

    double draft_score = score_step(scorer, problem.statement, accepted_texts, draft_step).score;
    bool escalate = draft_score < config.threshold_tau; // strictly below

    Step kept = draft_step;
    FinishReason finish = draft.finish;
    int llm_spent = 0;
    if (escalate) {
      // Same prompt, same seed: the large model continues from the accepted
      // steps, not from the rejected draft.
      StepResponse replacement = generate_step(llm, request);
      out.llm_tokens_total += replacement.backend_token_count;
      llm_spent = replacement.backend_token_count;

      kept = Step{};
      kept.index = index;
      kept.text = replacement.text;
      kept.tokens = replacement.tokens;
      kept.token_count = replacement.backend_token_count;
      kept.origin = Origin::LLM;
      kept.slm_draft_text = draft.text;
      finish = replacement.finish;

      if (detail::whitespace_only(kept.text)) {
        if (++consecutive_empty >= 2) {
          termination = Termination::STEP_BUDGET;
          break;
        }
        continue;
      }
      kept.score = score_step(scorer, problem.statement, accepted_texts, kept).score;
    } else {
      kept.score = draft_score;
    }

    traj.steps.push_back(kept);
    accepted_texts.push_back(kept.text);
    cumulative_tokens += kept.token_count;
    consecutive_empty = 0;

    GenerationEvent ev;
    ev.step_index = index;
    ev.draft_score = draft_score;
    ev.escalated = escalate;
    ev.slm_tokens_spent = draft.backend_token_count;
    ev.llm_tokens_spent = llm_spent;
    ev.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::steady_clock::now() - started)
                     .count();
    out.events.push_back(ev);

    termination = detect_termination(kept.text, finish, cumulative_tokens, index, config);
  }

  traj.termination = *termination;
  traj.extracted_answer = extract_answer(traj);
  if (!traj.steps.empty()) {
    traj.aggregate_score = aggregate_trajectory_score(traj, config.score_aggregation);
  }
  assert_trajectory_invariants(traj);
  return out;
}

inline void to_json(json& j, const GenerationEvent& e) {
  j = json{{"step_index", e.step_index},
           {"draft_score", e.draft_score},
           {"escalated", e.escalated},
           {"slm_tokens_spent", e.slm_tokens_spent},
           {"llm_tokens_spent", e.llm_tokens_spent}};
}

inline void from_json(const json& j, GenerationEvent& e) {
  j.at("step_index").get_to(e.step_index);
  j.at("draft_score").get_to(e.draft_score);
  j.at("escalated").get_to(e.escalated);
  j.at("slm_tokens_spent").get_to(e.slm_tokens_spent);
  j.at("llm_tokens_spent").get_to(e.llm_tokens_spent);
  e.wall_ms = 0;
}

} // namespace scaffold
