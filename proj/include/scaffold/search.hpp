#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scaffold/controller.hpp"
#include "scaffold/core.hpp"
#include "scaffold/errors.hpp"

namespace scaffold {

// =====================================================================
// Best-of-N
// =====================================================================

struct TrajectoryFailure {
  int k = 0; // which of the N attempts
  std::string error;
};

struct BestOfNOutcome {
  std::vector<GenerationOutcome> outcomes; // ordered by k; failed attempts omitted
  std::vector<TrajectoryFailure> failures;
  long long slm_tokens_total = 0;
  long long llm_tokens_total = 0;
};

/**
 * Runs config.n independent trajectories, attempt k under derived seed
 * config.seed + k; successful outcomes keep their k-order. A failing
 * trajectory records its error and does not disturb the others; ALL_FAILED
 * only when nothing survived.
 */
inline BestOfNOutcome best_of_n(const Problem& problem, const SearchConfig& config,
                                StepGenerator& slm, StepGenerator& llm, const Scorer& scorer) {
  BestOfNOutcome out;
  for (int k = 0; k < config.n; ++k) {
    SearchConfig derived = config;
    derived.seed = config.seed + static_cast<std::uint64_t>(k);
    try {
      GenerationOutcome one = smart_generate(problem, derived, slm, llm, scorer);
      out.slm_tokens_total += one.slm_tokens_total;
      out.llm_tokens_total += one.llm_tokens_total;
      out.outcomes.push_back(std::move(one));
    } catch (const Error& e) {
      out.failures.push_back(TrajectoryFailure{k, e.what()});
    }
  }
  if (out.outcomes.empty() && config.n > 0) {
    std::string first = out.failures.empty() ? "no attempts" : out.failures.front().error;
    fail(ErrorCode::ALL_FAILED, "every trajectory failed for " + problem.id + "; first: " + first);
  }
  return out;
}

// =====================================================================
// Beam search
// =====================================================================

// Snapshot of the frontier after one depth's scoring and pruning.
struct BeamState {
  int depth = 0;                    // steps per retained beam so far
  std::vector<Trajectory> retained; // ranked best first
};

struct BeamOutcome {
  std::vector<Trajectory> finals;      // ranked best first, at most beam_width_m
  std::vector<GenerationEvent> events; // every created candidate, creation order
  std::vector<BeamState> states;
  long long slm_tokens_total = 0;
  long long llm_tokens_total = 0;
};

namespace detail {

// A partial trajectory in the pool. Steps are shared with the parent beam:
// a corrected step in a retained parent is stored once and referenced by all
// of its children, which is what makes one correction propagate to many
// paths without re-spending large-model tokens.
struct PartialBeam {
  std::vector<std::shared_ptr<const Step>> steps;
  int cum_tokens = 0;
  std::optional<Termination> terminated;
  double ranking = 0.0;      // score_aggregation over the step scores so far
  long long creation = 0;    // global creation order, the ranking tie-break
};

inline Trajectory materialize(const PartialBeam& b, const std::string& problem_id,
                              std::uint64_t seed, ScoreAggregation kind) {
  Trajectory t;
  t.problem_id = problem_id;
  t.seed = seed;
  for (const auto& s : b.steps) t.steps.push_back(*s);
  t.termination = b.terminated.value_or(Termination::STEP_BUDGET);
  t.extracted_answer = extract_answer(t);
  if (!t.steps.empty()) t.aggregate_score = aggregate_trajectory_score(t, kind);
  assert_trajectory_invariants(t);
  return t;
}

inline void rank_pool(std::vector<PartialBeam>& pool) {
  std::sort(pool.begin(), pool.end(), [](const PartialBeam& a, const PartialBeam& b) {
    if (a.ranking != b.ranking) return a.ranking > b.ranking;
    return a.creation < b.creation;
  });
}

} // namespace detail

/**
 * Step-level beam search with selective correction. Every depth drafts
 * config.n candidate continuations with the small model (n/m per live
 * retained beam, lane-distinct seeds), scores each candidate, replaces the
 * ones strictly below threshold_tau with large-model steps, rescores those,
 * and only then keeps the global top m by score_aggregation over the partial
 * trajectory (ties: earlier creation wins). Beams that reach a termination
 * condition are frozen: they compete in later rankings untouched but are
 * never extended. The search ends when every retained beam is terminated.
 *
 * Candidate seeds are config.seed + lane, where lane is the candidate's slot
 * 0..n-1 within its depth; with n = m = 1 every step runs under config.seed
 * and, for deterministic backends, the walk produces the same trajectory as
 * smart_generate. One edge differs: a root depth that is whitespace in every
 * lane aborts with ALL_FAILED, where smart_generate returns a zero-step
 * trajectory.
 */
inline BeamOutcome beam_search(const Problem& problem, const SearchConfig& config,
                               StepGenerator& slm, StepGenerator& llm, const Scorer& scorer) {
  const int n = config.n;
  const int m = config.beam_width_m;
  const int per_beam = n / m; // validate_config guarantees divisibility

  BeamOutcome out;
  long long creation_counter = 0;

  // Extends one parent by one candidate step; returns nullopt for a
  // whitespace-only generation (the lane contributes nothing this depth).
  auto extend = [&](const detail::PartialBeam& parent, int lane,
                    int step_index) -> std::optional<detail::PartialBeam> {
    auto started = std::chrono::steady_clock::now();

    std::vector<std::string> prior_texts;
    prior_texts.reserve(parent.steps.size());
    for (const auto& s : parent.steps) prior_texts.push_back(s->text);

    StepRequest request;
    request.problem_id = problem.id;
    request.step_index = step_index;
    request.prompt_prefix = render_prompt(problem.statement, prior_texts);
    request.stop = {std::string(kStepDelimiter)};
    request.temperature = config.temperature;
    request.max_tokens = config.l_max;
    request.want_logprobs = config.scorer != ScorerKind::PRM;
    request.seed = config.seed + static_cast<std::uint64_t>(lane);

    StepResponse draft = generate_step(slm, request);
    out.slm_tokens_total += draft.backend_token_count;
    if (detail::whitespace_only(draft.text)) return std::nullopt;

    Step draft_step;
    draft_step.index = step_index;
    draft_step.text = draft.text;
    draft_step.tokens = draft.tokens;
    draft_step.token_count = draft.backend_token_count;
    draft_step.origin = Origin::SLM;

    double draft_score = score_step(scorer, problem.statement, prior_texts, draft_step).score;
    bool escalate = draft_score < config.threshold_tau;

    Step kept = draft_step;
    FinishReason finish = draft.finish;
    int llm_spent = 0;
    if (escalate) {
      StepResponse replacement = generate_step(llm, request);
      out.llm_tokens_total += replacement.backend_token_count;
      llm_spent = replacement.backend_token_count;
      if (detail::whitespace_only(replacement.text)) return std::nullopt;

      kept = Step{};
      kept.index = step_index;
      kept.text = replacement.text;
      kept.tokens = replacement.tokens;
      kept.token_count = replacement.backend_token_count;
      kept.origin = Origin::LLM;
      kept.slm_draft_text = draft.text;
      finish = replacement.finish;
      // Rescored after replacement so the ranking sees the corrected step.
      kept.score = score_step(scorer, problem.statement, prior_texts, kept).score;
    } else {
      kept.score = draft_score;
    }

    detail::PartialBeam child;
    child.steps = parent.steps;
    child.steps.push_back(std::make_shared<const Step>(kept));
    child.cum_tokens = parent.cum_tokens + kept.token_count;
    child.terminated =
        detect_termination(kept.text, finish, child.cum_tokens, step_index, config);
    std::vector<double> scores;
    scores.reserve(child.steps.size());
    for (const auto& s : child.steps) scores.push_back(*s->score);
    child.ranking = aggregate_scores(scores, config.score_aggregation);
    child.creation = creation_counter++;

    GenerationEvent ev;
    ev.step_index = step_index;
    ev.draft_score = draft_score;
    ev.escalated = escalate;
    ev.slm_tokens_spent = draft.backend_token_count;
    ev.llm_tokens_spent = llm_spent;
    ev.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::steady_clock::now() - started)
                     .count();
    out.events.push_back(ev);
    return child;
  };

  std::vector<detail::PartialBeam> retained;
  int depth = 0;
  while (true) {
    std::vector<detail::PartialBeam> pool;

    if (depth == 0) {
      detail::PartialBeam root;
      for (int lane = 0; lane < n; ++lane) {
        if (auto child = extend(root, lane, 1)) {
          pool.push_back(std::move(*child));
        }
      }
    } else {
      for (std::size_t p = 0; p < retained.size(); ++p) {
        if (retained[p].terminated) {
          pool.push_back(retained[p]); // frozen, competes unchanged
          continue;
        }
        bool any_child = false;
        for (int j = 0; j < per_beam; ++j) {
          int lane = static_cast<int>(p) * per_beam + j;
          if (auto child = extend(retained[p], lane, depth + 1)) {
            pool.push_back(std::move(*child));
            any_child = true;
          }
        }
        if (!any_child) {
          // Every lane of this beam produced whitespace; it can never
          // advance, so it freezes where it stands and keeps competing.
          detail::PartialBeam stopped = retained[p];
          stopped.terminated = Termination::STEP_BUDGET;
          pool.push_back(std::move(stopped));
        }
      }
    }

    if (pool.empty()) {
      fail(ErrorCode::ALL_FAILED, "beam search produced no viable candidates for " + problem.id);
    }

    detail::rank_pool(pool);
    if (static_cast<int>(pool.size()) > m) pool.resize(static_cast<std::size_t>(m));
    retained = std::move(pool);
    ++depth;

    BeamState snapshot;
    snapshot.depth = depth;
    for (const auto& b : retained) {
      snapshot.retained.push_back(
          detail::materialize(b, problem.id, config.seed, config.score_aggregation));
    }
    out.states.push_back(std::move(snapshot));

    bool all_terminated = std::all_of(retained.begin(), retained.end(),
                                      [](const detail::PartialBeam& b) { return b.terminated.has_value(); });
    if (all_terminated) break;
  }

  for (const auto& b : retained) {
    out.finals.push_back(detail::materialize(b, problem.id, config.seed, config.score_aggregation));
  }
  return out;
}

// Trajectories of a Best-of-N outcome, in attempt order.
inline std::vector<Trajectory> collect_trajectories(const BestOfNOutcome& o) {
  std::vector<Trajectory> out;
  out.reserve(o.outcomes.size());
  for (const auto& g : o.outcomes) out.push_back(g.trajectory);
  return out;
}

} // namespace scaffold
