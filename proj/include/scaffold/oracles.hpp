#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scaffold/backends.hpp"
#include "scaffold/controller.hpp"
#include "scaffold/core.hpp"
#include "scaffold/errors.hpp"
#include "scaffold/evaluation.hpp"
#include "scaffold/prompt.hpp"
#include "scaffold/scoring.hpp"

// Reference implementations used by tests to cross-check the production
// paths. Each one is deliberately written with a different mechanism than
// the code it checks (exact integer arithmetic, selection by linear scan,
// straight-line replay) so a shared bug cannot hide in both.
namespace scaffold::oracle {

// ============================================================================
// Arithmetic mean, the slow careful way
// ============================================================================

/** Mean via ascending sort and long double accumulation. */
inline double mean_sorted(std::vector<double> values) {
  if (values.empty()) fail(ErrorCode::EMPTY_STEP, "oracle mean of zero values");
  std::sort(values.begin(), values.end());
  long double total = 0.0L;
  for (double v : values) total += static_cast<long double>(v);
  return static_cast<double>(total / static_cast<long double>(values.size()));
}

// ============================================================================
// Vote aggregation in exact integer tenths
// ============================================================================

/** A vote whose score is an exact multiple of 0.1, stored as tenths. */
struct TenthVote {
  std::string answer; // already normalized
  long long tenths = 0;
};

namespace detail {

struct TenthTally {
  std::vector<std::string> order; // first-appearance order
  std::map<std::string, long long> sums;
  std::map<std::string, long long> counts;
};

inline TenthTally tally(const std::vector<TenthVote>& votes) {
  TenthTally t;
  for (const TenthVote& v : votes) {
    if (!t.sums.count(v.answer)) t.order.push_back(v.answer);
    t.sums[v.answer] += v.tenths;
    t.counts[v.answer] += 1;
  }
  return t;
}

} // namespace detail

/** Highest summed score wins; exact integer sums, earliest answer on ties. */
inline std::string weighted_argmax_tenths(const std::vector<TenthVote>& votes) {
  if (votes.empty()) fail(ErrorCode::EMPTY_STEP, "oracle argmax of zero votes");
  detail::TenthTally t = detail::tally(votes);
  std::string best = t.order.front();
  for (const std::string& a : t.order) {
    if (t.sums[a] > t.sums[best]) best = a; // strict: ties keep the earlier one
  }
  return best;
}

/** Plurality wins; count ties fall back to summed score, then first seen. */
inline std::string majority_tenths(const std::vector<TenthVote>& votes) {
  if (votes.empty()) fail(ErrorCode::EMPTY_STEP, "oracle majority of zero votes");
  detail::TenthTally t = detail::tally(votes);
  std::string best = t.order.front();
  for (const std::string& a : t.order) {
    if (t.counts[a] > t.counts[best]) {
      best = a;
    } else if (t.counts[a] == t.counts[best] && t.sums[a] > t.sums[best]) {
      best = a;
    }
  }
  return best;
}

// ============================================================================
// Beam search by exhaustive replay
// ============================================================================

struct BeamRefStep {
  std::string text;
  double score = 0.0;
  Origin origin = Origin::SLM;

  bool operator==(const BeamRefStep&) const = default;
};

struct BeamRefPath {
  std::vector<BeamRefStep> steps;
  Termination termination = Termination::STEP_BUDGET;

  bool operator==(const BeamRefPath&) const = default;
};

namespace detail {

struct RefPath {
  std::vector<BeamRefStep> steps;
  int cum_tokens = 0;
  std::optional<Termination> terminated;
  double ranking = 0.0;
  long long creation = 0;
};

inline bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

inline double aggregate_ref(const std::vector<BeamRefStep>& steps, ScoreAggregation kind) {
  switch (kind) {
    case ScoreAggregation::MIN: {
      double m = steps.front().score;
      for (const auto& s : steps) m = std::min(m, s.score);
      return m;
    }
    case ScoreAggregation::LAST:
      return steps.back().score;
    case ScoreAggregation::PRODUCT: {
      double p = 1.0;
      for (const auto& s : steps) p *= s.score;
      return p;
    }
    case ScoreAggregation::MEAN: {
      double t = 0.0;
      for (const auto& s : steps) t += s.score;
      return t / static_cast<double>(steps.size());
    }
  }
  return 0.0;
}

// Top-k by repeated linear scan: pick the best remaining element k times,
// preferring higher ranking and, on exactly equal ranking, lower creation.
inline std::vector<RefPath> select_top(std::vector<RefPath> pool, int k) {
  std::vector<RefPath> kept;
  while (!pool.empty() && static_cast<int>(kept.size()) < k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
      if (pool[i].ranking > pool[best].ranking ||
          (pool[i].ranking == pool[best].ranking && pool[i].creation < pool[best].creation)) {
        best = i;
      }
    }
    kept.push_back(pool[best]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return kept;
}

} // namespace detail

/**
 * Straight-line replay of the beam procedure: per depth, each live beam at
 * rank p drafts n/m candidates on lanes p*(n/m)+j with seed config.seed+lane,
 * sub-threshold drafts are replaced and rescored, and the global top m by
 * score aggregation survive (ties to earlier creation). Returns the retained
 * beams, best first.
 */
inline std::vector<BeamRefPath> beam_reference(const Problem& problem,
                                               const SearchConfig& config,
                                               StepGenerator& slm, StepGenerator& llm,
                                               const Scorer& scorer) {
  const int per_beam = config.n / config.beam_width_m;
  long long next_creation = 0;

  auto spawn = [&](const detail::RefPath& parent, int lane,
                   int step_index) -> std::optional<detail::RefPath> {
    std::vector<std::string> prior;
    for (const auto& s : parent.steps) prior.push_back(s.text);

    StepRequest request;
    request.problem_id = problem.id;
    request.step_index = step_index;
    request.prompt_prefix = render_prompt(problem.statement, prior);
    request.stop = {std::string(kStepDelimiter)};
    request.temperature = config.temperature;
    request.max_tokens = config.l_max;
    request.want_logprobs = config.scorer != ScorerKind::PRM;
    request.seed = config.seed + static_cast<std::uint64_t>(lane);

    StepResponse draft = generate_step(slm, request);
    if (detail::blank(draft.text)) return std::nullopt;

    Step probe;
    probe.index = step_index;
    probe.text = draft.text;
    probe.tokens = draft.tokens;
    probe.token_count = draft.backend_token_count;
    probe.origin = Origin::SLM;
    double score = score_step(scorer, problem.statement, prior, probe).score;

    std::string text = draft.text;
    int token_count = draft.backend_token_count;
    FinishReason finish = draft.finish;
    Origin origin = Origin::SLM;
    if (score < config.threshold_tau) {
      StepResponse fixed = generate_step(llm, request);
      if (detail::blank(fixed.text)) return std::nullopt;
      probe = Step{};
      probe.index = step_index;
      probe.text = fixed.text;
      probe.tokens = fixed.tokens;
      probe.token_count = fixed.backend_token_count;
      probe.origin = Origin::LLM;
      score = score_step(scorer, problem.statement, prior, probe).score;
      text = fixed.text;
      token_count = fixed.backend_token_count;
      finish = fixed.finish;
      origin = Origin::LLM;
    }

    detail::RefPath child = parent;
    child.steps.push_back(BeamRefStep{text, score, origin});
    child.cum_tokens += token_count;
    child.terminated.reset();
    if (finish == FinishReason::EOS) {
      child.terminated = Termination::EOS;
    } else if (contains_boxed(text)) {
      child.terminated = Termination::BOXED_ANSWER;
    } else if (child.cum_tokens >= config.l_max) {
      child.terminated = Termination::TOKEN_BUDGET;
    } else if (step_index >= config.max_steps) {
      child.terminated = Termination::STEP_BUDGET;
    }
    child.ranking = detail::aggregate_ref(child.steps, config.score_aggregation);
    child.creation = next_creation++;
    return child;
  };

  std::vector<detail::RefPath> retained;
  int depth = 0;
  while (true) {
    std::vector<detail::RefPath> pool;
    if (depth == 0) {
      detail::RefPath root;
      for (int lane = 0; lane < config.n; ++lane) {
        if (auto c = spawn(root, lane, 1)) pool.push_back(*c);
      }
      if (pool.empty()) fail(ErrorCode::ALL_FAILED, "oracle: no viable root candidates");
    } else {
      for (std::size_t p = 0; p < retained.size(); ++p) {
        if (retained[p].terminated) {
          pool.push_back(retained[p]);
          continue;
        }
        bool grew = false;
        for (int j = 0; j < per_beam; ++j) {
          int lane = static_cast<int>(p) * per_beam + j;
          if (auto c = spawn(retained[p], lane, depth + 1)) {
            pool.push_back(*c);
            grew = true;
          }
        }
        if (!grew) {
          detail::RefPath stuck = retained[p];
          stuck.terminated = Termination::STEP_BUDGET;
          pool.push_back(stuck);
        }
      }
    }

    retained = detail::select_top(std::move(pool), config.beam_width_m);
    ++depth;
    bool done = true;
    for (const auto& b : retained) {
      if (!b.terminated) done = false;
    }
    if (done) break;
  }

  std::vector<BeamRefPath> out;
  for (const auto& b : retained) {
    BeamRefPath p;
    p.steps = b.steps;
    p.termination = b.terminated.value_or(Termination::STEP_BUDGET);
    out.push_back(std::move(p));
  }
  return out;
}

/** Projects a produced trajectory onto the oracle's comparison shape. */
inline BeamRefPath as_ref_path(const Trajectory& t) {
  BeamRefPath p;
  for (const Step& s : t.steps) {
    p.steps.push_back(BeamRefStep{s.text, s.score.value_or(-1.0), s.origin});
  }
  p.termination = t.termination;
  return p;
}

// ============================================================================
// Escalation soundness audit
// ============================================================================

/**
 * Checks origin and escalation bookkeeping against the recorded draft
 * scores: a step is LLM-origin exactly when its event says escalated, and
 * an event says escalated exactly when its draft score fell strictly below
 * tau. Returns human-readable violations; empty means sound.
 */
inline std::vector<std::string> escalation_soundness_violations(
    const std::vector<GenerationEvent>& events, const Trajectory& trajectory, double tau) {
  std::vector<std::string> bad;
  std::map<int, const GenerationEvent*> by_index;
  for (const GenerationEvent& e : events) by_index[e.step_index] = &e;

  for (const GenerationEvent& e : events) {
    const bool should = e.draft_score < tau;
    if (e.escalated != should) {
      bad.push_back("step " + std::to_string(e.step_index) + ": escalated=" +
                    (e.escalated ? "true" : "false") + " but draft score " +
                    std::to_string(e.draft_score) + " vs tau " + std::to_string(tau));
    }
  }
  for (const Step& s : trajectory.steps) {
    auto it = by_index.find(s.index);
    if (it == by_index.end()) {
      bad.push_back("step " + std::to_string(s.index) + ": no event recorded");
      continue;
    }
    const bool is_llm = s.origin == Origin::LLM;
    if (is_llm != it->second->escalated) {
      bad.push_back("step " + std::to_string(s.index) + ": origin " +
                    std::string(to_name(s.origin)) + " disagrees with event escalated=" +
                    (it->second->escalated ? "true" : "false"));
    }
  }
  return bad;
}

} // namespace scaffold::oracle
