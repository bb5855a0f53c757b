#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scaffold/core.hpp"
#include "scaffold/errors.hpp"
#include "scaffold/http.hpp"
#include "scaffold/scripted.hpp"

namespace scaffold {

struct ScoreReport {
  double score = 0.0; // in [0, 1]
  ScorerKind scorer = ScorerKind::TLC;
  std::optional<std::string> detail;

  bool operator==(const ScoreReport&) const = default;
};

/**
 * Token-likelihood confidence: the arithmetic mean of the step's linear token
 * probabilities. Backends already exclude stop-sequence tokens from the list,
 * so every supplied token participates. EMPTY_STEP when there is nothing to
 * average.
 */
inline double tlc_score(const std::vector<TokenProb>& tokens) {
  if (tokens.empty()) {
    fail(ErrorCode::EMPTY_STEP, "token-likelihood score over an empty token list");
  }
  double sum = 0.0;
  for (const TokenProb& t : tokens) sum += t.prob;
  return sum / static_cast<double>(tokens.size());
}

/**
 * Two-point scorer for scripted runs: a step known to the suite scores by its
 * recorded correctness; fallback-synthesized steps score by the flaw marker
 * they carry. Any other text counts as correct, mirroring a clean fallback
 * step.
 */
class ScriptedScorer {
 public:
  explicit ScriptedScorer(const ScriptedSuite& suite)
      : spec_(suite.scorer), correctness_(scripted_correctness_index(suite)) {}

  double score(const std::string& step_text) const {
    auto it = correctness_.find(step_text);
    if (it != correctness_.end()) {
      return it->second ? spec_.score_correct : spec_.score_incorrect;
    }
    if (step_text.find(kScriptedFlawMarker) != std::string::npos) {
      return spec_.score_incorrect;
    }
    return spec_.score_correct;
  }

  const ScriptedScorerSpec& spec() const { return spec_; }

 private:
  ScriptedScorerSpec spec_;
  std::map<std::string, bool> correctness_;
};

/**
 * A scoring handle of one of the three kinds. PRM holds a live reward-model
 * client; SCRIPTED holds the suite-derived scorer; TLC needs no state.
 */
struct Scorer {
  ScorerKind kind = ScorerKind::TLC;
  std::shared_ptr<HttpPrmClient> prm;
  std::shared_ptr<ScriptedScorer> scripted;
};

inline Scorer make_tlc_scorer() { return Scorer{ScorerKind::TLC, nullptr, nullptr}; }

inline Scorer make_prm_scorer(std::shared_ptr<HttpPrmClient> client) {
  if (!client) fail(ErrorCode::CONFIG_INVALID, "scorer: PRM scorer needs a reward client");
  return Scorer{ScorerKind::PRM, std::move(client), nullptr};
}

inline Scorer make_scripted_scorer(const ScriptedSuite& suite) {
  return Scorer{ScorerKind::SCRIPTED, nullptr, std::make_shared<ScriptedScorer>(suite)};
}

/**
 * Scores one candidate step in context. The report's score is always in
 * [0, 1]: the reward client enforces its range, the token mean inherits it,
 * and scripted scores are validated at suite load.
 */
inline ScoreReport score_step(const Scorer& scorer, const std::string& question,
                              const std::vector<std::string>& prior_steps, const Step& step) {
  ScoreReport report;
  report.scorer = scorer.kind;
  switch (scorer.kind) {
    case ScorerKind::TLC:
      report.score = tlc_score(step.tokens);
      report.detail = "mean over " + std::to_string(step.tokens.size()) + " tokens";
      break;
    case ScorerKind::PRM:
      if (!scorer.prm) fail(ErrorCode::CONFIG_INVALID, "scorer: PRM scorer has no client");
      report.score = scorer.prm->score(question, prior_steps, step.text);
      break;
    case ScorerKind::SCRIPTED:
      if (!scorer.scripted) fail(ErrorCode::CONFIG_INVALID, "scorer: scripted scorer has no table");
      report.score = scorer.scripted->score(step.text);
      break;
  }
  return report;
}

inline void to_json(json& j, const ScoreReport& r) {
  j = json{{"score", r.score}, {"scorer", to_name(r.scorer)}};
  if (r.detail) j["detail"] = *r.detail;
}

inline void from_json(const json& j, ScoreReport& r) {
  j.at("score").get_to(r.score);
  r.scorer = scorer_from_name(j.at("scorer").get<std::string>());
  r.detail = j.contains("detail") ? std::optional<std::string>(j.at("detail").get<std::string>())
                                  : std::nullopt;
}

} // namespace scaffold
