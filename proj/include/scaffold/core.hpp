#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "scaffold/errors.hpp"

namespace scaffold {

using json = nlohmann::json;

// =====================================================================
// Enums
// =====================================================================

enum class Origin { SLM, LLM };

// Why a trajectory stopped, in priority order (highest first).
enum class Termination { EOS, BOXED_ANSWER, TOKEN_BUDGET, STEP_BUDGET };

enum class Strategy { SINGLE, BEST_OF_N, BEAM_SEARCH };

enum class ScorerKind { PRM, TLC, SCRIPTED };

// How N trajectories are reduced to one answer.
enum class Aggregation { WEIGHTED, MAJORITY, BEST_SCORE };

// How per-step scores are reduced to one trajectory-level score.
enum class ScoreAggregation { MIN, LAST, PRODUCT, MEAN };

namespace detail {

template <typename E>
struct EnumEntry {
  E value;
  std::string_view name;
};

template <typename E, std::size_t N>
inline std::string_view enum_name(const EnumEntry<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  fail(ErrorCode::INVARIANT_VIOLATION, "enum value outside table");
}

template <typename E, std::size_t N>
inline E enum_value(const EnumEntry<E> (&table)[N], std::string_view name,
                    std::string_view what) {
  for (const auto& e : table) {
    if (e.name == name) return e.value;
  }
  fail(ErrorCode::PARSE_ERROR, std::string(what) + ": unknown value '" + std::string(name) + "'");
}

inline constexpr EnumEntry<Origin> kOriginTable[] = {
    {Origin::SLM, "SLM"},
    {Origin::LLM, "LLM"},
};

inline constexpr EnumEntry<Termination> kTerminationTable[] = {
    {Termination::EOS, "EOS"},
    {Termination::BOXED_ANSWER, "BOXED_ANSWER"},
    {Termination::TOKEN_BUDGET, "TOKEN_BUDGET"},
    {Termination::STEP_BUDGET, "STEP_BUDGET"},
};

inline constexpr EnumEntry<Strategy> kStrategyTable[] = {
    {Strategy::SINGLE, "SINGLE"},
    {Strategy::BEST_OF_N, "BEST_OF_N"},
    {Strategy::BEAM_SEARCH, "BEAM_SEARCH"},
};

inline constexpr EnumEntry<ScorerKind> kScorerTable[] = {
    {ScorerKind::PRM, "PRM"},
    {ScorerKind::TLC, "TLC"},
    {ScorerKind::SCRIPTED, "SCRIPTED"},
};

inline constexpr EnumEntry<Aggregation> kAggregationTable[] = {
    {Aggregation::WEIGHTED, "WEIGHTED"},
    {Aggregation::MAJORITY, "MAJORITY"},
    {Aggregation::BEST_SCORE, "BEST_SCORE"},
};

inline constexpr EnumEntry<ScoreAggregation> kScoreAggregationTable[] = {
    {ScoreAggregation::MIN, "MIN"},
    {ScoreAggregation::LAST, "LAST"},
    {ScoreAggregation::PRODUCT, "PRODUCT"},
    {ScoreAggregation::MEAN, "MEAN"},
};

} // namespace detail

inline std::string_view to_name(Origin v) { return detail::enum_name(detail::kOriginTable, v); }
inline std::string_view to_name(Termination v) { return detail::enum_name(detail::kTerminationTable, v); }
inline std::string_view to_name(Strategy v) { return detail::enum_name(detail::kStrategyTable, v); }
inline std::string_view to_name(ScorerKind v) { return detail::enum_name(detail::kScorerTable, v); }
inline std::string_view to_name(Aggregation v) { return detail::enum_name(detail::kAggregationTable, v); }
inline std::string_view to_name(ScoreAggregation v) { return detail::enum_name(detail::kScoreAggregationTable, v); }

inline Origin origin_from_name(std::string_view s) { return detail::enum_value(detail::kOriginTable, s, "origin"); }
inline Termination termination_from_name(std::string_view s) { return detail::enum_value(detail::kTerminationTable, s, "termination"); }
inline Strategy strategy_from_name(std::string_view s) { return detail::enum_value(detail::kStrategyTable, s, "strategy"); }
inline ScorerKind scorer_from_name(std::string_view s) { return detail::enum_value(detail::kScorerTable, s, "scorer"); }
inline Aggregation aggregation_from_name(std::string_view s) { return detail::enum_value(detail::kAggregationTable, s, "aggregation"); }
inline ScoreAggregation score_aggregation_from_name(std::string_view s) { return detail::enum_value(detail::kScoreAggregationTable, s, "score_aggregation"); }

// =====================================================================
// Value types
// =====================================================================

// One generated token with its linear probability (already exponentiated at
// ingestion; never a log value).
struct TokenProb {
  std::string token_text;
  double prob = 0.0;

  bool operator==(const TokenProb&) const = default;
};

struct Problem {
  std::string id;
  std::string statement;
  std::string gold_answer;
  std::optional<int> level;
  std::optional<std::string> subject;
  json extra = json::object(); // unknown dataset fields, carried through untouched

  bool operator==(const Problem&) const = default;
};

/**
 * One reasoning step as it ended up in a trajectory. origin records which
 * backend produced the text that was kept; when a draft was replaced,
 * slm_draft_text preserves the rejected draft for audits and dumps.
 */
struct Step {
  int index = 0; // 1-based position in the trajectory
  std::string text;
  std::vector<TokenProb> tokens; // empty when the backend reported no per-token data
  int token_count = 0;           // == tokens.size() whenever tokens is non-empty
  Origin origin = Origin::SLM;
  std::optional<double> score; // in [0, 1] once scored
  std::optional<std::string> slm_draft_text;

  bool operator==(const Step&) const = default;
};

struct Trajectory {
  std::string problem_id;
  std::vector<Step> steps;
  Termination termination = Termination::STEP_BUDGET;
  std::optional<std::string> extracted_answer; // normalized; present whenever a boxed answer exists
  std::optional<double> aggregate_score;       // per ScoreAggregation, set once all steps are scored
  std::uint64_t seed = 0;                      // the derived seed this trajectory ran under

  bool operator==(const Trajectory&) const = default;
};

struct SearchConfig {
  Strategy strategy = Strategy::SINGLE;
  int n = 1;             // trajectory count (BEST_OF_N) or per-depth candidate count (BEAM_SEARCH)
  int beam_width_m = 1;  // retained beams per depth
  double threshold_tau = 0.9;
  ScorerKind scorer = ScorerKind::PRM;
  double temperature = 0.8;
  int l_max = 2048;   // trajectory token budget
  int max_steps = 40; // trajectory step budget
  Aggregation aggregation = Aggregation::WEIGHTED;
  ScoreAggregation score_aggregation = ScoreAggregation::MIN;
  std::uint64_t seed = 0;

  bool operator==(const SearchConfig&) const = default;
};

// Threshold used when a config leaves threshold_tau unset: token-likelihood
// scoring runs against a higher bar than reward-model scoring.
inline double default_threshold_tau(ScorerKind scorer) {
  return scorer == ScorerKind::TLC ? 0.93 : 0.9;
}

/**
 * Rejects malformed configs up front with CONFIG_INVALID naming the violated
 * field. Call before any backend work; nothing downstream revalidates.
 */
inline void validate_config(const SearchConfig& c) {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorCode::CONFIG_INVALID, field + ": " + why);
  };
  if (c.n < 1) bad("n", "must be >= 1");
  if (c.beam_width_m < 1) bad("beam_width_m", "must be >= 1");
  if (c.strategy == Strategy::BEAM_SEARCH) {
    if (c.beam_width_m > c.n) bad("beam_width_m", "must be <= n for BEAM_SEARCH");
    if (c.n % c.beam_width_m != 0) bad("n", "must be divisible by beam_width_m for BEAM_SEARCH");
  }
  if (!(c.threshold_tau >= 0.0 && c.threshold_tau <= 1.0)) bad("threshold_tau", "must be in [0, 1]");
  if (!(c.temperature >= 0.0)) bad("temperature", "must be >= 0");
  if (c.l_max < 1) bad("l_max", "must be >= 1");
  if (c.max_steps < 1) bad("max_steps", "must be >= 1");
}

// =====================================================================
// Token accounting helpers
// =====================================================================

inline int step_token_count(const Step& s) { return s.token_count; }

inline int trajectory_token_count(const Trajectory& t) {
  return std::accumulate(t.steps.begin(), t.steps.end(), 0,
                         [](int acc, const Step& s) { return acc + s.token_count; });
}

// Hard consistency checks run after every generation. Failures are bugs, not
// user errors, hence INVARIANT_VIOLATION.
inline void assert_trajectory_invariants(const Trajectory& t) {
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const Step& s = t.steps[i];
    if (s.index != static_cast<int>(i) + 1) {
      fail(ErrorCode::INVARIANT_VIOLATION, "step indices must be contiguous from 1");
    }
    if (!s.tokens.empty() && s.token_count != static_cast<int>(s.tokens.size())) {
      fail(ErrorCode::INVARIANT_VIOLATION, "token_count disagrees with tokens list");
    }
    if (s.score && !(*s.score >= 0.0 && *s.score <= 1.0)) {
      fail(ErrorCode::INVARIANT_VIOLATION, "step score outside [0, 1]");
    }
    if (s.origin == Origin::SLM && s.slm_draft_text) {
      fail(ErrorCode::INVARIANT_VIOLATION, "slm_draft_text set on a kept SLM step");
    }
  }
}

// =====================================================================
// Canonical JSON (snake_case, optionals omitted when absent)
// =====================================================================

inline void to_json(json& j, const TokenProb& t) {
  j = json{{"token_text", t.token_text}, {"prob", t.prob}};
}

inline void from_json(const json& j, TokenProb& t) {
  j.at("token_text").get_to(t.token_text);
  j.at("prob").get_to(t.prob);
}

inline void to_json(json& j, const Problem& p) {
  j = json{{"id", p.id}, {"statement", p.statement}, {"gold_answer", p.gold_answer}};
  if (p.level) j["level"] = *p.level;
  if (p.subject) j["subject"] = *p.subject;
  if (!p.extra.empty()) j["extra"] = p.extra;
}

inline void from_json(const json& j, Problem& p) {
  j.at("id").get_to(p.id);
  j.at("statement").get_to(p.statement);
  j.at("gold_answer").get_to(p.gold_answer);
  p.level = j.contains("level") ? std::optional<int>(j.at("level").get<int>()) : std::nullopt;
  p.subject = j.contains("subject") ? std::optional<std::string>(j.at("subject").get<std::string>())
                                    : std::nullopt;
  p.extra = j.contains("extra") ? j.at("extra") : json::object();
}

inline void to_json(json& j, const Step& s) {
  j = json{{"index", s.index},
           {"text", s.text},
           {"tokens", s.tokens},
           {"token_count", s.token_count},
           {"origin", to_name(s.origin)}};
  if (s.score) j["score"] = *s.score;
  if (s.slm_draft_text) j["slm_draft_text"] = *s.slm_draft_text;
}

inline void from_json(const json& j, Step& s) {
  j.at("index").get_to(s.index);
  j.at("text").get_to(s.text);
  s.tokens = j.at("tokens").get<std::vector<TokenProb>>();
  j.at("token_count").get_to(s.token_count);
  s.origin = origin_from_name(j.at("origin").get<std::string>());
  s.score = j.contains("score") ? std::optional<double>(j.at("score").get<double>()) : std::nullopt;
  s.slm_draft_text = j.contains("slm_draft_text")
                         ? std::optional<std::string>(j.at("slm_draft_text").get<std::string>())
                         : std::nullopt;
}

inline void to_json(json& j, const Trajectory& t) {
  j = json{{"problem_id", t.problem_id},
           {"steps", t.steps},
           {"termination", to_name(t.termination)},
           {"seed", t.seed}};
  if (t.extracted_answer) j["extracted_answer"] = *t.extracted_answer;
  if (t.aggregate_score) j["aggregate_score"] = *t.aggregate_score;
}

inline void from_json(const json& j, Trajectory& t) {
  j.at("problem_id").get_to(t.problem_id);
  t.steps = j.at("steps").get<std::vector<Step>>();
  t.termination = termination_from_name(j.at("termination").get<std::string>());
  j.at("seed").get_to(t.seed);
  t.extracted_answer = j.contains("extracted_answer")
                           ? std::optional<std::string>(j.at("extracted_answer").get<std::string>())
                           : std::nullopt;
  t.aggregate_score = j.contains("aggregate_score")
                          ? std::optional<double>(j.at("aggregate_score").get<double>())
                          : std::nullopt;
}

inline void to_json(json& j, const SearchConfig& c) {
  j = json{{"strategy", to_name(c.strategy)},
           {"n", c.n},
           {"beam_width_m", c.beam_width_m},
           {"threshold_tau", c.threshold_tau},
           {"scorer", to_name(c.scorer)},
           {"temperature", c.temperature},
           {"l_max", c.l_max},
           {"max_steps", c.max_steps},
           {"aggregation", to_name(c.aggregation)},
           {"score_aggregation", to_name(c.score_aggregation)},
           {"seed", c.seed}};
}

inline void from_json(const json& j, SearchConfig& c) {
  c.strategy = strategy_from_name(j.at("strategy").get<std::string>());
  j.at("n").get_to(c.n);
  j.at("beam_width_m").get_to(c.beam_width_m);
  j.at("threshold_tau").get_to(c.threshold_tau);
  c.scorer = scorer_from_name(j.at("scorer").get<std::string>());
  j.at("temperature").get_to(c.temperature);
  j.at("l_max").get_to(c.l_max);
  j.at("max_steps").get_to(c.max_steps);
  c.aggregation = aggregation_from_name(j.at("aggregation").get<std::string>());
  c.score_aggregation = score_aggregation_from_name(j.at("score_aggregation").get<std::string>());
  j.at("seed").get_to(c.seed);
}

} // namespace scaffold
