#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "scaffold/core.hpp"
#include "scaffold/hashing.hpp"

namespace scaffold {

// =====================================================================
// Boxed-answer extraction
// =====================================================================

namespace detail {

// Balanced-brace scan starting right after "\boxed{". Backslash escapes the
// following character, so "\{" and "\}" do not move the depth counter.
inline std::optional<std::string> boxed_content_at(const std::string& text, std::size_t open) {
  int depth = 1;
  std::size_t i = open + 1;
  while (i < text.size()) {
    char c = text[i];
    if (c == '\\') {
      i += 2;
      continue;
    }
    if (c == '{') ++depth;
    if (c == '}') {
      --depth;
      if (depth == 0) return text.substr(open + 1, i - open - 1);
    }
    ++i;
  }
  return std::nullopt; // ran off the end unbalanced
}

} // namespace detail

/**
 * Content of the last balanced \boxed{...} in the text, raw (not normalized).
 * Later unbalanced occurrences are skipped in favor of earlier balanced ones.
 */
inline std::optional<std::string> find_last_boxed(const std::string& text) {
  static const std::string kMarker = "\\boxed{";
  std::size_t pos = text.rfind(kMarker);
  while (pos != std::string::npos) {
    if (auto content = detail::boxed_content_at(text, pos + kMarker.size() - 1)) {
      return content;
    }
    if (pos == 0) break;
    pos = text.rfind(kMarker, pos - 1);
  }
  return std::nullopt;
}

inline bool contains_boxed(const std::string& text) { return find_last_boxed(text).has_value(); }

// Full trajectory text as generated: steps joined by the step delimiter.
inline std::string trajectory_text(const Trajectory& t) {
  std::string out;
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    if (i > 0) out += "\n\n";
    out += t.steps[i].text;
  }
  return out;
}

// =====================================================================
// Normalization and judging
// =====================================================================

/**
 * Purely syntactic canonical form for answer comparison:
 *   - strips outer whitespace and outer dollar signs (escaped "\$" untouched),
 *   - removes \left and \right sizing commands,
 *   - removes all whitespace so spacing variants ("6 + 9i" vs "6+9i") merge,
 *   - lowercases answers made only of letters so textual answers compare
 *     case-insensitively.
 * No symbolic math: "\frac{17}{50}" and "17/50" stay distinct on purpose.
 * Idempotent: normalize(normalize(x)) == normalize(x).
 */
inline std::string normalize_answer(const std::string& raw) {
  std::string s = raw;

  auto is_ws = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  auto escaped_at = [&](std::size_t i) { return i > 0 && s[i - 1] == '\\'; };

  // Outer whitespace and dollar signs, to a fixpoint.
  bool changed = true;
  while (changed) {
    changed = false;
    std::size_t b = 0, e = s.size();
    while (b < e && is_ws(s[b])) ++b;
    while (e > b && is_ws(s[e - 1])) --e;
    if (b > 0 || e < s.size()) {
      s = s.substr(b, e - b);
      changed = true;
    }
    while (!s.empty() && s.front() == '$') {
      s.erase(s.begin());
      changed = true;
    }
    while (!s.empty() && s.back() == '$' && !escaped_at(s.size() - 1)) {
      s.pop_back();
      changed = true;
    }
  }

  // Drop \left and \right when they are the whole command (keeps \leftarrow).
  auto drop_command = [&](const std::string& cmd) {
    std::size_t pos = 0;
    while ((pos = s.find(cmd, pos)) != std::string::npos) {
      std::size_t after = pos + cmd.size();
      bool word_continues =
          after < s.size() && std::isalpha(static_cast<unsigned char>(s[after])) != 0;
      if (word_continues) {
        pos = after;
      } else {
        s.erase(pos, cmd.size());
      }
    }
  };
  drop_command("\\left");
  drop_command("\\right");

  s.erase(std::remove_if(s.begin(), s.end(), is_ws), s.end());

  bool all_alpha = !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalpha(static_cast<unsigned char>(c)) != 0;
  });
  if (all_alpha) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); });
  }
  return s;
}

/**
 * Last balanced boxed answer of the trajectory, normalized. NONE when no
 * balanced \boxed{...} exists anywhere in the generated text.
 */
inline std::optional<std::string> extract_answer(const std::string& text) {
  auto raw = find_last_boxed(text);
  if (!raw) return std::nullopt;
  return normalize_answer(*raw);
}

inline std::optional<std::string> extract_answer(const Trajectory& t) {
  return extract_answer(trajectory_text(t));
}

/**
 * Normalized string equality. A missing prediction is wrong. Syntactically
 * different but mathematically equal forms ("\frac{17}{50}" vs "17/50")
 * compare unequal; the harness surfaces those in a review file instead of
 * guessing.
 */
inline bool judge(const std::optional<std::string>& predicted, const std::string& gold) {
  if (!predicted) return false;
  return normalize_answer(*predicted) == normalize_answer(gold);
}

// =====================================================================
// Trajectory-level score aggregation
// =====================================================================

inline double aggregate_scores(const std::vector<double>& scores, ScoreAggregation kind) {
  if (scores.empty()) {
    fail(ErrorCode::UNSCORED_STEP, "no step scores to aggregate");
  }
  switch (kind) {
    case ScoreAggregation::MIN: {
      double m = scores.front();
      for (double s : scores) m = std::min(m, s);
      return m;
    }
    case ScoreAggregation::LAST:
      return scores.back();
    case ScoreAggregation::PRODUCT: {
      double p = 1.0;
      for (double s : scores) p *= s;
      return p;
    }
    case ScoreAggregation::MEAN: {
      double sum = 0.0;
      for (double s : scores) sum += s;
      return sum / static_cast<double>(scores.size());
    }
  }
  fail(ErrorCode::INVARIANT_VIOLATION, "unreachable score aggregation");
}

inline double aggregate_trajectory_score(const Trajectory& t, ScoreAggregation kind) {
  std::vector<double> scores;
  scores.reserve(t.steps.size());
  for (const Step& s : t.steps) {
    if (!s.score) {
      fail(ErrorCode::UNSCORED_STEP,
           "step " + std::to_string(s.index) + " of " + t.problem_id + " is unscored");
    }
    scores.push_back(*s.score);
  }
  if (scores.empty()) {
    fail(ErrorCode::UNSCORED_STEP, "trajectory " + t.problem_id + " has no steps to aggregate");
  }
  return aggregate_scores(scores, kind);
}

// =====================================================================
// Answer aggregation across trajectories
// =====================================================================

// One trajectory's vote: its extracted answer (absent when it never produced
// a boxed answer) and its trajectory-level score.
struct AggregationInput {
  std::optional<std::string> answer;
  double score = 0.0;

  bool operator==(const AggregationInput&) const = default;
};

namespace detail {

// Relative-epsilon tie detection. Sums that are mathematically equal on a
// decimal grid can differ by a few ulps; treating them as distinct would make
// tie-breaking depend on accumulation order. Relative (not absolute) epsilon
// keeps the argmax invariant under positive scaling of all scores.
inline bool score_sums_tie(double a, double b) {
  double diff = std::fabs(a - b);
  double scale = std::max(std::fabs(a), std::fabs(b));
  return diff <= 1e-9 * scale;
}

struct VoteGroup {
  std::string answer;       // normalized
  std::size_t first_index;  // position of the group's first vote
  int count = 0;
  double score_sum = 0.0;
};

inline std::vector<VoteGroup> group_votes(const std::vector<AggregationInput>& inputs) {
  std::vector<VoteGroup> groups; // in first-occurrence order
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].answer) continue; // answerless trajectories do not vote
    std::string key = normalize_answer(*inputs[i].answer);
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const VoteGroup& g) { return g.answer == key; });
    if (it == groups.end()) {
      groups.push_back(VoteGroup{key, i, 1, inputs[i].score});
    } else {
      it->count += 1;
      it->score_sum += inputs[i].score;
    }
  }
  return groups;
}

} // namespace detail

/**
 * Score-weighted vote: the answer whose votes carry the largest summed
 * trajectory score wins. Ties go to the answer that first occurred earliest.
 * NONE when no trajectory produced an answer.
 */
inline std::optional<std::string> weighted_at_n(const std::vector<AggregationInput>& inputs) {
  auto groups = detail::group_votes(inputs);
  if (groups.empty()) return std::nullopt;
  const detail::VoteGroup* best = &groups.front();
  for (const auto& g : groups) {
    if (!detail::score_sums_tie(g.score_sum, best->score_sum) && g.score_sum > best->score_sum) {
      best = &g; // groups are in first-occurrence order, so ties keep the earlier one
    }
  }
  return best->answer;
}

/**
 * Plurality vote. Ties on count fall back to the larger summed score, then to
 * the earliest first occurrence. NONE when no trajectory produced an answer.
 */
inline std::optional<std::string> majority_at_n(const std::vector<AggregationInput>& inputs) {
  auto groups = detail::group_votes(inputs);
  if (groups.empty()) return std::nullopt;
  const detail::VoteGroup* best = &groups.front();
  for (const auto& g : groups) {
    if (g.count > best->count) {
      best = &g;
    } else if (g.count == best->count) {
      if (!detail::score_sums_tie(g.score_sum, best->score_sum) && g.score_sum > best->score_sum) {
        best = &g;
      }
    }
  }
  return best->answer;
}

// =====================================================================
// Intervention accounting
// =====================================================================

// Request-level token totals from the backend clients, per problem. Lets the
// metrics distinguish tokens kept in final trajectories from tokens spent on
// replaced drafts and pruned branches.
struct TokenLedger {
  long long slm_tokens = 0;
  long long llm_tokens = 0;

  bool operator==(const TokenLedger&) const = default;
};

struct LevelAggregate {
  int count = 0;
  double accuracy = 0.0;
  double mean_corrected_step_ratio = 0.0;
  double mean_corrected_token_ratio = 0.0;
  double mean_llm_tokens = 0.0;
  double mean_llm_tokens_pruned = 0.0;

  bool operator==(const LevelAggregate&) const = default;
};

struct InterventionMetrics {
  double corrected_step_ratio = 0.0;  // corrected steps over all final steps
  double corrected_token_ratio = 0.0; // corrected-step tokens over all final-step tokens
  long long slm_tokens = 0;           // every SLM token spent, replaced drafts included
  long long llm_tokens = 0;           // LLM tokens in final trajectories
  long long llm_tokens_pruned = 0;    // LLM tokens spent on branches that were pruned
  std::optional<int> first_corrected_index;
  std::map<int, LevelAggregate> per_level_rollup; // filled at run scope, empty per problem

  bool operator==(const InterventionMetrics&) const = default;
};

/**
 * Correction ratios and token accounting over the final trajectories of one
 * problem. For BEAM_SEARCH, a step shared by several retained beams (same
 * index and same step-text prefix, i.e. one stored step referenced by all
 * children) is counted once; pruned branches never enter the ratios. For the
 * other strategies every trajectory is an independent generation and counts
 * in full.
 *
 * When a ledger of request-level totals is supplied, slm_tokens reports the
 * full SLM spend and llm_tokens_pruned the LLM spend that fell outside the
 * final trajectories. Without one (hand-built trajectories), both fall back
 * to what the final steps show.
 */
inline InterventionMetrics intervention_metrics(
    const std::vector<Trajectory>& finals, Strategy strategy,
    const std::optional<TokenLedger>& ledger = std::nullopt) {
  InterventionMetrics m;

  long long steps_total = 0, steps_corrected = 0;
  long long tokens_total = 0, tokens_corrected = 0;
  long long slm_final_tokens = 0;

  std::set<std::uint64_t> seen; // beam only: prefix identity of already-counted steps
  for (const Trajectory& t : finals) {
    std::uint64_t prefix_hash = fnv1a64(t.problem_id);
    for (const Step& s : t.steps) {
      prefix_hash = fnv1a64(s.text, fnv1a64_u64(static_cast<std::uint64_t>(s.index), prefix_hash));
      if (strategy == Strategy::BEAM_SEARCH && !seen.insert(prefix_hash).second) {
        continue; // stored once, referenced by this beam too
      }
      steps_total += 1;
      tokens_total += s.token_count;
      if (s.origin == Origin::LLM) {
        steps_corrected += 1;
        tokens_corrected += s.token_count;
        m.llm_tokens += s.token_count;
      } else {
        slm_final_tokens += s.token_count;
      }
    }
    for (const Step& s : t.steps) {
      if (s.origin == Origin::LLM) {
        if (!m.first_corrected_index || s.index < *m.first_corrected_index) {
          m.first_corrected_index = s.index;
        }
        break;
      }
    }
  }

  m.corrected_step_ratio =
      steps_total == 0 ? 0.0 : static_cast<double>(steps_corrected) / static_cast<double>(steps_total);
  m.corrected_token_ratio =
      tokens_total == 0 ? 0.0 : static_cast<double>(tokens_corrected) / static_cast<double>(tokens_total);

  if (ledger) {
    m.slm_tokens = ledger->slm_tokens;
    if (ledger->llm_tokens < m.llm_tokens) {
      fail(ErrorCode::INVARIANT_VIOLATION, "ledger llm total below final-trajectory llm tokens");
    }
    m.llm_tokens_pruned = ledger->llm_tokens - m.llm_tokens;
  } else {
    m.slm_tokens = slm_final_tokens;
    m.llm_tokens_pruned = 0;
  }
  return m;
}

// =====================================================================
// Canonical JSON
// =====================================================================

inline void to_json(json& j, const AggregationInput& a) {
  j = json{{"score", a.score}};
  if (a.answer) j["answer"] = *a.answer;
}

inline void from_json(const json& j, AggregationInput& a) {
  j.at("score").get_to(a.score);
  a.answer = j.contains("answer") ? std::optional<std::string>(j.at("answer").get<std::string>())
                                  : std::nullopt;
}

inline void to_json(json& j, const LevelAggregate& a) {
  j = json{{"count", a.count},
           {"accuracy", a.accuracy},
           {"mean_corrected_step_ratio", a.mean_corrected_step_ratio},
           {"mean_corrected_token_ratio", a.mean_corrected_token_ratio},
           {"mean_llm_tokens", a.mean_llm_tokens},
           {"mean_llm_tokens_pruned", a.mean_llm_tokens_pruned}};
}

inline void from_json(const json& j, LevelAggregate& a) {
  j.at("count").get_to(a.count);
  j.at("accuracy").get_to(a.accuracy);
  j.at("mean_corrected_step_ratio").get_to(a.mean_corrected_step_ratio);
  j.at("mean_corrected_token_ratio").get_to(a.mean_corrected_token_ratio);
  j.at("mean_llm_tokens").get_to(a.mean_llm_tokens);
  j.at("mean_llm_tokens_pruned").get_to(a.mean_llm_tokens_pruned);
}

inline void to_json(json& j, const InterventionMetrics& m) {
  j = json{{"corrected_step_ratio", m.corrected_step_ratio},
           {"corrected_token_ratio", m.corrected_token_ratio},
           {"slm_tokens", m.slm_tokens},
           {"llm_tokens", m.llm_tokens},
           {"llm_tokens_pruned", m.llm_tokens_pruned}};
  if (m.first_corrected_index) j["first_corrected_index"] = *m.first_corrected_index;
  if (!m.per_level_rollup.empty()) {
    json rollup = json::object();
    for (const auto& [level, agg] : m.per_level_rollup) rollup[std::to_string(level)] = agg;
    j["per_level_rollup"] = rollup;
  }
}

inline void from_json(const json& j, InterventionMetrics& m) {
  j.at("corrected_step_ratio").get_to(m.corrected_step_ratio);
  j.at("corrected_token_ratio").get_to(m.corrected_token_ratio);
  j.at("slm_tokens").get_to(m.slm_tokens);
  j.at("llm_tokens").get_to(m.llm_tokens);
  j.at("llm_tokens_pruned").get_to(m.llm_tokens_pruned);
  m.first_corrected_index = j.contains("first_corrected_index")
                                ? std::optional<int>(j.at("first_corrected_index").get<int>())
                                : std::nullopt;
  m.per_level_rollup.clear();
  if (j.contains("per_level_rollup")) {
    for (const auto& [key, value] : j.at("per_level_rollup").items()) {
      m.per_level_rollup[std::stoi(key)] = value.get<LevelAggregate>();
    }
  }
}

} // namespace scaffold
