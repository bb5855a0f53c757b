#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scaffold/backends.hpp"
#include "scaffold/errors.hpp"
#include "scaffold/hashing.hpp"
#include "scaffold/prompt.hpp"

namespace scaffold {

// =====================================================================
// Scripted behavior tables
// =====================================================================

/**
 * One scripted draft. Matching is by (problem_id, step_index) plus two
 * optional key refinements: prefix_fingerprint pins the entry to one exact
 * generation history, seed pins it to one sampling lane. Absent refinements
 * act as wildcards; the most specific matching entry wins.
 */
struct ScriptedEntry {
  std::string problem_id;
  int step_index = 1; // 1-based
  std::optional<std::uint64_t> prefix_fingerprint;
  std::optional<std::uint64_t> seed;
  std::string text;
  std::vector<double> token_probs; // linear, one per synthesized token
  bool is_correct = true;
  FinishReason finish = FinishReason::STOP_SEQUENCE;

  bool operator==(const ScriptedEntry&) const = default;
};

// Deterministic stand-in for steps the table does not cover. Correctness is
// drawn from a pure hash of (problem_id, step_index, seed), so replays agree.
struct FallbackPolicy {
  double error_rate = 0.0;
  double confidence_when_wrong = 0.3;
  double confidence_when_right = 0.9;
  int final_step = 3; // the step index at which the fallback concludes with a boxed answer

  bool operator==(const FallbackPolicy&) const = default;
};

struct ScriptedBehavior {
  BackendRole role = BackendRole::SLM;
  std::vector<ScriptedEntry> step_table;
  std::optional<FallbackPolicy> fallback;

  bool operator==(const ScriptedBehavior&) const = default;
};

struct ScriptedScorerSpec {
  double score_correct = 0.95;
  double score_incorrect = 0.30;

  bool operator==(const ScriptedScorerSpec&) const = default;
};

// A full deterministic test rig: drafting behavior for both model roles plus
// the two-point scorer that maps step correctness to a score.
struct ScriptedSuite {
  std::string name;
  ScriptedBehavior slm;
  ScriptedBehavior llm;
  ScriptedScorerSpec scorer;

  bool operator==(const ScriptedSuite&) const = default;
};

// Substring that marks a fallback-synthesized step as flawed. The scripted
// scorer recognizes it, so correctness survives the trip through plain text.
inline constexpr std::string_view kScriptedFlawMarker = "[flawed-step]";

// =====================================================================
// Validation
// =====================================================================

namespace detail {

inline void check_unit(double v, const std::string& what) {
  if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::SCHEMA_ERROR, what + " must be in [0, 1]");
}

inline std::string entry_key_string(const ScriptedEntry& e) {
  std::string key = e.problem_id + "#" + std::to_string(e.step_index);
  key += e.prefix_fingerprint ? "@" + hex64(*e.prefix_fingerprint) : "@*";
  key += e.seed ? "~" + std::to_string(*e.seed) : "~*";
  return key;
}

} // namespace detail

inline void validate_scripted_behavior(const ScriptedBehavior& b) {
  std::map<std::string, bool> keys;
  for (const ScriptedEntry& e : b.step_table) {
    if (e.problem_id.empty()) fail(ErrorCode::SCHEMA_ERROR, "scripted entry with empty problem_id");
    if (e.step_index < 1) fail(ErrorCode::SCHEMA_ERROR, "scripted entry step_index must be >= 1");
    if (e.text.empty()) fail(ErrorCode::SCHEMA_ERROR, "scripted entry with empty text");
    if (e.text.find(kStepDelimiter) != std::string::npos) {
      fail(ErrorCode::SCHEMA_ERROR, "scripted entry text contains the step delimiter");
    }
    if (e.token_probs.empty() || e.token_probs.size() > e.text.size()) {
      fail(ErrorCode::SCHEMA_ERROR,
           "scripted entry needs 1..len(text) token probabilities: " + detail::entry_key_string(e));
    }
    for (double p : e.token_probs) detail::check_unit(p, "scripted token probability");
    if (!keys.emplace(detail::entry_key_string(e), true).second) {
      fail(ErrorCode::SCHEMA_ERROR, "duplicate scripted entry key " + detail::entry_key_string(e));
    }
  }
  if (b.fallback) {
    detail::check_unit(b.fallback->error_rate, "fallback error_rate");
    detail::check_unit(b.fallback->confidence_when_wrong, "fallback confidence_when_wrong");
    detail::check_unit(b.fallback->confidence_when_right, "fallback confidence_when_right");
    if (b.fallback->final_step < 1) fail(ErrorCode::SCHEMA_ERROR, "fallback final_step must be >= 1");
  }
}

/**
 * Text -> correctness over every entry of the suite. The scripted scorer
 * resolves a step by its exact text, so one text listed with two different
 * correctness values would make scoring ambiguous; that is a schema error.
 */
inline std::map<std::string, bool> scripted_correctness_index(const ScriptedSuite& suite) {
  std::map<std::string, bool> index;
  for (const ScriptedBehavior* b : {&suite.slm, &suite.llm}) {
    for (const ScriptedEntry& e : b->step_table) {
      auto [it, inserted] = index.emplace(e.text, e.is_correct);
      if (!inserted && it->second != e.is_correct) {
        fail(ErrorCode::SCHEMA_ERROR,
             "scripted text listed as both correct and incorrect: " + detail::entry_key_string(e));
      }
    }
  }
  return index;
}

inline void validate_scripted_suite(const ScriptedSuite& suite) {
  if (suite.name.empty()) fail(ErrorCode::SCHEMA_ERROR, "scripted suite needs a name");
  validate_scripted_behavior(suite.slm);
  validate_scripted_behavior(suite.llm);
  detail::check_unit(suite.scorer.score_correct, "scorer score_correct");
  detail::check_unit(suite.scorer.score_incorrect, "scorer score_incorrect");
  scripted_correctness_index(suite); // throws on cross-table conflicts
}

// =====================================================================
// Scripted backend
// =====================================================================

namespace detail {

// Exact partition of text into n non-empty chunks (n <= len), so that
// concatenating the synthesized tokens reproduces the text byte for byte.
inline std::vector<TokenProb> chunk_tokens(const std::string& text,
                                           const std::vector<double>& probs) {
  std::size_t n = probs.size();
  std::vector<TokenProb> out;
  out.reserve(n);
  std::size_t base = text.size() / n;
  std::size_t extra = text.size() % n;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t len = base + (i < extra ? 1 : 0);
    out.push_back(TokenProb{text.substr(pos, len), probs[i]});
    pos += len;
  }
  return out;
}

inline std::uint64_t fallback_draw_hash(const std::string& problem_id, int step_index,
                                        std::uint64_t seed) {
  std::uint64_t h = fnv1a64("fallback");
  h = fnv1a64(problem_id, h);
  h = fnv1a64_u64(static_cast<std::uint64_t>(step_index), h);
  h = fnv1a64_u64(seed, h);
  return h;
}

} // namespace detail

/**
 * Table-driven StepGenerator. A pure function of (problem_id, step_index,
 * prompt prefix, seed): temperature and max_tokens are accepted and ignored,
 * and repeated calls always reproduce the same response. Lookup misses fall
 * through to the fallback policy when one is configured, else raise
 * SCRIPT_TABLE_MISS.
 */
class ScriptedBackend : public StepGenerator {
 public:
  explicit ScriptedBackend(ScriptedBehavior behavior,
                           std::map<std::string, std::string> gold_answers = {})
      : behavior_(std::move(behavior)), gold_answers_(std::move(gold_answers)) {
    validate_scripted_behavior(behavior_);
    for (std::size_t i = 0; i < behavior_.step_table.size(); ++i) {
      const ScriptedEntry& e = behavior_.step_table[i];
      index_[{e.problem_id, e.step_index}].push_back(i);
    }
  }

  const ScriptedBehavior& behavior() const { return behavior_; }

  StepResponse generate(const StepRequest& request) override {
    std::uint64_t fp = prefix_fingerprint(request.prompt_prefix);
    if (const ScriptedEntry* e = find_entry(request.problem_id, request.step_index, fp, request.seed)) {
      StepResponse r;
      r.text = e->text;
      r.tokens = detail::chunk_tokens(e->text, e->token_probs);
      r.finish = e->finish;
      r.backend_token_count = static_cast<int>(e->token_probs.size());
      record_call(r.backend_token_count, 0);
      return r;
    }
    if (!behavior_.fallback) {
      fail(ErrorCode::SCRIPT_TABLE_MISS,
           "no scripted entry for " + request.problem_id + " step " +
               std::to_string(request.step_index) + " prefix " + hex64(fp) + " seed " +
               std::to_string(request.seed));
    }
    StepResponse r = synthesize_fallback(request);
    record_call(r.backend_token_count, 0);
    return r;
  }

 private:
  const ScriptedEntry* find_entry(const std::string& pid, int idx, std::uint64_t fp,
                                  std::uint64_t seed) const {
    auto it = index_.find({pid, idx});
    if (it == index_.end()) return nullptr;
    const ScriptedEntry* best = nullptr;
    int best_rank = -1;
    for (std::size_t i : it->second) {
      const ScriptedEntry& e = behavior_.step_table[i];
      if (e.prefix_fingerprint && *e.prefix_fingerprint != fp) continue;
      if (e.seed && *e.seed != seed) continue;
      int rank = (e.prefix_fingerprint ? 2 : 0) + (e.seed ? 1 : 0);
      if (rank > best_rank) {
        best_rank = rank;
        best = &e;
      }
    }
    return best;
  }

  StepResponse synthesize_fallback(const StepRequest& request) const {
    const FallbackPolicy& fb = *behavior_.fallback;
    std::uint64_t draw = detail::fallback_draw_hash(request.problem_id, request.step_index, request.seed);
    bool wrong = unit_interval(draw) < fb.error_rate;
    std::string tag = hex64(draw).substr(8);

    std::string text;
    if (request.step_index >= fb.final_step) {
      auto it = gold_answers_.find(request.problem_id);
      std::string answer = wrong ? "unresolved"
                           : it != gold_answers_.end() ? it->second
                                                       : "undetermined-" + request.problem_id;
      text = "## Step " + std::to_string(request.step_index) + ": Conclude (" + tag + ").\n" +
             "Therefore, the final answer is: $\\boxed{" + answer + "}$. I hope it is correct.";
      if (wrong) text += " " + std::string(kScriptedFlawMarker);
    } else {
      text = "## Step " + std::to_string(request.step_index) +
             ": Advance the working expression (" + tag + ").\n";
      text += wrong ? "A term is dropped here, so the running result no longer matches " +
                          std::string(kScriptedFlawMarker) + "."
                    : "The intermediate quantities carry forward consistently.";
    }

    double confidence = wrong ? fb.confidence_when_wrong : fb.confidence_when_right;
    std::size_t words = 1 + static_cast<std::size_t>(std::count(text.begin(), text.end(), ' '));
    std::size_t n_tokens = std::min(words, text.size());
    StepResponse r;
    r.text = text;
    r.tokens = detail::chunk_tokens(text, std::vector<double>(n_tokens, confidence));
    r.finish = FinishReason::STOP_SEQUENCE;
    r.backend_token_count = static_cast<int>(n_tokens);
    return r;
  }

  ScriptedBehavior behavior_;
  std::map<std::string, std::string> gold_answers_;
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> index_;
};

// =====================================================================
// Canonical JSON
// =====================================================================

inline void to_json(json& j, const ScriptedEntry& e) {
  j = json{{"problem_id", e.problem_id},
           {"step_index", e.step_index},
           {"text", e.text},
           {"token_probs", e.token_probs},
           {"is_correct", e.is_correct}};
  if (e.prefix_fingerprint) j["prefix_fingerprint"] = hex64(*e.prefix_fingerprint);
  if (e.seed) j["seed"] = *e.seed;
  if (e.finish != FinishReason::STOP_SEQUENCE) j["finish"] = to_name(e.finish);
}

inline void from_json(const json& j, ScriptedEntry& e) {
  j.at("problem_id").get_to(e.problem_id);
  j.at("step_index").get_to(e.step_index);
  j.at("text").get_to(e.text);
  e.token_probs = j.at("token_probs").get<std::vector<double>>();
  j.at("is_correct").get_to(e.is_correct);
  if (j.contains("prefix_fingerprint")) {
    std::string hexv = j.at("prefix_fingerprint").get<std::string>();
    if (hexv.size() != 16 || hexv.find_first_not_of("0123456789abcdef") != std::string::npos) {
      fail(ErrorCode::SCHEMA_ERROR, "prefix_fingerprint must be 16 lowercase hex digits");
    }
    e.prefix_fingerprint = std::stoull(hexv, nullptr, 16);
  } else {
    e.prefix_fingerprint = std::nullopt;
  }
  e.seed = j.contains("seed") ? std::optional<std::uint64_t>(j.at("seed").get<std::uint64_t>())
                              : std::nullopt;
  e.finish = j.contains("finish") ? finish_from_name(j.at("finish").get<std::string>())
                                  : FinishReason::STOP_SEQUENCE;
}

inline void to_json(json& j, const FallbackPolicy& f) {
  j = json{{"error_rate", f.error_rate},
           {"confidence_when_wrong", f.confidence_when_wrong},
           {"confidence_when_right", f.confidence_when_right},
           {"final_step", f.final_step}};
}

inline void from_json(const json& j, FallbackPolicy& f) {
  j.at("error_rate").get_to(f.error_rate);
  j.at("confidence_when_wrong").get_to(f.confidence_when_wrong);
  j.at("confidence_when_right").get_to(f.confidence_when_right);
  f.final_step = j.value("final_step", 3);
}

inline void to_json(json& j, const ScriptedBehavior& b) {
  j = json{{"role", to_name(b.role)}, {"step_table", b.step_table}};
  if (b.fallback) j["fallback"] = *b.fallback;
}

inline void from_json(const json& j, ScriptedBehavior& b) {
  b.role = backend_role_from_name(j.at("role").get<std::string>());
  b.step_table = j.at("step_table").get<std::vector<ScriptedEntry>>();
  b.fallback = j.contains("fallback") ? std::optional<FallbackPolicy>(j.at("fallback").get<FallbackPolicy>())
                                      : std::nullopt;
}

inline void to_json(json& j, const ScriptedScorerSpec& s) {
  j = json{{"score_correct", s.score_correct}, {"score_incorrect", s.score_incorrect}};
}

inline void from_json(const json& j, ScriptedScorerSpec& s) {
  s.score_correct = j.value("score_correct", 0.95);
  s.score_incorrect = j.value("score_incorrect", 0.30);
}

inline void to_json(json& j, const ScriptedSuite& s) {
  j = json{{"name", s.name}, {"slm", s.slm}, {"llm", s.llm}, {"scorer", s.scorer}};
}

inline void from_json(const json& j, ScriptedSuite& s) {
  j.at("name").get_to(s.name);
  j.at("slm").get_to(s.slm);
  j.at("llm").get_to(s.llm);
  s.scorer = j.contains("scorer") ? j.at("scorer").get<ScriptedScorerSpec>() : ScriptedScorerSpec{};
}

} // namespace scaffold
