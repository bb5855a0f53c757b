#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <iterator>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scaffold/backends.hpp"
#include "scaffold/controller.hpp"
#include "scaffold/core.hpp"
#include "scaffold/datasets.hpp"
#include "scaffold/errors.hpp"
#include "scaffold/evaluation.hpp"
#include "scaffold/hashing.hpp"
#include "scaffold/http.hpp"
#include "scaffold/prompt.hpp"
#include "scaffold/scoring.hpp"
#include "scaffold/scripted.hpp"
#include "scaffold/search.hpp"

namespace scaffold {

using nlohmann::json;

// ============================================================================
// Run configuration
// ============================================================================

enum class BackendMode { SCRIPTED, HTTP };

inline std::string_view to_name(BackendMode m) {
  return m == BackendMode::SCRIPTED ? "scripted" : "http";
}

inline BackendMode backend_mode_from_name(std::string_view s) {
  if (s == "scripted") return BackendMode::SCRIPTED;
  if (s == "http") return BackendMode::HTTP;
  fail(ErrorCode::CONFIG_INVALID, "backends.mode: unknown value \"" + std::string(s) + "\"");
}

/**
 * Where steps come from. Scripted mode replays a fixture suite; http mode
 * talks to live completion endpoints. Secrets never appear here: specs name
 * the environment variable that holds the key, not the key itself.
 */
struct BackendSetup {
  BackendMode mode = BackendMode::SCRIPTED;
  std::string scripted_suite; // fixture path, scripted mode (or scripted scorer)
  std::optional<BackendSpec> slm;
  std::optional<BackendSpec> llm;
  std::optional<BackendSpec> prm;

  bool operator==(const BackendSetup&) const = default;
};

/**
 * One experiment: a dataset, a search configuration, execution knobs, and
 * backends. Mirrors the config file and flag surface one to one.
 */
struct RunConfig {
  std::string dataset;
  std::string output_dir; // where artifacts land; not part of the run's identity
  SearchConfig search;
  int workers = 1;
  int repeats = 1;
  int limit = 0; // 0 = whole dataset
  BackendSetup backends;

  // output_dir is excluded: two runs of the same experiment written to
  // different places are the same run.
  bool operator==(const RunConfig& o) const {
    return dataset == o.dataset && search == o.search && workers == o.workers &&
           repeats == o.repeats && limit == o.limit && backends == o.backends;
  }
};

// Repeats are whole-run reruns under shifted seeds, not extra samples inside
// one run. The stride keeps repeat seed ranges disjoint from Best-of-N and
// beam lane offsets, which only ever add small k to the base seed.
inline constexpr std::uint64_t kRepeatSeedStride = 1000003;
inline constexpr std::string_view kSeedInterpretation = "whole-run-seeds";

inline std::uint64_t repeat_seed(std::uint64_t base, int repeat) {
  return base + kRepeatSeedStride * static_cast<std::uint64_t>(repeat);
}

inline void to_json(json& j, const BackendSetup& b) {
  j = json{{"mode", std::string(to_name(b.mode))}};
  if (!b.scripted_suite.empty()) j["scripted_suite"] = b.scripted_suite;
  if (b.slm) j["slm"] = *b.slm;
  if (b.llm) j["llm"] = *b.llm;
  if (b.prm) j["prm"] = *b.prm;
}

inline void from_json(const json& j, BackendSetup& b) {
  static const std::set<std::string> known = {"mode", "scripted_suite", "slm", "llm", "prm"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) {
      fail(ErrorCode::CONFIG_INVALID, "backends: unknown key \"" + key + "\"");
    }
  }
  b = BackendSetup{};
  if (j.contains("mode")) b.mode = backend_mode_from_name(j.at("mode").get<std::string>());
  if (j.contains("scripted_suite")) j.at("scripted_suite").get_to(b.scripted_suite);
  if (j.contains("slm")) b.slm = j.at("slm").get<BackendSpec>();
  if (j.contains("llm")) b.llm = j.at("llm").get<BackendSpec>();
  if (j.contains("prm")) b.prm = j.at("prm").get<BackendSpec>();
}

// output_dir is deliberately absent from the canonical form: it says where a
// run landed, not what the run was, and keeping it out lets records from
// different directories compare byte for byte.
inline void to_json(json& j, const RunConfig& c) {
  j = json{{"dataset", c.dataset},
           {"strategy", std::string(to_name(c.search.strategy))},
           {"n", c.search.n},
           {"m", c.search.beam_width_m},
           {"tau", c.search.threshold_tau},
           {"scorer", std::string(to_name(c.search.scorer))},
           {"temperature", c.search.temperature},
           {"l_max", c.search.l_max},
           {"max_steps", c.search.max_steps},
           {"aggregation", std::string(to_name(c.search.aggregation))},
           {"score_aggregation", std::string(to_name(c.search.score_aggregation))},
           {"seed", c.search.seed},
           {"workers", c.workers},
           {"repeats", c.repeats},
           {"limit", c.limit},
           {"backends", c.backends}};
}

/**
 * Strict config parsing: unknown keys are rejected by name, and tau falls
 * back to the scorer-appropriate default when absent. Validation of the
 * embedded search parameters happens in validate_run_config.
 */
inline void from_json(const json& j, RunConfig& c) {
  static const std::set<std::string> known = {
      "dataset", "output_dir", "strategy", "n", "m", "tau", "scorer", "temperature",
      "l_max", "max_steps", "aggregation", "score_aggregation", "seed", "workers",
      "repeats", "limit", "backends"};
  if (!j.is_object()) fail(ErrorCode::CONFIG_INVALID, "run config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) fail(ErrorCode::CONFIG_INVALID, "unknown key \"" + key + "\"");
  }
  c = RunConfig{};
  if (j.contains("dataset")) j.at("dataset").get_to(c.dataset);
  if (j.contains("output_dir")) j.at("output_dir").get_to(c.output_dir);
  if (j.contains("strategy")) c.search.strategy = strategy_from_name(j.at("strategy").get<std::string>());
  if (j.contains("n")) j.at("n").get_to(c.search.n);
  if (j.contains("m")) j.at("m").get_to(c.search.beam_width_m);
  if (j.contains("scorer")) c.search.scorer = scorer_from_name(j.at("scorer").get<std::string>());
  c.search.threshold_tau = j.contains("tau") ? j.at("tau").get<double>()
                                             : default_threshold_tau(c.search.scorer);
  if (j.contains("temperature")) j.at("temperature").get_to(c.search.temperature);
  if (j.contains("l_max")) j.at("l_max").get_to(c.search.l_max);
  if (j.contains("max_steps")) j.at("max_steps").get_to(c.search.max_steps);
  if (j.contains("aggregation")) c.search.aggregation = aggregation_from_name(j.at("aggregation").get<std::string>());
  if (j.contains("score_aggregation")) c.search.score_aggregation = score_aggregation_from_name(j.at("score_aggregation").get<std::string>());
  if (j.contains("seed")) j.at("seed").get_to(c.search.seed);
  if (j.contains("workers")) j.at("workers").get_to(c.workers);
  if (j.contains("repeats")) j.at("repeats").get_to(c.repeats);
  if (j.contains("limit")) j.at("limit").get_to(c.limit);
  if (j.contains("backends")) j.at("backends").get_to(c.backends);
}

inline void validate_run_config(const RunConfig& c) {
  if (c.dataset.empty()) fail(ErrorCode::CONFIG_INVALID, "dataset: required");
  if (c.output_dir.empty()) fail(ErrorCode::CONFIG_INVALID, "output_dir: required");
  if (c.workers < 1) fail(ErrorCode::CONFIG_INVALID, "workers: must be >= 1");
  if (c.repeats < 1) fail(ErrorCode::CONFIG_INVALID, "repeats: must be >= 1");
  if (c.limit < 0) fail(ErrorCode::CONFIG_INVALID, "limit: must be >= 0");
  validate_config(c.search);
  if (c.backends.mode == BackendMode::SCRIPTED && c.backends.scripted_suite.empty()) {
    fail(ErrorCode::CONFIG_INVALID, "backends.scripted_suite: required in scripted mode");
  }
  if (c.backends.mode == BackendMode::HTTP) {
    if (!c.backends.slm) fail(ErrorCode::CONFIG_INVALID, "backends.slm: required in http mode");
    if (!c.backends.llm) fail(ErrorCode::CONFIG_INVALID, "backends.llm: required in http mode");
  }
  if (c.search.scorer == ScorerKind::PRM && !c.backends.prm) {
    fail(ErrorCode::CONFIG_INVALID, "backends.prm: required when scorer is PRM");
  }
  if (c.search.scorer == ScorerKind::SCRIPTED && c.backends.scripted_suite.empty()) {
    fail(ErrorCode::CONFIG_INVALID,
         "backends.scripted_suite: required when scorer is SCRIPTED");
  }
}

inline RunConfig parse_run_config(const std::string& bytes) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::exception& e) {
    fail(ErrorCode::CONFIG_INVALID, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c = j.get<RunConfig>();
  validate_run_config(c);
  return c;
}

// ============================================================================
// Per-problem results
// ============================================================================

struct ProblemFailure {
  std::string code;
  std::string detail;

  bool operator==(const ProblemFailure&) const = default;
};

/**
 * The outcome of one (problem, repeat) unit: every final trajectory the
 * strategy produced, the voted answer, correctness against gold, metrics,
 * and the step-level event log. Failed units carry an error instead and
 * count as incorrect.
 */
struct ProblemResult {
  std::string problem_id;
  int repeat = 0;
  std::string gold_answer;
  std::vector<Trajectory> trajectories;
  std::optional<std::string> chosen_answer;
  bool correct = false;
  InterventionMetrics metrics;
  std::vector<GenerationEvent> events;
  std::optional<ProblemFailure> error;

  bool operator==(const ProblemResult&) const = default;
};

inline void to_json(json& j, const ProblemFailure& f) {
  j = json{{"code", f.code}, {"detail", f.detail}};
}

inline void from_json(const json& j, ProblemFailure& f) {
  j.at("code").get_to(f.code);
  j.at("detail").get_to(f.detail);
}

inline void to_json(json& j, const ProblemResult& r) {
  j = json{{"problem_id", r.problem_id},
           {"repeat", r.repeat},
           {"gold_answer", r.gold_answer},
           {"trajectories", r.trajectories},
           {"correct", r.correct},
           {"metrics", r.metrics},
           {"events", r.events}};
  if (r.chosen_answer) j["chosen_answer"] = *r.chosen_answer;
  if (r.error) j["error"] = *r.error;
}

inline void from_json(const json& j, ProblemResult& r) {
  j.at("problem_id").get_to(r.problem_id);
  j.at("repeat").get_to(r.repeat);
  j.at("gold_answer").get_to(r.gold_answer);
  r.trajectories = j.at("trajectories").get<std::vector<Trajectory>>();
  r.chosen_answer = j.contains("chosen_answer")
                        ? std::optional<std::string>(j.at("chosen_answer").get<std::string>())
                        : std::nullopt;
  j.at("correct").get_to(r.correct);
  r.metrics = j.at("metrics").get<InterventionMetrics>();
  r.events = j.at("events").get<std::vector<GenerationEvent>>();
  r.error = j.contains("error") ? std::optional<ProblemFailure>(j.at("error").get<ProblemFailure>())
                                : std::nullopt;
}

/**
 * Picks the answer a set of final trajectories agrees on. WEIGHTED and
 * MAJORITY vote over extracted answers; BEST_SCORE takes the answer of the
 * highest-scoring trajectory that produced one (earlier trajectory on exact
 * ties). NONE when no trajectory produced an answer.
 */
inline std::optional<std::string> choose_answer(const std::vector<Trajectory>& finals,
                                                Aggregation aggregation) {
  if (aggregation == Aggregation::BEST_SCORE) {
    const Trajectory* best = nullptr;
    for (const Trajectory& t : finals) {
      if (!t.extracted_answer) continue;
      if (!best || t.aggregate_score.value_or(0.0) > best->aggregate_score.value_or(0.0)) {
        best = &t;
      }
    }
    return best ? best->extracted_answer : std::nullopt;
  }
  std::vector<AggregationInput> inputs;
  inputs.reserve(finals.size());
  for (const Trajectory& t : finals) {
    inputs.push_back(AggregationInput{t.extracted_answer, t.aggregate_score.value_or(0.0)});
  }
  return aggregation == Aggregation::WEIGHTED ? weighted_at_n(inputs) : majority_at_n(inputs);
}

// ============================================================================
// Rollups
// ============================================================================

struct RunRollups {
  int problems = 0; // result rows, errored included
  int failures = 0;
  int correct = 0;
  double accuracy = 0.0; // correct / rows; errored rows count as incorrect
  double mean_corrected_step_ratio = 0.0;  // over non-errored rows
  double mean_corrected_token_ratio = 0.0;
  double mean_slm_tokens = 0.0;
  double mean_llm_tokens = 0.0;
  double mean_llm_tokens_pruned = 0.0;
  long long slm_tokens_total = 0;
  long long llm_tokens_total = 0;
  long long llm_tokens_pruned_total = 0;
  std::map<int, LevelAggregate> per_level; // levelless problems are skipped

  bool operator==(const RunRollups&) const = default;
};

inline void to_json(json& j, const RunRollups& r) {
  json levels = json::object();
  for (const auto& [level, agg] : r.per_level) levels[std::to_string(level)] = agg;
  j = json{{"problems", r.problems},
           {"failures", r.failures},
           {"correct", r.correct},
           {"accuracy", r.accuracy},
           {"mean_corrected_step_ratio", r.mean_corrected_step_ratio},
           {"mean_corrected_token_ratio", r.mean_corrected_token_ratio},
           {"mean_slm_tokens", r.mean_slm_tokens},
           {"mean_llm_tokens", r.mean_llm_tokens},
           {"mean_llm_tokens_pruned", r.mean_llm_tokens_pruned},
           {"slm_tokens_total", r.slm_tokens_total},
           {"llm_tokens_total", r.llm_tokens_total},
           {"llm_tokens_pruned_total", r.llm_tokens_pruned_total},
           {"per_level", levels}};
}

inline void from_json(const json& j, RunRollups& r) {
  j.at("problems").get_to(r.problems);
  j.at("failures").get_to(r.failures);
  j.at("correct").get_to(r.correct);
  j.at("accuracy").get_to(r.accuracy);
  j.at("mean_corrected_step_ratio").get_to(r.mean_corrected_step_ratio);
  j.at("mean_corrected_token_ratio").get_to(r.mean_corrected_token_ratio);
  j.at("mean_slm_tokens").get_to(r.mean_slm_tokens);
  j.at("mean_llm_tokens").get_to(r.mean_llm_tokens);
  j.at("mean_llm_tokens_pruned").get_to(r.mean_llm_tokens_pruned);
  j.at("slm_tokens_total").get_to(r.slm_tokens_total);
  j.at("llm_tokens_total").get_to(r.llm_tokens_total);
  j.at("llm_tokens_pruned_total").get_to(r.llm_tokens_pruned_total);
  r.per_level.clear();
  for (const auto& [key, value] : j.at("per_level").items()) {
    r.per_level[std::stoi(key)] = value.get<LevelAggregate>();
  }
}

/** Aggregates result rows; levels come from the problem list. */
inline RunRollups compute_rollups(const std::vector<ProblemResult>& results,
                                  const std::vector<Problem>& problems) {
  std::map<std::string, std::optional<int>> level_of;
  for (const Problem& p : problems) level_of[p.id] = p.level;

  RunRollups r;
  r.problems = static_cast<int>(results.size());

  struct LevelSums {
    int rows = 0, correct = 0, measured = 0;
    double step_ratio = 0, token_ratio = 0, llm = 0, llm_pruned = 0;
  };
  std::map<int, LevelSums> by_level;

  int measured = 0;
  double step_ratio_sum = 0, token_ratio_sum = 0;
  double slm_sum = 0, llm_sum = 0, pruned_sum = 0;
  for (const ProblemResult& row : results) {
    if (row.correct) ++r.correct;
    if (row.error) {
      ++r.failures;
    } else {
      ++measured;
      step_ratio_sum += row.metrics.corrected_step_ratio;
      token_ratio_sum += row.metrics.corrected_token_ratio;
      slm_sum += static_cast<double>(row.metrics.slm_tokens);
      llm_sum += static_cast<double>(row.metrics.llm_tokens);
      pruned_sum += static_cast<double>(row.metrics.llm_tokens_pruned);
      r.slm_tokens_total += row.metrics.slm_tokens;
      r.llm_tokens_total += row.metrics.llm_tokens;
      r.llm_tokens_pruned_total += row.metrics.llm_tokens_pruned;
    }
    auto lv = level_of.find(row.problem_id);
    if (lv != level_of.end() && lv->second) {
      LevelSums& s = by_level[*lv->second];
      ++s.rows;
      if (row.correct) ++s.correct;
      if (!row.error) {
        ++s.measured;
        s.step_ratio += row.metrics.corrected_step_ratio;
        s.token_ratio += row.metrics.corrected_token_ratio;
        s.llm += static_cast<double>(row.metrics.llm_tokens);
        s.llm_pruned += static_cast<double>(row.metrics.llm_tokens_pruned);
      }
    }
  }
  if (r.problems > 0) r.accuracy = static_cast<double>(r.correct) / r.problems;
  if (measured > 0) {
    r.mean_corrected_step_ratio = step_ratio_sum / measured;
    r.mean_corrected_token_ratio = token_ratio_sum / measured;
    r.mean_slm_tokens = slm_sum / measured;
    r.mean_llm_tokens = llm_sum / measured;
    r.mean_llm_tokens_pruned = pruned_sum / measured;
  }
  for (const auto& [level, s] : by_level) {
    LevelAggregate agg;
    agg.count = s.rows;
    agg.accuracy = s.rows > 0 ? static_cast<double>(s.correct) / s.rows : 0.0;
    if (s.measured > 0) {
      agg.mean_corrected_step_ratio = s.step_ratio / s.measured;
      agg.mean_corrected_token_ratio = s.token_ratio / s.measured;
      agg.mean_llm_tokens = s.llm / s.measured;
      agg.mean_llm_tokens_pruned = s.llm_pruned / s.measured;
    }
    r.per_level[level] = agg;
  }
  return r;
}

// ============================================================================
// Run record
// ============================================================================

/**
 * The complete, reproducible account of one run. Canonical serialization
 * (to_json) holds everything except wall-clock timestamps, which live in the
 * meta sidecar, so identical inputs yield byte-identical records and equal
 * content hashes.
 */
struct RunRecord {
  std::string run_id;
  RunConfig config;
  std::string config_content_hash; // hash of the config source bytes as given
  std::vector<BackendSpec> backend_specs;
  DatasetManifest dataset_manifest;
  std::string prompt_hash;
  std::string seed_interpretation = std::string(kSeedInterpretation);
  std::vector<ProblemResult> per_problem;
  RunRollups rollups;
  std::string started_at;  // meta only, never part of the canonical record
  std::string finished_at; // meta only

  bool operator==(const RunRecord& o) const {
    return run_id == o.run_id && config == o.config &&
           config_content_hash == o.config_content_hash && backend_specs == o.backend_specs &&
           dataset_manifest == o.dataset_manifest && prompt_hash == o.prompt_hash &&
           seed_interpretation == o.seed_interpretation && per_problem == o.per_problem &&
           rollups == o.rollups;
  }
};

inline void to_json(json& j, const RunRecord& r) {
  j = json{{"run_id", r.run_id},
           {"config", r.config},
           {"config_content_hash", r.config_content_hash},
           {"backend_specs", r.backend_specs},
           {"dataset_manifest", r.dataset_manifest},
           {"prompt_hash", r.prompt_hash},
           {"seed_interpretation", r.seed_interpretation},
           {"per_problem", r.per_problem},
           {"rollups", r.rollups}};
}

inline void from_json(const json& j, RunRecord& r) {
  j.at("run_id").get_to(r.run_id);
  r.config = j.at("config").get<RunConfig>();
  j.at("config_content_hash").get_to(r.config_content_hash);
  r.backend_specs = j.at("backend_specs").get<std::vector<BackendSpec>>();
  r.dataset_manifest = j.at("dataset_manifest").get<DatasetManifest>();
  j.at("prompt_hash").get_to(r.prompt_hash);
  j.at("seed_interpretation").get_to(r.seed_interpretation);
  r.per_problem = j.at("per_problem").get<std::vector<ProblemResult>>();
  r.rollups = j.at("rollups").get<RunRollups>();
  r.started_at.clear();
  r.finished_at.clear();
}

inline std::string canonical_record_text(const RunRecord& r) {
  json j = r;
  return j.dump(2) + "\n";
}

inline std::string record_content_hash(const RunRecord& r) {
  return hex64(fnv1a64(canonical_record_text(r)));
}

inline std::string derive_run_id(const RunConfig& config, const DatasetManifest& manifest) {
  json c = config;
  return "run-" + hex64(fnv1a64(c.dump() + ":" + manifest.content_hash));
}

// ============================================================================
// Backend bundle
// ============================================================================

/** Live handles behind one run: generators, scorer, and spec echoes. */
struct BackendBundle {
  std::shared_ptr<StepGenerator> slm;
  std::shared_ptr<StepGenerator> llm;
  Scorer scorer;
  std::shared_ptr<HttpPrmClient> prm;
  std::vector<BackendSpec> specs;
};

inline BackendBundle make_backends(const RunConfig& config, const std::vector<Problem>& problems) {
  BackendBundle bundle;

  std::optional<ScriptedSuite> suite;
  if (!config.backends.scripted_suite.empty()) {
    suite = load_scripted_suite(config.backends.scripted_suite, problems);
  }

  if (config.backends.mode == BackendMode::SCRIPTED) {
    std::map<std::string, std::string> gold;
    for (const Problem& p : problems) gold[p.id] = p.gold_answer;
    bundle.slm = std::make_shared<ScriptedBackend>(suite->slm, gold);
    bundle.llm = std::make_shared<ScriptedBackend>(suite->llm, gold);
  } else {
    bundle.slm = std::make_shared<HttpCompletionClient>(*config.backends.slm);
    bundle.llm = std::make_shared<HttpCompletionClient>(*config.backends.llm);
    bundle.specs.push_back(*config.backends.slm);
    bundle.specs.push_back(*config.backends.llm);
  }

  switch (config.search.scorer) {
    case ScorerKind::TLC:
      bundle.scorer = make_tlc_scorer();
      break;
    case ScorerKind::SCRIPTED:
      bundle.scorer = make_scripted_scorer(*suite);
      break;
    case ScorerKind::PRM:
      bundle.prm = std::make_shared<HttpPrmClient>(*config.backends.prm);
      bundle.scorer = make_prm_scorer(bundle.prm);
      bundle.specs.push_back(*config.backends.prm);
      break;
  }
  return bundle;
}

// ============================================================================
// Execution
// ============================================================================

/** Runs one (problem, repeat) unit under its shifted seed. */
inline ProblemResult run_problem(const Problem& problem, const RunConfig& config, int repeat,
                                 const BackendBundle& bundle) {
  ProblemResult row;
  row.problem_id = problem.id;
  row.repeat = repeat;
  row.gold_answer = problem.gold_answer;

  SearchConfig search = config.search;
  search.seed = repeat_seed(config.search.seed, repeat);

  try {
    TokenLedger ledger;
    switch (search.strategy) {
      case Strategy::SINGLE: {
        GenerationOutcome one = smart_generate(problem, search, *bundle.slm, *bundle.llm, bundle.scorer);
        row.trajectories.push_back(one.trajectory);
        row.events = one.events;
        ledger = TokenLedger{one.slm_tokens_total, one.llm_tokens_total};
        break;
      }
      case Strategy::BEST_OF_N: {
        BestOfNOutcome bon = best_of_n(problem, search, *bundle.slm, *bundle.llm, bundle.scorer);
        row.trajectories = collect_trajectories(bon);
        for (const GenerationOutcome& one : bon.outcomes) {
          row.events.insert(row.events.end(), one.events.begin(), one.events.end());
        }
        ledger = TokenLedger{bon.slm_tokens_total, bon.llm_tokens_total};
        break;
      }
      case Strategy::BEAM_SEARCH: {
        BeamOutcome beams = beam_search(problem, search, *bundle.slm, *bundle.llm, bundle.scorer);
        row.trajectories = beams.finals;
        row.events = beams.events;
        ledger = TokenLedger{beams.slm_tokens_total, beams.llm_tokens_total};
        break;
      }
    }
    row.metrics = intervention_metrics(row.trajectories, search.strategy, ledger);
    row.chosen_answer = choose_answer(row.trajectories, search.aggregation);
    row.correct = judge(row.chosen_answer, problem.gold_answer);
  } catch (const Error& e) {
    row.trajectories.clear();
    row.events.clear();
    row.metrics = InterventionMetrics{};
    row.chosen_answer.reset();
    row.correct = false;
    row.error = ProblemFailure{std::string(error_code_name(e.code())), e.what()};
  }
  return row;
}

struct RunPaths {
  std::string config;
  std::string problems;
  std::string record;
  std::string meta;
};

inline RunPaths run_output_paths(const std::string& output_dir) {
  namespace fs = std::filesystem;
  fs::path d(output_dir);
  return RunPaths{(d / "config.json").string(), (d / "problems.jsonl").string(),
                  (d / "record.json").string(), (d / "meta.json").string()};
}

namespace detail {

inline std::string iso_utc_now() {
  std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm parts{};
  gmtime_r(&now, &parts);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &parts);
  return buf;
}

// Reads prior results from an interrupted run. A torn or corrupt line ends
// the usable prefix: everything from it on is dropped and rewritten, because
// those units rerun deterministically anyway.
inline std::vector<ProblemResult> load_result_prefix(const std::string& path) {
  std::vector<ProblemResult> prior;
  if (!std::filesystem::exists(path)) return prior;
  const std::string bytes = read_text_file(path);
  std::istringstream lines(bytes);
  std::string line;
  bool torn = false;
  std::string kept;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      prior.push_back(json::parse(line).get<ProblemResult>());
      kept += line;
      kept += '\n';
    } catch (const std::exception&) {
      torn = true;
      break;
    }
  }
  // A final line without its newline is also torn: it may be mid-write.
  if (!torn && !bytes.empty() && bytes.back() != '\n') {
    torn = true;
  }
  if (torn) write_text_file(path, kept);
  return prior;
}

} // namespace detail

/**
 * Executes a run end to end: loads the dataset, replays any results already
 * persisted in output_dir (crash resume at problem granularity), runs the
 * remaining (repeat, problem) units in order with up to config.workers in
 * flight, and writes config.json, problems.jsonl, record.json and meta.json.
 *
 * config_source holds the exact config file bytes for the content-hash echo;
 * programmatic callers pass the canonical dump of the config they built.
 */
inline RunRecord run_experiment(const RunConfig& config, const std::string& config_source) {
  validate_run_config(config);

  RunRecord record;
  record.started_at = detail::iso_utc_now();
  record.config = config;
  record.config_content_hash = hex64(fnv1a64(config_source));
  record.prompt_hash = prompt_template_hash();

  Dataset dataset = load_problems(config.dataset);
  std::vector<Problem> problems = dataset.problems;
  if (config.limit > 0 && static_cast<int>(problems.size()) > config.limit) {
    problems.resize(static_cast<std::size_t>(config.limit));
  }
  record.dataset_manifest = dataset.manifest;
  record.run_id = derive_run_id(config, dataset.manifest);

  // Backends are built against the whole dataset so a scripted suite keyed
  // to problems beyond the limit still validates; the run covers the prefix.
  BackendBundle bundle = make_backends(config, dataset.problems);
  record.backend_specs = bundle.specs;

  const RunPaths paths = run_output_paths(config.output_dir);
  std::filesystem::create_directories(config.output_dir);

  // Config echo guards resume: an output dir only ever serves one config.
  const std::string config_text = json(config).dump(2) + "\n";
  if (std::filesystem::exists(paths.config)) {
    if (read_text_file(paths.config) != config_text) {
      fail(ErrorCode::CONFIG_INVALID,
           "output_dir holds a different run's config: " + paths.config);
    }
  } else {
    write_text_file(paths.config, config_text);
  }

  // Unit order is fixed: repeats outer, dataset order inner. Resume replays
  // the persisted prefix and picks up at the first missing unit.
  struct Unit {
    int repeat;
    std::size_t problem_index;
  };
  std::vector<Unit> units;
  for (int r = 0; r < config.repeats; ++r) {
    for (std::size_t p = 0; p < problems.size(); ++p) units.push_back(Unit{r, p});
  }

  std::vector<ProblemResult> results = detail::load_result_prefix(paths.problems);
  if (results.size() > units.size()) {
    fail(ErrorCode::CONFIG_INVALID, "output_dir holds more results than this run has units");
  }
  for (std::size_t i = 0; i < results.size(); ++i) {
    const Unit& u = units[i];
    if (results[i].problem_id != problems[u.problem_index].id || results[i].repeat != u.repeat) {
      fail(ErrorCode::CONFIG_INVALID,
           "persisted results do not line up with this run's unit order; use a fresh output_dir");
    }
  }
  const std::size_t resumed = results.size();

  std::ofstream sink(paths.problems, std::ios::binary | std::ios::app);
  if (!sink) fail(ErrorCode::IO_ERROR, "cannot open for append: " + paths.problems);
  auto persist = [&](const ProblemResult& row) {
    sink << json(row).dump() << '\n';
    sink.flush();
  };

  const int workers = config.workers;
  for (std::size_t start = resumed; start < units.size(); start += static_cast<std::size_t>(workers)) {
    const std::size_t stop = std::min(units.size(), start + static_cast<std::size_t>(workers));
    if (workers == 1) {
      const Unit& u = units[start];
      ProblemResult row = run_problem(problems[u.problem_index], config, u.repeat, bundle);
      persist(row);
      results.push_back(std::move(row));
      continue;
    }
    std::vector<std::future<ProblemResult>> batch;
    for (std::size_t i = start; i < stop; ++i) {
      const Unit& u = units[i];
      batch.push_back(std::async(std::launch::async, [&, u] {
        return run_problem(problems[u.problem_index], config, u.repeat, bundle);
      }));
    }
    for (auto& f : batch) {
      ProblemResult row = f.get();
      persist(row);
      results.push_back(std::move(row));
    }
  }
  sink.close();

  record.per_problem = std::move(results);
  record.rollups = compute_rollups(record.per_problem, problems);

  // Double-entry audit: what the problems report spending must equal what
  // the backend clients actually served. Only meaningful for a fresh,
  // failure-free run; resumed prefixes predate this process's counters.
  if (resumed == 0 && record.rollups.failures == 0) {
    const long long client_total = bundle.slm->counters().tokens + bundle.llm->counters().tokens;
    const long long recorded_total = record.rollups.slm_tokens_total +
                                     record.rollups.llm_tokens_total +
                                     record.rollups.llm_tokens_pruned_total;
    if (client_total != recorded_total) {
      fail(ErrorCode::INVARIANT_VIOLATION,
           "token accounting mismatch: clients served " + std::to_string(client_total) +
               ", records hold " + std::to_string(recorded_total));
    }
  }

  record.finished_at = detail::iso_utc_now();
  write_text_file(paths.record, canonical_record_text(record));
  json meta = {{"run_id", record.run_id},
               {"started_at", record.started_at},
               {"finished_at", record.finished_at},
               {"record_content_hash", record_content_hash(record)},
               {"resumed_units", resumed}};
  write_text_file(paths.meta, meta.dump(2) + "\n");
  return record;
}

inline RunRecord load_run_record(const std::string& output_dir) {
  const RunPaths paths = run_output_paths(output_dir);
  json j;
  try {
    j = json::parse(read_text_file(paths.record));
  } catch (const json::exception& e) {
    fail(ErrorCode::PARSE_ERROR, std::string("record.json: ") + e.what());
  }
  return j.get<RunRecord>();
}

// ============================================================================
// Reports
// ============================================================================

enum class ReportKind {
  SUMMARY,
  PARETO_CSV,
  LEVEL_TABLE,
  RATIO_HISTOGRAMS,
  TIMING_HISTOGRAM,
  REVIEW_MISMATCHES,
};

inline std::string_view to_name(ReportKind k) {
  switch (k) {
    case ReportKind::SUMMARY: return "summary";
    case ReportKind::PARETO_CSV: return "pareto_csv";
    case ReportKind::LEVEL_TABLE: return "level_table";
    case ReportKind::RATIO_HISTOGRAMS: return "ratio_histograms";
    case ReportKind::TIMING_HISTOGRAM: return "timing_histogram";
    case ReportKind::REVIEW_MISMATCHES: return "review_mismatches";
  }
  return "unknown";
}

inline ReportKind report_kind_from_name(std::string_view s) {
  if (s == "summary") return ReportKind::SUMMARY;
  if (s == "pareto_csv") return ReportKind::PARETO_CSV;
  if (s == "level_table") return ReportKind::LEVEL_TABLE;
  if (s == "ratio_histograms") return ReportKind::RATIO_HISTOGRAMS;
  if (s == "timing_histogram") return ReportKind::TIMING_HISTOGRAM;
  if (s == "review_mismatches") return ReportKind::REVIEW_MISMATCHES;
  fail(ErrorCode::CONFIG_INVALID, "unknown report kind \"" + std::string(s) + "\"");
}

namespace detail {

inline std::string fmt_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

inline std::string report_path(const std::string& out_dir, const std::string& file) {
  return (std::filesystem::path(out_dir) / file).string();
}

} // namespace detail

/**
 * Emits one deterministic report artifact for a finished record and returns
 * its path. level_table can compare against a reference run: relative
 * percentages are printed to two decimals (so equality tolerance is one unit
 * in the last printed decimal). Asking for relative output without a
 * reference is an error.
 */
inline std::string emit_report(const RunRecord& record, ReportKind kind,
                               const std::string& out_dir,
                               const RunRecord* reference = nullptr,
                               bool want_relative = false) {
  std::filesystem::create_directories(out_dir);
  const RunConfig& c = record.config;
  const RunRollups& roll = record.rollups;

  switch (kind) {
    case ReportKind::SUMMARY: {
      json j = {{"run_id", record.run_id},
                {"dataset", record.dataset_manifest.name},
                {"problems", roll.problems},
                {"failures", roll.failures},
                {"strategy", std::string(to_name(c.search.strategy))},
                {"n", c.search.n},
                {"m", c.search.beam_width_m},
                {"tau", c.search.threshold_tau},
                {"scorer", std::string(to_name(c.search.scorer))},
                {"accuracy", roll.accuracy},
                {"mean_corrected_step_ratio", roll.mean_corrected_step_ratio},
                {"mean_corrected_token_ratio", roll.mean_corrected_token_ratio},
                {"slm_tokens_total", roll.slm_tokens_total},
                {"llm_tokens_total", roll.llm_tokens_total},
                {"llm_tokens_pruned_total", roll.llm_tokens_pruned_total}};
      const std::string path = detail::report_path(out_dir, "summary.json");
      write_text_file(path, j.dump(2) + "\n");
      return path;
    }
    case ReportKind::PARETO_CSV: {
      std::string csv = "n,strategy,tau,accuracy,llm_tokens_mean,llm_tokens_pruned_mean\n";
      csv += std::to_string(c.search.n) + "," + std::string(to_name(c.search.strategy)) + "," +
             detail::fmt_fixed(c.search.threshold_tau, 4) + "," +
             detail::fmt_fixed(roll.accuracy, 6) + "," +
             detail::fmt_fixed(roll.mean_llm_tokens, 6) + "," +
             detail::fmt_fixed(roll.mean_llm_tokens_pruned, 6) + "\n";
      const std::string path = detail::report_path(out_dir, "pareto.csv");
      write_text_file(path, csv);
      return path;
    }
    case ReportKind::LEVEL_TABLE: {
      if (want_relative && !reference) {
        fail(ErrorCode::MISSING_REFERENCE, "relative level table needs a reference run");
      }
      const bool relative = reference != nullptr;
      std::string csv = relative ? "level,count,accuracy,reference_accuracy,relative_pct\n"
                                 : "level,count,accuracy\n";
      auto row = [&](const std::string& label, int count, double acc,
                     const LevelAggregate* ref) {
        csv += label + "," + std::to_string(count) + "," + detail::fmt_fixed(acc, 4);
        if (relative) {
          if (ref && ref->accuracy > 0.0) {
            csv += "," + detail::fmt_fixed(ref->accuracy, 4) + "," +
                   detail::fmt_fixed(100.0 * acc / ref->accuracy, 2);
          } else {
            csv += ",,";
          }
        }
        csv += "\n";
      };
      for (const auto& [level, agg] : roll.per_level) {
        const LevelAggregate* ref = nullptr;
        if (reference) {
          auto it = reference->rollups.per_level.find(level);
          if (it != reference->rollups.per_level.end()) ref = &it->second;
        }
        row(std::to_string(level), agg.count, agg.accuracy, ref);
      }
      // Overall row; the reference overall is synthesized from its rollups.
      LevelAggregate overall_ref;
      const LevelAggregate* overall_ref_ptr = nullptr;
      if (reference) {
        overall_ref.count = reference->rollups.problems;
        overall_ref.accuracy = reference->rollups.accuracy;
        overall_ref_ptr = &overall_ref;
      }
      row("all", roll.problems, roll.accuracy, overall_ref_ptr);
      const std::string path = detail::report_path(out_dir, "level_table.csv");
      write_text_file(path, csv);
      return path;
    }
    case ReportKind::RATIO_HISTOGRAMS: {
      constexpr int kBins = 20;
      int step_bins[kBins] = {};
      int token_bins[kBins] = {};
      auto bin_of = [&](double v) {
        int b = static_cast<int>(v * kBins);
        if (b < 0) b = 0;
        if (b >= kBins) b = kBins - 1; // ratio 1.0 lands in the last bin
        return b;
      };
      for (const ProblemResult& r : record.per_problem) {
        if (r.error) continue;
        ++step_bins[bin_of(r.metrics.corrected_step_ratio)];
        ++token_bins[bin_of(r.metrics.corrected_token_ratio)];
      }
      std::string csv = "bin_lo,bin_hi,corrected_step_ratio_count,corrected_token_ratio_count\n";
      for (int b = 0; b < kBins; ++b) {
        csv += detail::fmt_fixed(static_cast<double>(b) / kBins, 2) + "," +
               detail::fmt_fixed(static_cast<double>(b + 1) / kBins, 2) + "," +
               std::to_string(step_bins[b]) + "," + std::to_string(token_bins[b]) + "\n";
      }
      const std::string path = detail::report_path(out_dir, "ratio_histograms.csv");
      write_text_file(path, csv);
      return path;
    }
    case ReportKind::TIMING_HISTOGRAM: {
      // Diagnostic only: wall times are not persisted in the canonical
      // record, so a record loaded from disk shows every event at zero.
      static constexpr long long kEdges[] = {0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000};
      constexpr int kCount = static_cast<int>(std::size(kEdges));
      long long bins[kCount] = {};
      for (const ProblemResult& r : record.per_problem) {
        for (const GenerationEvent& e : r.events) {
          int b = 0;
          for (int i = kCount - 1; i >= 0; --i) {
            if (e.wall_ms >= kEdges[i]) {
              b = i;
              break;
            }
          }
          ++bins[b];
        }
      }
      std::string csv = "bin_lo_ms,bin_hi_ms,events\n";
      for (int b = 0; b < kCount; ++b) {
        csv += std::to_string(kEdges[b]) + ",";
        csv += (b + 1 < kCount) ? std::to_string(kEdges[b + 1]) : std::string("inf");
        csv += "," + std::to_string(bins[b]) + "\n";
      }
      const std::string path = detail::report_path(out_dir, "timing_histogram.csv");
      write_text_file(path, csv);
      return path;
    }
    case ReportKind::REVIEW_MISMATCHES: {
      // Wrong-but-answered rows, for manual audit of judging limitations
      // (syntactically different yet mathematically equal forms land here).
      std::string out;
      for (const ProblemResult& r : record.per_problem) {
        if (r.correct || !r.chosen_answer) continue;
        json j = {{"problem_id", r.problem_id},
                  {"repeat", r.repeat},
                  {"chosen_answer", *r.chosen_answer},
                  {"gold_answer", r.gold_answer}};
        out += j.dump();
        out += '\n';
      }
      const std::string path = detail::report_path(out_dir, "review_mismatches.jsonl");
      write_text_file(path, out);
      return path;
    }
  }
  fail(ErrorCode::CONFIG_INVALID, "unhandled report kind");
}

} // namespace scaffold
