#pragma once

// Fixture builders shared across the test binaries. Each builder returns
// plain library values (problems, scripted suites, configs) so tests can run
// them through any entry point: direct generation calls, the search
// strategies, or a full harness run over files on disk.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "scaffold/scaffold.hpp"

namespace fixtures {

using namespace scaffold;

inline Problem make_problem(std::string id, std::string statement, std::string gold,
                            std::optional<int> level = std::nullopt) {
  Problem p;
  p.id = std::move(id);
  p.statement = std::move(statement);
  p.gold_answer = std::move(gold);
  p.level = level;
  p.extra = nlohmann::json::object();
  return p;
}

inline std::string zero_pad(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

// ============================================================================
// Ladder fixture: three steps, the second always wrong for the small model
// ============================================================================
//
// Step 3 exists in two fingerprint-pinned variants, so the conclusion a
// problem reaches depends on whether step 2 was corrected: the honest prefix
// concludes with the gold answer, the flawed prefix with a wrong one. The
// scripted scorer sees 0.95 for correct steps and 0.30 for wrong drafts, so
// any threshold in (0.30, 0.95] corrects exactly step 2.

struct Ladder3 {
  std::vector<Problem> problems;
  ScriptedSuite suite;
};

namespace detail {

struct LadderTexts {
  std::string s1, s2_wrong, s2_fixed, s3_wrong, s3_right;
};

inline LadderTexts ladder_texts(int i, const std::string& gold, const std::string& wrong) {
  const std::string tag = zero_pad(i, 3);
  LadderTexts t;
  t.s1 = "## Step 1: Set up case " + tag + ".\nThe starting expression for case " + tag +
         " is laid out cleanly.";
  t.s2_wrong = "## Step 2: Combine the terms of case " + tag +
               ".\nA sign flips during the combination, so the running value drifts.";
  t.s2_fixed = "## Step 2: Combine the terms of case " + tag +
               " carefully.\nEvery term keeps its sign, so the running value stays right.";
  t.s3_wrong = "## Step 3: Conclude case " + tag +
               ".\nTherefore, the final answer is: $\\boxed{" + wrong +
               "}$. I hope it is correct.";
  t.s3_right = "## Step 3: Conclude case " + tag +
               ".\nTherefore, the final answer is: $\\boxed{" + gold +
               "}$. I hope it is correct.";
  return t;
}

inline ScriptedEntry ladder_entry(const std::string& id, int step, std::string text,
                                  bool correct, int prob_count,
                                  std::optional<std::uint64_t> fingerprint = std::nullopt) {
  ScriptedEntry e;
  e.problem_id = id;
  e.step_index = step;
  e.prefix_fingerprint = fingerprint;
  e.text = std::move(text);
  e.token_probs.assign(static_cast<std::size_t>(prob_count), correct ? 0.9 : 0.4);
  e.is_correct = correct;
  return e;
}

} // namespace detail

inline Ladder3 make_ladder3(int count) {
  Ladder3 out;
  out.suite.name = "ladder-3";
  for (int i = 0; i < count; ++i) {
    const std::string id = "ladder-" + zero_pad(i, 3);
    const std::string gold = std::to_string(3 * i + 5);
    const std::string wrong = std::to_string(3 * i + 6);
    Problem p = make_problem(id, "Compute the ladder value for case " + zero_pad(i, 3) + ".",
                             gold, (i % 5) + 1);
    p.subject = "fixture";

    detail::LadderTexts t = detail::ladder_texts(i, gold, wrong);
    const std::uint64_t fp_flawed =
        prefix_fingerprint(render_prompt(p.statement, {t.s1, t.s2_wrong}));
    const std::uint64_t fp_honest =
        prefix_fingerprint(render_prompt(p.statement, {t.s1, t.s2_fixed}));

    out.suite.slm.step_table.push_back(detail::ladder_entry(id, 1, t.s1, true, 7));
    out.suite.slm.step_table.push_back(detail::ladder_entry(id, 2, t.s2_wrong, false, 9));
    out.suite.slm.step_table.push_back(
        detail::ladder_entry(id, 3, t.s3_wrong, false, 8, fp_flawed));
    out.suite.slm.step_table.push_back(
        detail::ladder_entry(id, 3, t.s3_right, true, 8, fp_honest));

    out.suite.llm.step_table.push_back(detail::ladder_entry(id, 1, t.s1, true, 7));
    out.suite.llm.step_table.push_back(detail::ladder_entry(id, 2, t.s2_fixed, true, 11));
    out.suite.llm.step_table.push_back(
        detail::ladder_entry(id, 3, t.s3_right, true, 8, fp_honest));

    out.problems.push_back(std::move(p));
  }
  out.suite.llm.role = BackendRole::LLM;
  validate_scripted_suite(out.suite);
  return out;
}

/**
 * Fixture self-check: asserts the structural promises the acceptance tests
 * lean on, independent of how make_ladder3 happens to build them.
 */
inline void check_ladder3(const Ladder3& fx) {
  auto expect = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::INVARIANT_VIOLATION, "ladder fixture: " + what);
  };
  expect(fx.suite.scorer.score_correct == 0.95 && fx.suite.scorer.score_incorrect == 0.30,
         "scorer must map correct/incorrect to 0.95/0.30");
  for (const Problem& p : fx.problems) {
    int slm_steps[4] = {0, 0, 0, 0};
    bool slm_step2_wrong = true;
    bool honest_conclusion_seen = false;
    for (const ScriptedEntry& e : fx.suite.slm.step_table) {
      if (e.problem_id != p.id) continue;
      expect(e.step_index >= 1 && e.step_index <= 3, "step index out of range");
      ++slm_steps[e.step_index];
      if (e.step_index == 2 && e.is_correct) slm_step2_wrong = false;
      if (e.step_index == 3) {
        expect(contains_boxed(e.text), "conclusions must carry a boxed answer");
        if (e.is_correct) {
          honest_conclusion_seen = true;
          expect(extract_answer(e.text) == normalize_answer(p.gold_answer),
                 "honest conclusion must box the gold answer");
        } else {
          expect(extract_answer(e.text) != normalize_answer(p.gold_answer),
                 "flawed conclusion must not box the gold answer");
        }
      }
    }
    expect(slm_steps[1] == 1 && slm_steps[2] == 1 && slm_steps[3] == 2,
           "small model needs steps 1, 2 and both conclusion variants for " + p.id);
    expect(slm_step2_wrong, "step 2 must always be wrong for the small model");
    expect(honest_conclusion_seen, "missing honest conclusion for " + p.id);

    int llm_steps[4] = {0, 0, 0, 0};
    for (const ScriptedEntry& e : fx.suite.llm.step_table) {
      if (e.problem_id != p.id) continue;
      expect(e.is_correct, "large model steps are always correct in this fixture");
      ++llm_steps[e.step_index];
    }
    expect(llm_steps[1] == 1 && llm_steps[2] == 1 && llm_steps[3] == 1,
           "large model needs one entry per step for " + p.id);
  }
}

// ============================================================================
// Cost sweep fixture: fixed beam width, growing candidate counts
// ============================================================================
//
// Built so the large-model spend that survives into final beams is constant
// in N while Best-of-N spend grows linearly. Per lane: step 1 scores
// 0.8 - 0.001*lane (kept), step 2 scores 0.2 (always replaced; replacement
// has exactly llm_step_tokens tokens), step 3 boxes the gold answer with a
// score shaped so exactly one child per surviving parent is retained.

struct CostSweep {
  std::vector<Problem> problems;
  ScriptedSuite suite;
  int llm_step_tokens = 12;
  std::vector<int> n_values = {4, 8, 16};

  static std::uint64_t base_seed(int n) { return 1000ULL * static_cast<std::uint64_t>(n); }

  SearchConfig beam_config(int n) const {
    SearchConfig c;
    c.strategy = Strategy::BEAM_SEARCH;
    c.n = n;
    c.beam_width_m = 4;
    c.threshold_tau = 0.5;
    c.scorer = ScorerKind::TLC;
    c.aggregation = Aggregation::WEIGHTED;
    c.score_aggregation = ScoreAggregation::MIN;
    c.seed = base_seed(n);
    validate_config(c);
    return c;
  }

  SearchConfig bon_config(int n) const {
    SearchConfig c = beam_config(n);
    c.strategy = Strategy::BEST_OF_N;
    c.beam_width_m = 1;
    validate_config(c);
    return c;
  }
};

namespace detail {

inline ScriptedEntry sweep_entry(const std::string& id, int step, std::uint64_t seed,
                                 std::string text, int prob_count, double prob,
                                 bool correct) {
  ScriptedEntry e;
  e.problem_id = id;
  e.step_index = step;
  e.seed = seed;
  e.text = std::move(text);
  e.token_probs.assign(static_cast<std::size_t>(prob_count), prob);
  e.is_correct = correct;
  return e;
}

} // namespace detail

inline CostSweep make_cost_sweep(int problem_count) {
  CostSweep out;
  out.suite.name = "cost-sweep";
  out.suite.llm.role = BackendRole::LLM;
  for (int i = 0; i < problem_count; ++i) {
    const std::string id = "sweep-" + zero_pad(i, 3);
    const std::string gold = std::to_string(7 * i + 3);
    out.problems.push_back(make_problem(
        id, "Evaluate the sweep expression for case " + zero_pad(i, 3) + ".", gold,
        (i % 5) + 1));

    for (int n : out.n_values) {
      const int per_beam = n / 4;
      for (int lane = 0; lane < n; ++lane) {
        const std::uint64_t seed = CostSweep::base_seed(n) + static_cast<std::uint64_t>(lane);
        const std::string where =
            " for case " + zero_pad(i, 3) + " on lane " + std::to_string(lane) + " of the n" +
            std::to_string(n) + " sweep.";
        const double open_score = 0.8 - 0.001 * lane;

        out.suite.slm.step_table.push_back(detail::sweep_entry(
            id, 1, seed, "## Step 1: Open the expression" + where + "\nThe terms are grouped.",
            8, open_score, true));
        out.suite.slm.step_table.push_back(detail::sweep_entry(
            id, 2, seed,
            "## Step 2: Reduce the grouped terms" + where + "\nA factor is dropped here.", 9,
            0.2, false));
        out.suite.llm.step_table.push_back(detail::sweep_entry(
            id, 2, seed,
            "## Step 2: Reduce the grouped terms correctly" + where +
                "\nEvery factor is carried through.",
            out.llm_step_tokens, open_score, true));

        const int p = lane / per_beam;
        const int j = lane % per_beam;
        const double close_score = 0.89 - 0.01 * p - 0.1 * j;
        out.suite.slm.step_table.push_back(detail::sweep_entry(
            id, 3, seed,
            "## Step 3: Conclude" + where + "\nTherefore, the final answer is: $\\boxed{" +
                gold + "}$. I hope it is correct.",
            6, close_score, true));
      }
    }
  }
  validate_scripted_suite(out.suite);
  return out;
}

// ============================================================================
// Randomized beam fixtures for brute-force cross-checks
// ============================================================================
//
// Small random scripted trees (depth <= 3, n <= 4, m <= 2) with all-equal
// token probabilities drawn from a coarse grid, so ranking ties are common
// and the creation-order tie break gets exercised. Whitespace drafts, early
// EOS, token budgets and step budgets all appear at low rates.

struct RandomBeamFixture {
  Problem problem;
  ScriptedSuite suite;
  SearchConfig config;
};

inline RandomBeamFixture make_random_beam_fixture(std::uint64_t index) {
  std::mt19937_64 rng(0xBEEF0000ULL + index);
  auto pick = [&](int lo, int hi) { // inclusive
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
  };
  auto chance = [&](int percent) { return pick(1, 100) <= percent; };

  static const std::pair<int, int> kShapes[] = {{1, 1}, {2, 1}, {2, 2}, {3, 1}, {4, 1}, {4, 2}};
  const auto [n, m] = kShapes[rng() % std::size(kShapes)];

  RandomBeamFixture fx;
  fx.problem = make_problem("rnd-" + std::to_string(index),
                            "Random tree problem " + std::to_string(index) + ".", "1");
  fx.suite.name = "random-beam-" + std::to_string(index);
  fx.suite.llm.role = BackendRole::LLM;

  fx.config.strategy = Strategy::BEAM_SEARCH;
  fx.config.n = n;
  fx.config.beam_width_m = m;
  fx.config.threshold_tau = 0.7;
  fx.config.scorer = ScorerKind::TLC;
  fx.config.max_steps = chance(15) ? 2 : 3;
  fx.config.l_max = chance(20) ? 18 : 4096;
  fx.config.seed = 100000ULL + 1000ULL * index;
  static const ScoreAggregation kAggs[] = {ScoreAggregation::MIN, ScoreAggregation::LAST,
                                           ScoreAggregation::PRODUCT, ScoreAggregation::MEAN};
  fx.config.score_aggregation = kAggs[rng() % std::size(kAggs)];
  validate_config(fx.config);

  auto entry = [&](BackendRole role, int step, std::uint64_t seed) {
    ScriptedEntry e;
    e.problem_id = fx.problem.id;
    e.step_index = step;
    e.seed = seed;
    e.is_correct = true; // scorer is TLC; keep the text index conflict-free
    const std::string code = hex64(rng()).substr(8);
    const char* who = role == BackendRole::SLM ? "draft" : "fix";
    const int whitespace_pct = role == BackendRole::SLM ? 8 : 6;
    if (step >= 2 && chance(whitespace_pct)) {
      e.text = " ";
    } else if (step == 3 && chance(85)) {
      e.text = "Step three " + std::string(who) + " " + code + ": the answer $\\boxed{" +
               std::to_string(pick(0, 6)) + "}$ stands.";
    } else {
      e.text = "Step " + std::to_string(step) + " " + std::string(who) + " " + code +
               " keeps the chain moving.";
    }
    const int k = std::min<int>(pick(2, 9), static_cast<int>(e.text.size()));
    const double v = 0.05 * pick(1, 20);
    e.token_probs.assign(static_cast<std::size_t>(k), v);
    if (step < 3 && chance(10)) e.finish = FinishReason::EOS;
    return e;
  };

  for (int step = 1; step <= 3; ++step) {
    for (int lane = 0; lane < n; ++lane) {
      const std::uint64_t seed = fx.config.seed + static_cast<std::uint64_t>(lane);
      fx.suite.slm.step_table.push_back(entry(BackendRole::SLM, step, seed));
      fx.suite.llm.step_table.push_back(entry(BackendRole::LLM, step, seed));
    }
  }
  validate_scripted_suite(fx.suite);
  return fx;
}

// ============================================================================
// File helpers for harness-level tests
// ============================================================================

inline std::string write_dataset(const std::string& dir, const std::vector<Problem>& problems,
                                 const std::string& name = "problems.jsonl") {
  const std::string path = (std::filesystem::path(dir) / name).string();
  write_problems(path, problems);
  return path;
}

inline std::string write_suite(const std::string& dir, const ScriptedSuite& suite,
                               const std::string& name = "suite.json") {
  const std::string path = (std::filesystem::path(dir) / name).string();
  save_scripted_suite(path, suite);
  return path;
}

/** Fresh scratch directory under the system temp root, unique per tag. */
inline std::string scratch_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  fs::path d = fs::temp_directory_path() / ("scaffold-tests-" + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

} // namespace fixtures
