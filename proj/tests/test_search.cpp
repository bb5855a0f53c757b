#include <catch2/catch_amalgamated.hpp>

#include <scaffold/oracles.hpp>
#include <scaffold/scripted.hpp>
#include <scaffold/search.hpp>

#include "support/fixtures.hpp"

#include <string>
#include <vector>

using namespace scaffold;

namespace {

ScriptedEntry seeded_entry(const std::string& pid, int idx, std::uint64_t seed,
                           const std::string& text, double prob, std::size_t n_tokens) {
  ScriptedEntry e;
  e.problem_id = pid;
  e.step_index = idx;
  e.seed = seed;
  e.text = text;
  e.token_probs.assign(n_tokens, prob);
  return e;
}

} // namespace

// =====================================================================
// Best-of-N
// =====================================================================

TEST_CASE("best_of_n derives one seed per attempt and keeps attempt order") {
  // Three seed-keyed one-step conclusions, one per attempt.
  ScriptedSuite suite;
  suite.name = "bon-seeds";
  for (std::uint64_t k = 0; k < 3; ++k) {
    suite.slm.step_table.push_back(seeded_entry(
        "p", 1, 100 + k,
        "Attempt " + std::to_string(k) + ": the final answer is $\\boxed{" + std::to_string(k) +
            "}$.",
        0.9, 4));
  }
  suite.llm.role = BackendRole::LLM;
  ScriptedBackend slm(suite.slm);
  ScriptedBackend llm(suite.llm);
  Scorer scorer = make_scripted_scorer(suite);

  SearchConfig config;
  config.strategy = Strategy::BEST_OF_N;
  config.n = 3;
  config.scorer = ScorerKind::SCRIPTED;
  config.threshold_tau = 0.5;
  config.seed = 100;

  BestOfNOutcome out = best_of_n(fixtures::make_problem("p", "Q?", "0"), config, slm, llm, scorer);
  REQUIRE(out.outcomes.size() == 3);
  CHECK(out.failures.empty());
  for (std::uint64_t k = 0; k < 3; ++k) {
    const Trajectory& t = out.outcomes[k].trajectory;
    CHECK(t.seed == 100 + k);
    CHECK(t.extracted_answer == std::to_string(k));
  }
  CHECK(out.slm_tokens_total == 12);
  CHECK(out.llm_tokens_total == 0);
}

TEST_CASE("one failing attempt does not disturb the others") {
  // Attempts 0 and 2 are scripted; attempt 1 has no entry and no fallback.
  ScriptedSuite suite;
  suite.name = "bon-partial";
  for (std::uint64_t k : {0ull, 2ull}) {
    suite.slm.step_table.push_back(
        seeded_entry("p", 1, k, "Answer: $\\boxed{7}$.", 0.9, 3));
  }
  suite.llm.role = BackendRole::LLM;
  ScriptedBackend slm(suite.slm);
  ScriptedBackend llm(suite.llm);
  Scorer scorer = make_scripted_scorer(suite);

  SearchConfig config;
  config.strategy = Strategy::BEST_OF_N;
  config.n = 3;
  config.scorer = ScorerKind::SCRIPTED;
  config.threshold_tau = 0.5;
  config.seed = 0;

  BestOfNOutcome out = best_of_n(fixtures::make_problem("p", "Q?", "7"), config, slm, llm, scorer);
  REQUIRE(out.outcomes.size() == 2);
  CHECK(out.outcomes[0].trajectory.seed == 0);
  CHECK(out.outcomes[1].trajectory.seed == 2);
  REQUIRE(out.failures.size() == 1);
  CHECK(out.failures[0].k == 1);
  CHECK(out.failures[0].error.find("SCRIPT_TABLE_MISS") != std::string::npos);

  CHECK(collect_trajectories(out).size() == 2);
}

TEST_CASE("best_of_n raises ALL_FAILED only when nothing survives") {
  ScriptedSuite suite;
  suite.name = "bon-empty";
  suite.llm.role = BackendRole::LLM;
  ScriptedBackend slm(suite.slm);
  ScriptedBackend llm(suite.llm);
  Scorer scorer = make_scripted_scorer(suite);

  SearchConfig config;
  config.strategy = Strategy::BEST_OF_N;
  config.n = 2;
  config.scorer = ScorerKind::SCRIPTED;

  try {
    best_of_n(fixtures::make_problem("p", "Q?", "1"), config, slm, llm, scorer);
    FAIL("expected ALL_FAILED");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ALL_FAILED);
  }
}

// =====================================================================
// Beam search: equivalence with the single-path controller
// =====================================================================

TEST_CASE("a 1x1 beam walks the same path as smart_generate") {
  fixtures::Ladder3 fx = fixtures::make_ladder3(3);
  Scorer scorer = make_scripted_scorer(fx.suite);

  for (const Problem& problem : fx.problems) {
    SearchConfig config;
    config.scorer = ScorerKind::SCRIPTED;
    config.threshold_tau = 0.9;
    config.seed = 0; // lane 0 must reproduce the plain controller's seed
    config.n = 1;
    config.beam_width_m = 1;

    ScriptedBackend slm_a(fx.suite.slm), llm_a(fx.suite.llm);
    GenerationOutcome single = smart_generate(problem, config, slm_a, llm_a, scorer);

    config.strategy = Strategy::BEAM_SEARCH;
    ScriptedBackend slm_b(fx.suite.slm), llm_b(fx.suite.llm);
    BeamOutcome beam = beam_search(problem, config, slm_b, llm_b, scorer);

    REQUIRE(beam.finals.size() == 1);
    CHECK(json(beam.finals[0]) == json(single.trajectory));
    CHECK(beam.events == single.events);
    CHECK(beam.slm_tokens_total == single.slm_tokens_total);
    CHECK(beam.llm_tokens_total == single.llm_tokens_total);
  }
}

TEST_CASE("a 1x1 beam freezes where smart_generate aborts on silence") {
  // Step 1 succeeds, step 2 is whitespace on every try: the single-path
  // controller aborts after two silent drafts, the beam freezes the stuck
  // live beam in place. Both end with one step and step-budget semantics.
  ScriptedSuite suite;
  suite.name = "stuck";
  ScriptedEntry first;
  first.problem_id = "p";
  first.step_index = 1;
  first.text = "## Step 1: A start without a conclusion.";
  first.token_probs.assign(4, 0.9);
  ScriptedEntry silent;
  silent.problem_id = "p";
  silent.step_index = 2;
  silent.text = " ";
  silent.token_probs = {0.9};
  suite.slm.step_table = {first, silent};
  suite.llm.role = BackendRole::LLM;
  Scorer scorer = make_scripted_scorer(suite);
  Problem problem = fixtures::make_problem("p", "Q?", "1");

  SearchConfig config;
  config.scorer = ScorerKind::SCRIPTED;
  config.threshold_tau = 0.5;
  config.n = 1;
  config.beam_width_m = 1;

  ScriptedBackend slm_a(suite.slm), llm_a(suite.llm);
  GenerationOutcome single = smart_generate(problem, config, slm_a, llm_a, scorer);

  config.strategy = Strategy::BEAM_SEARCH;
  ScriptedBackend slm_b(suite.slm), llm_b(suite.llm);
  BeamOutcome beam = beam_search(problem, config, slm_b, llm_b, scorer);

  REQUIRE(beam.finals.size() == 1);
  CHECK(beam.finals[0].steps.size() == 1);
  CHECK(beam.finals[0].termination == Termination::STEP_BUDGET);
  CHECK(json(beam.finals[0]) == json(single.trajectory));
}

TEST_CASE("an all-whitespace root depth aborts the beam") {
  ScriptedSuite suite;
  suite.name = "silent-root";
  ScriptedEntry silent;
  silent.problem_id = "p";
  silent.step_index = 1;
  silent.text = " ";
  silent.token_probs = {0.9};
  suite.slm.step_table = {silent};
  suite.llm.role = BackendRole::LLM;
  ScriptedBackend slm(suite.slm);
  ScriptedBackend llm(suite.llm);
  Scorer scorer = make_scripted_scorer(suite);

  SearchConfig config;
  config.strategy = Strategy::BEAM_SEARCH;
  config.scorer = ScorerKind::SCRIPTED;
  config.n = 2;
  config.beam_width_m = 1;

  try {
    beam_search(fixtures::make_problem("p", "Q?", "1"), config, slm, llm, scorer);
    FAIL("expected ALL_FAILED");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ALL_FAILED);
  }
}

// =====================================================================
// Beam search: correction, ranking, freezing
// =====================================================================

TEST_CASE("sub-threshold candidates are corrected before ranking") {
  // Lane 0 drafts weakly (0.4) and is replaced by a strong correction (0.9);
  // lane 1 drafts acceptably (0.6). With m = 1 the corrected lane must win
  // the ranking on its post-correction score.
  ScriptedSuite suite;
  suite.name = "correct-then-rank";
  suite.slm.step_table = {
      seeded_entry("p", 1, 0, "## Step 1: A shaky opening. $\\boxed{8}$", 0.4, 5),
      seeded_entry("p", 1, 1, "## Step 1: A passable opening. $\\boxed{9}$", 0.6, 5),
  };
  suite.llm.role = BackendRole::LLM;
  suite.llm.step_table = {
      seeded_entry("p", 1, 0, "## Step 1: A solid correction. $\\boxed{7}$", 0.9, 6),
  };
  ScriptedBackend slm(suite.slm);
  ScriptedBackend llm(suite.llm);
  Scorer scorer = make_tlc_scorer();

  SearchConfig config;
  config.strategy = Strategy::BEAM_SEARCH;
  config.scorer = ScorerKind::TLC;
  config.threshold_tau = 0.5;
  config.n = 2;
  config.beam_width_m = 1;
  config.seed = 0;

  BeamOutcome out = beam_search(fixtures::make_problem("p", "Q?", "7"), config, slm, llm, scorer);
  REQUIRE(out.finals.size() == 1);
  REQUIRE(out.finals[0].steps.size() == 1);
  CHECK(out.finals[0].steps[0].origin == Origin::LLM);
  CHECK(out.finals[0].steps[0].score == Catch::Approx(0.9));
  CHECK(out.finals[0].extracted_answer == "7");

  REQUIRE(out.events.size() == 2);
  CHECK(out.events[0].escalated);
  CHECK_FALSE(out.events[1].escalated);
  CHECK(out.llm_tokens_total == 6);
}

TEST_CASE("exact ranking ties fall back to creation order") {
  ScriptedSuite suite;
  suite.name = "tie";
  suite.slm.step_table = {
      seeded_entry("p", 1, 0, "## Step 1: First twin. $\\boxed{1}$", 0.7, 4),
      seeded_entry("p", 1, 1, "## Step 1: Second twin. $\\boxed{2}$", 0.7, 4),
  };
  suite.llm.role = BackendRole::LLM;
  ScriptedBackend slm(suite.slm);
  ScriptedBackend llm(suite.llm);
  Scorer scorer = make_tlc_scorer();

  SearchConfig config;
  config.strategy = Strategy::BEAM_SEARCH;
  config.scorer = ScorerKind::TLC;
  config.threshold_tau = 0.5;
  config.n = 2;
  config.beam_width_m = 1;

  BeamOutcome out = beam_search(fixtures::make_problem("p", "Q?", "1"), config, slm, llm, scorer);
  REQUIRE(out.finals.size() == 1);
  CHECK(out.finals[0].steps[0].text.find("First twin") != std::string::npos);
}

TEST_CASE("the score aggregation decides which path is retained") {
  // Path A scores (0.5, 0.9), path B scores (0.7, 0.6). MIN prefers B
  // (0.6 over 0.5); LAST prefers A (0.9 over 0.6).
  ScriptedSuite suite;
  suite.name = "aggregation-split";
  suite.slm.step_table = {
      seeded_entry("p", 1, 10, "## Step 1: Path A opens.", 0.5, 4),
      seeded_entry("p", 1, 11, "## Step 1: Path B opens.", 0.7, 4),
      // After depth 1 both parents are live; rank 0 (B) extends on lane 0,
      // rank 1 (A) on lane 1.
      seeded_entry("p", 2, 10, "## Step 2: Path B closes. $\\boxed{2}$", 0.6, 4),
      seeded_entry("p", 2, 11, "## Step 2: Path A closes. $\\boxed{1}$", 0.9, 4),
  };
  suite.llm.role = BackendRole::LLM;
  Scorer scorer = make_tlc_scorer();

  SearchConfig config;
  config.strategy = Strategy::BEAM_SEARCH;
  config.scorer = ScorerKind::TLC;
  config.threshold_tau = 0.3;
  config.n = 2;
  config.beam_width_m = 2;
  config.seed = 10;

  config.score_aggregation = ScoreAggregation::MIN;
  ScriptedBackend slm_min(suite.slm), llm_min(suite.llm);
  BeamOutcome by_min = beam_search(fixtures::make_problem("p", "Q?", "2"), config, slm_min, llm_min, scorer);
  REQUIRE(by_min.finals.size() == 2);
  CHECK(by_min.finals[0].extracted_answer == "2"); // B: min 0.6 beats A: min 0.5

  config.score_aggregation = ScoreAggregation::LAST;
  ScriptedBackend slm_last(suite.slm), llm_last(suite.llm);
  BeamOutcome by_last = beam_search(fixtures::make_problem("p", "Q?", "1"), config, slm_last, llm_last, scorer);
  REQUIRE(by_last.finals.size() == 2);
  CHECK(by_last.finals[0].extracted_answer == "1"); // A: last 0.9 beats B: last 0.6
}

TEST_CASE("frozen beams compete unchanged and spawn nothing") {
  // Lane 0 concludes at depth 1 with a strong score; lane 1 keeps going
  // weakly. The frozen conclusion must stay rank 0 and keep its single step
  // while the live beam grows.
  ScriptedSuite suite;
  suite.name = "freeze";
  suite.slm.step_table = {
      seeded_entry("p", 1, 20, "## Step 1: Done at once. $\\boxed{5}$", 0.95, 5),
      seeded_entry("p", 1, 21, "## Step 1: A slower road.", 0.6, 5),
      seeded_entry("p", 2, 20, "## Step 2: Still rolling.", 0.6, 5),
      seeded_entry("p", 2, 21, "## Step 2: Still rolling on.", 0.6, 5),
      seeded_entry("p", 3, 20, "## Step 3: Slow finish. $\\boxed{6}$", 0.6, 5),
      seeded_entry("p", 3, 21, "## Step 3: Slow finish too. $\\boxed{6}$", 0.6, 5),
  };
  suite.llm.role = BackendRole::LLM;
  ScriptedBackend slm(suite.slm);
  ScriptedBackend llm(suite.llm);
  Scorer scorer = make_tlc_scorer();

  SearchConfig config;
  config.strategy = Strategy::BEAM_SEARCH;
  config.scorer = ScorerKind::TLC;
  config.threshold_tau = 0.3;
  config.n = 2;
  config.beam_width_m = 2;
  config.seed = 20;
  config.score_aggregation = ScoreAggregation::MIN;

  BeamOutcome out = beam_search(fixtures::make_problem("p", "Q?", "5"), config, slm, llm, scorer);
  REQUIRE(out.finals.size() == 2);
  CHECK(out.finals[0].steps.size() == 1);
  CHECK(out.finals[0].termination == Termination::BOXED_ANSWER);
  CHECK(out.finals[0].extracted_answer == "5");
  CHECK(out.finals[1].steps.size() == 3);
  CHECK(out.finals[1].extracted_answer == "6");

  // The frontier snapshots show the frozen beam pinned at one step.
  REQUIRE(out.states.size() == 3);
  for (const BeamState& state : out.states) {
    CHECK(state.retained[0].steps.size() == 1);
  }
}

TEST_CASE("beam token totals reconcile with the backend counters") {
  fixtures::RandomBeamFixture fx = fixtures::make_random_beam_fixture(1);
  ScriptedBackend slm(fx.suite.slm);
  ScriptedBackend llm(fx.suite.llm);
  Scorer scorer = make_tlc_scorer();
  BeamOutcome out = beam_search(fx.problem, fx.config, slm, llm, scorer);
  CHECK(out.slm_tokens_total == slm.counters().tokens);
  CHECK(out.llm_tokens_total == llm.counters().tokens);
}

// =====================================================================
// Beam search: randomized comparison against the replay oracle
// =====================================================================

TEST_CASE("randomized beams match the exhaustive replay oracle") {
  // A fast slice; the acceptance suite runs the full five hundred.
  for (int i = 0; i < 60; ++i) {
    fixtures::RandomBeamFixture fx = fixtures::make_random_beam_fixture(i);
    ScriptedBackend slm(fx.suite.slm), llm(fx.suite.llm);
    Scorer scorer = make_tlc_scorer();

    std::vector<oracle::BeamRefPath> expected;
    bool oracle_failed = false;
    try {
      ScriptedBackend oracle_slm(fx.suite.slm), oracle_llm(fx.suite.llm);
      expected = oracle::beam_reference(fx.problem, fx.config, oracle_slm, oracle_llm, scorer);
    } catch (const Error& e) {
      REQUIRE(e.code() == ErrorCode::ALL_FAILED);
      oracle_failed = true;
    }

    if (oracle_failed) {
      CHECK_THROWS_AS(beam_search(fx.problem, fx.config, slm, llm, scorer), Error);
      continue;
    }
    BeamOutcome out = beam_search(fx.problem, fx.config, slm, llm, scorer);
    REQUIRE(out.finals.size() == expected.size());
    for (std::size_t b = 0; b < expected.size(); ++b) {
      INFO("fixture " << i << " beam " << b);
      CHECK(oracle::as_ref_path(out.finals[b]) == expected[b]);
    }
  }
}
