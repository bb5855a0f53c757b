#include <catch2/catch_amalgamated.hpp>

#include <scaffold/oracles.hpp>
#include <scaffold/scoring.hpp>

#include <cmath>
#include <random>
#include <string>
#include <vector>

using namespace scaffold;

namespace {

std::vector<TokenProb> tokens_of(const std::vector<double>& probs) {
  std::vector<TokenProb> out;
  for (double p : probs) out.push_back({"t", p});
  return out;
}

ScriptedSuite tiny_suite() {
  ScriptedSuite suite;
  suite.name = "tiny";
  ScriptedEntry good;
  good.problem_id = "p";
  good.step_index = 1;
  good.text = "## Step 1: A sound derivation.";
  good.token_probs = {0.9, 0.9};
  good.is_correct = true;
  ScriptedEntry bad;
  bad.problem_id = "p";
  bad.step_index = 2;
  bad.text = "## Step 2: A flawed derivation.";
  bad.token_probs = {0.4};
  bad.is_correct = false;
  suite.slm.step_table = {good, bad};
  suite.llm.role = BackendRole::LLM;
  return suite;
}

} // namespace

// =====================================================================
// Token-likelihood confidence
// =====================================================================

TEST_CASE("tlc_score equals the arithmetic mean of linear probabilities") {
  CHECK(tlc_score(tokens_of({0.5})) == 0.5);
  CHECK(tlc_score(tokens_of({1.0, 0.0})) == 0.5);
  CHECK(tlc_score(tokens_of({0.2, 0.4, 0.6})) == Catch::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("tlc_score over an empty token list is EMPTY_STEP") {
  try {
    tlc_score({});
    FAIL("expected EMPTY_STEP");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EMPTY_STEP);
  }
}

TEST_CASE("tlc_score tracks a sorted-summation oracle within 1e-12") {
  std::mt19937_64 rng(314159);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 10000; ++trial) {
    int len = 1 + static_cast<int>(rng() % 64);
    std::vector<double> probs;
    probs.reserve(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) probs.push_back(unit(rng));
    double expected = oracle::mean_sorted(probs);
    double got = tlc_score(tokens_of(probs));
    REQUIRE(std::fabs(got - expected) <= 1e-12);
    REQUIRE(got >= 0.0);
    REQUIRE(got <= 1.0);
  }
}

// =====================================================================
// Scripted scorer
// =====================================================================

TEST_CASE("scripted scorer maps table correctness to the two-point scale") {
  ScriptedSuite suite = tiny_suite();
  ScriptedScorer scorer(suite);
  CHECK(scorer.score("## Step 1: A sound derivation.") == 0.95);
  CHECK(scorer.score("## Step 2: A flawed derivation.") == 0.30);
}

TEST_CASE("scripted scorer honors custom score points") {
  ScriptedSuite suite = tiny_suite();
  suite.scorer.score_correct = 0.8;
  suite.scorer.score_incorrect = 0.1;
  ScriptedScorer scorer(suite);
  CHECK(scorer.score("## Step 1: A sound derivation.") == 0.8);
  CHECK(scorer.score("## Step 2: A flawed derivation.") == 0.1);
}

TEST_CASE("scripted scorer recognizes the flaw marker on unknown text") {
  ScriptedScorer scorer(tiny_suite());
  CHECK(scorer.score("some synthesized step " + std::string(kScriptedFlawMarker)) == 0.30);
  CHECK(scorer.score("some clean synthesized step") == 0.95);
}

TEST_CASE("conflicting correctness for one text is a schema error") {
  ScriptedSuite suite = tiny_suite();
  ScriptedEntry clash;
  clash.problem_id = "p";
  clash.step_index = 1;
  clash.text = "## Step 1: A sound derivation."; // same text, opposite verdict
  clash.is_correct = false;
  clash.token_probs = {0.5};
  suite.llm.step_table = {clash};
  try {
    scripted_correctness_index(suite);
    FAIL("expected SCHEMA_ERROR");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SCHEMA_ERROR);
  }
}

TEST_CASE("the same text may appear in both tables when verdicts agree") {
  ScriptedSuite suite = tiny_suite();
  ScriptedEntry echo = suite.slm.step_table[0];
  suite.llm.step_table = {echo};
  CHECK_NOTHROW(scripted_correctness_index(suite));
  CHECK(scripted_correctness_index(suite).size() == 2);
}

// =====================================================================
// Dispatch
// =====================================================================

TEST_CASE("score_step dispatches by scorer kind") {
  Step step;
  step.index = 1;
  step.text = "## Step 1: A sound derivation.";
  step.tokens = tokens_of({0.25, 0.75});
  step.token_count = 2;

  ScoreReport tlc = score_step(make_tlc_scorer(), "Q", {}, step);
  CHECK(tlc.scorer == ScorerKind::TLC);
  CHECK(tlc.score == 0.5);
  REQUIRE(tlc.detail.has_value());
  CHECK(tlc.detail->find("2") != std::string::npos);

  ScoreReport scripted = score_step(make_scripted_scorer(tiny_suite()), "Q", {}, step);
  CHECK(scripted.scorer == ScorerKind::SCRIPTED);
  CHECK(scripted.score == 0.95);
}

TEST_CASE("a PRM scorer without a client is rejected at construction") {
  try {
    make_prm_scorer(nullptr);
    FAIL("expected CONFIG_INVALID");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CONFIG_INVALID);
  }
}

TEST_CASE("score reports round-trip through JSON") {
  ScoreReport r;
  r.score = 0.625;
  r.scorer = ScorerKind::SCRIPTED;
  r.detail = "table hit";
  json j = r;
  CHECK(j.get<ScoreReport>() == r);

  r.detail.reset();
  j = r;
  CHECK(!j.contains("detail"));
  CHECK(j.get<ScoreReport>() == r);
}
