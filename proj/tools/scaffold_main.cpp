#include <CLI11.hpp>

#include <scaffold/harness.hpp>
#include <scaffold/oracles.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using namespace scaffold;

namespace {

// Process exit codes: 0 success, 1 run finished with recorded per-problem
// failures, 2.. stable per-ErrorCode mapping (enum order).
int exit_code_for(ErrorCode code) { return 2 + static_cast<int>(code); }

// ===========================================================================
// run
// ===========================================================================

struct RunFlags {
  std::string config_file;
  std::string dataset, output_dir, scripted_suite;
  std::string strategy, scorer, aggregation, score_aggregation;
  int n = 0, m = 0, l_max = 0, max_steps = 0, workers = 0, repeats = 0, limit = 0;
  double tau = 0.0, temperature = 0.0;
  std::uint64_t seed = 0;
};

/** CLI > file > defaults, with tau defaulting by the effective scorer. */
RunConfig effective_run_config(const CLI::App& cmd, const RunFlags& f) {
  RunConfig config;
  bool file_had_tau = false;
  if (!f.config_file.empty()) {
    // The file may be partial: flags fill the gaps, and the merged config is
    // validated by run_experiment. Key strictness still applies here.
    json j;
    try {
      j = json::parse(read_text_file(f.config_file));
    } catch (const json::exception& e) {
      fail(ErrorCode::CONFIG_INVALID, std::string("config is not valid JSON: ") + e.what());
    }
    config = j.get<RunConfig>();
    file_had_tau = j.is_object() && j.contains("tau");
  }

  auto given = [&](const std::string& name) { return cmd.count(name) > 0; };
  if (given("--dataset")) config.dataset = f.dataset;
  if (given("--output-dir")) config.output_dir = f.output_dir;
  if (given("--scripted-suite")) config.backends.scripted_suite = f.scripted_suite;
  if (given("--strategy")) config.search.strategy = strategy_from_name(f.strategy);
  if (given("--scorer")) config.search.scorer = scorer_from_name(f.scorer);
  if (given("--aggregation")) config.search.aggregation = aggregation_from_name(f.aggregation);
  if (given("--score-aggregation")) {
    config.search.score_aggregation = score_aggregation_from_name(f.score_aggregation);
  }
  if (given("--n")) config.search.n = f.n;
  if (given("--m")) config.search.beam_width_m = f.m;
  if (given("--l-max")) config.search.l_max = f.l_max;
  if (given("--max-steps")) config.search.max_steps = f.max_steps;
  if (given("--temperature")) config.search.temperature = f.temperature;
  if (given("--seed")) config.search.seed = f.seed;
  if (given("--workers")) config.workers = f.workers;
  if (given("--repeats")) config.repeats = f.repeats;
  if (given("--limit")) config.limit = f.limit;

  if (given("--tau")) {
    config.search.threshold_tau = f.tau;
  } else if (!file_had_tau) {
    // No explicit threshold anywhere: follow the effective scorer, which a
    // --scorer flag may just have changed.
    config.search.threshold_tau = default_threshold_tau(config.search.scorer);
  }
  return config;
}

int cmd_run(const CLI::App& cmd, const RunFlags& f) {
  RunConfig config = effective_run_config(cmd, f);
  RunRecord record = run_experiment(config, json(config).dump(2) + "\n");

  std::printf("run_id            %s\n", record.run_id.c_str());
  std::printf("output_dir        %s\n", config.output_dir.c_str());
  std::printf("problems          %d\n", record.rollups.problems);
  std::printf("accuracy          %.4f\n", record.rollups.accuracy);
  std::printf("corrected_steps   %.4f\n", record.rollups.mean_corrected_step_ratio);
  std::printf("slm_tokens        %lld\n", record.rollups.slm_tokens_total);
  std::printf("llm_tokens        %lld\n", record.rollups.llm_tokens_total);
  std::printf("llm_tokens_pruned %lld\n", record.rollups.llm_tokens_pruned_total);
  if (record.rollups.failures > 0) {
    std::fprintf(stderr, "%d problem(s) failed; see %s\n", record.rollups.failures,
                 run_output_paths(config.output_dir).record.c_str());
    return 1;
  }
  return 0;
}

// ===========================================================================
// report
// ===========================================================================

struct ReportFlags {
  std::string run_dir, kind = "summary", out_dir, reference_dir;
  bool relative = false;
};

int cmd_report(const ReportFlags& f) {
  RunRecord record = load_run_record(f.run_dir);
  std::optional<RunRecord> reference;
  if (!f.reference_dir.empty()) reference = load_run_record(f.reference_dir);

  const std::string out =
      f.out_dir.empty() ? (std::filesystem::path(f.run_dir) / "reports").string() : f.out_dir;
  const std::string path = emit_report(record, report_kind_from_name(f.kind), out,
                                       reference ? &*reference : nullptr, f.relative);
  std::printf("%s\n", path.c_str());
  return 0;
}

// ===========================================================================
// validate-config / validate-dataset
// ===========================================================================

int cmd_validate_config(const std::string& config_file) {
  RunConfig config = parse_run_config(read_text_file(config_file));
  validate_run_config(config);
  // Echo the canonical form; redirecting stdout yields a normalized file.
  std::printf("%s\n", json(config).dump(2).c_str());
  return 0;
}

int cmd_validate_dataset(const std::string& dataset_file, const std::string& suite_file) {
  Dataset dataset = load_problems(dataset_file);
  json summary = {{"name", dataset.manifest.name},
                  {"problems", dataset.manifest.count},
                  {"content_hash", dataset.manifest.content_hash}};
  json levels = json::object();
  for (const auto& [level, count] : dataset.manifest.level_histogram) {
    levels[std::to_string(level)] = count;
  }
  summary["level_histogram"] = levels;

  if (!suite_file.empty()) {
    ScriptedSuite suite = load_scripted_suite(suite_file, dataset.problems);
    summary["scripted_suite"] = {{"name", suite.name},
                                 {"slm_entries", suite.slm.step_table.size()},
                                 {"llm_entries", suite.llm.step_table.size()},
                                 {"cross_validated", true}};
  }
  std::printf("%s\n", summary.dump(2).c_str());
  return 0;
}

// ===========================================================================
// oracle: the brute-force references the test suite checks the engine against
// ===========================================================================

struct OracleFlags {
  std::string kind;
  std::vector<double> probs;
  std::vector<std::string> votes;
  std::string config_file, problem_id;
};

std::vector<oracle::TenthVote> parse_votes(const std::vector<std::string>& raw) {
  std::vector<oracle::TenthVote> votes;
  for (const std::string& item : raw) {
    const auto colon = item.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == item.size()) {
      fail(ErrorCode::CONFIG_INVALID, "vote \"" + item + "\" must look like answer:tenths");
    }
    oracle::TenthVote v;
    v.answer = item.substr(0, colon);
    try {
      v.tenths = std::stoll(item.substr(colon + 1));
    } catch (const std::exception&) {
      fail(ErrorCode::CONFIG_INVALID, "vote \"" + item + "\": tenths must be an integer");
    }
    votes.push_back(std::move(v));
  }
  return votes;
}

int cmd_oracle(const OracleFlags& f) {
  if (f.kind == "mean") {
    if (f.probs.empty()) fail(ErrorCode::CONFIG_INVALID, "--probs: required for kind mean");
    std::printf("%.17g\n", oracle::mean_sorted(f.probs));
    return 0;
  }
  if (f.kind == "weighted-vote" || f.kind == "majority-vote") {
    std::vector<oracle::TenthVote> votes = parse_votes(f.votes);
    const std::string winner = f.kind == "weighted-vote"
                                   ? oracle::weighted_argmax_tenths(votes)
                                   : oracle::majority_tenths(votes);
    std::printf("%s\n", winner.c_str());
    return 0;
  }
  if (f.kind == "beam-replay") {
    if (f.config_file.empty() || f.problem_id.empty()) {
      fail(ErrorCode::CONFIG_INVALID, "beam-replay needs --config and --problem");
    }
    RunConfig config = parse_run_config(read_text_file(f.config_file));
    if (config.backends.scripted_suite.empty()) {
      fail(ErrorCode::CONFIG_INVALID, "beam-replay needs a scripted_suite in the config");
    }
    Dataset dataset = load_problems(config.dataset);
    const Problem* problem = nullptr;
    for (const Problem& p : dataset.problems) {
      if (p.id == f.problem_id) problem = &p;
    }
    if (!problem) {
      fail(ErrorCode::DANGLING_PROBLEM_ID, "no problem \"" + f.problem_id + "\" in dataset");
    }
    ScriptedSuite suite = load_scripted_suite(config.backends.scripted_suite, dataset.problems);
    ScriptedBackend slm(suite.slm), llm(suite.llm);
    Scorer scorer = config.search.scorer == ScorerKind::SCRIPTED ? make_scripted_scorer(suite)
                                                                 : make_tlc_scorer();

    std::vector<oracle::BeamRefPath> paths =
        oracle::beam_reference(*problem, config.search, slm, llm, scorer);
    json out = json::array();
    for (const oracle::BeamRefPath& p : paths) {
      json steps = json::array();
      for (const oracle::BeamRefStep& s : p.steps) {
        steps.push_back({{"text", s.text},
                         {"score", s.score},
                         {"origin", std::string(to_name(s.origin))}});
      }
      out.push_back({{"steps", steps}, {"termination", std::string(to_name(p.termination))}});
    }
    std::printf("%s\n", out.dump(2).c_str());
    return 0;
  }
  fail(ErrorCode::CONFIG_INVALID,
       "unknown oracle kind \"" + f.kind +
           "\" (expected mean, weighted-vote, majority-vote, or beam-replay)");
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stepwise small-model drafting with selective large-model correction"};
  app.require_subcommand(1);

  RunFlags run_flags;
  CLI::App* run = app.add_subcommand("run", "Execute an experiment and persist its record");
  run->add_option("--config", run_flags.config_file, "Run config JSON file");
  run->add_option("--dataset", run_flags.dataset, "Problems JSONL file");
  run->add_option("--output-dir", run_flags.output_dir, "Directory for run artifacts");
  run->add_option("--strategy", run_flags.strategy, "SINGLE, BEST_OF_N, or BEAM_SEARCH");
  run->add_option("--n", run_flags.n, "Candidate count for Best-of-N and beam search");
  run->add_option("--m", run_flags.m, "Beam width (retained beams per depth)");
  run->add_option("--tau", run_flags.tau, "Escalation threshold in [0, 1]");
  run->add_option("--scorer", run_flags.scorer, "TLC, PRM, or SCRIPTED");
  run->add_option("--temperature", run_flags.temperature, "Sampling temperature");
  run->add_option("--l-max", run_flags.l_max, "Trajectory token budget");
  run->add_option("--max-steps", run_flags.max_steps, "Step budget per trajectory");
  run->add_option("--seed", run_flags.seed, "Base seed");
  run->add_option("--aggregation", run_flags.aggregation, "Answer vote: WEIGHTED or MAJORITY");
  run->add_option("--score-aggregation", run_flags.score_aggregation,
                  "Path score: MIN, LAST, PRODUCT, or MEAN");
  run->add_option("--workers", run_flags.workers, "Concurrent problems");
  run->add_option("--repeats", run_flags.repeats, "Whole-run repetitions under strided seeds");
  run->add_option("--limit", run_flags.limit, "Run only the first K problems (0 = all)");
  run->add_option("--scripted-suite", run_flags.scripted_suite, "Scripted suite JSON file");

  ReportFlags report_flags;
  CLI::App* report = app.add_subcommand("report", "Emit a CSV/JSON report from a finished run");
  report->add_option("--run", report_flags.run_dir, "Run output directory")->required();
  report->add_option("--kind", report_flags.kind,
                     "summary, pareto_csv, level_table, ratio_histograms, timing_histogram, "
                     "or review_mismatches");
  report->add_option("--out", report_flags.out_dir, "Report directory (default <run>/reports)");
  report->add_option("--reference", report_flags.reference_dir,
                     "Reference run directory for relative tables");
  report->add_flag("--relative", report_flags.relative, "Report relative to the reference run");

  std::string validate_config_file;
  CLI::App* vconfig = app.add_subcommand("validate-config",
                                         "Check a run config and echo its canonical form");
  vconfig->add_option("--config", validate_config_file, "Run config JSON file")->required();

  std::string validate_dataset_file, validate_suite_file;
  CLI::App* vdataset = app.add_subcommand("validate-dataset",
                                          "Check a dataset (and optionally a scripted suite)");
  vdataset->add_option("--dataset", validate_dataset_file, "Problems JSONL file")->required();
  vdataset->add_option("--scripted-suite", validate_suite_file,
                       "Scripted suite to cross-validate against the dataset");

  OracleFlags oracle_flags;
  CLI::App* oracle_cmd = app.add_subcommand("oracle", "Run a brute-force reference computation");
  oracle_cmd->add_option("--kind", oracle_flags.kind,
                         "mean, weighted-vote, majority-vote, or beam-replay")
      ->required();
  oracle_cmd->add_option("--probs", oracle_flags.probs, "Token probabilities (kind mean)")
      ->delimiter(',');
  oracle_cmd->add_option("--votes", oracle_flags.votes,
                         "answer:tenths pairs, score as integer tenths (vote kinds)")
      ->delimiter(',');
  oracle_cmd->add_option("--config", oracle_flags.config_file, "Run config (beam-replay)");
  oracle_cmd->add_option("--problem", oracle_flags.problem_id, "Problem id (beam-replay)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (run->parsed()) return cmd_run(*run, run_flags);
    if (report->parsed()) return cmd_report(report_flags);
    if (vconfig->parsed()) return cmd_validate_config(validate_config_file);
    if (vdataset->parsed()) return cmd_validate_dataset(validate_dataset_file, validate_suite_file);
    if (oracle_cmd->parsed()) return cmd_oracle(oracle_flags);
  } catch (const Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
  return 0;
}
