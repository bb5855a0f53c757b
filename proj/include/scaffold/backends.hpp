#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "scaffold/core.hpp"
#include "scaffold/errors.hpp"

namespace scaffold {

enum class BackendRole { SLM, LLM, PRM };

enum class FinishReason { STOP_SEQUENCE, EOS, LENGTH };

inline std::string_view to_name(BackendRole v) {
  switch (v) {
    case BackendRole::SLM: return "SLM";
    case BackendRole::LLM: return "LLM";
    case BackendRole::PRM: return "PRM";
  }
  fail(ErrorCode::INVARIANT_VIOLATION, "bad backend role");
}

inline BackendRole backend_role_from_name(std::string_view s) {
  if (s == "SLM") return BackendRole::SLM;
  if (s == "LLM") return BackendRole::LLM;
  if (s == "PRM") return BackendRole::PRM;
  fail(ErrorCode::PARSE_ERROR, "backend role: unknown value '" + std::string(s) + "'");
}

inline std::string_view to_name(FinishReason v) {
  switch (v) {
    case FinishReason::STOP_SEQUENCE: return "STOP_SEQUENCE";
    case FinishReason::EOS: return "EOS";
    case FinishReason::LENGTH: return "LENGTH";
  }
  fail(ErrorCode::INVARIANT_VIOLATION, "bad finish reason");
}

inline FinishReason finish_from_name(std::string_view s) {
  if (s == "STOP_SEQUENCE") return FinishReason::STOP_SEQUENCE;
  if (s == "EOS") return FinishReason::EOS;
  if (s == "LENGTH") return FinishReason::LENGTH;
  fail(ErrorCode::PARSE_ERROR, "finish reason: unknown value '" + std::string(s) + "'");
}

/**
 * Connection settings for one model service. api_key_env names an environment
 * variable; the value is read at request time and exists nowhere else — specs
 * serialize with the name only, so persisted artifacts can never leak a key.
 */
struct BackendSpec {
  BackendRole role = BackendRole::SLM;
  std::string endpoint_url;
  std::string model_name;
  std::string api_key_env; // empty = unauthenticated
  int request_timeout_ms = 30000;
  int max_retries = 2;
  double rate_limit_rps = 0.0; // 0 = unlimited

  bool operator==(const BackendSpec&) const = default;
};

// One step-drafting call. step_index is informational (1-based position being
// drafted): HTTP backends ignore it, scripted tables key on it.
struct StepRequest {
  std::string problem_id;
  int step_index = 1;
  std::string prompt_prefix;
  std::vector<std::string> stop;
  double temperature = 0.8;
  int max_tokens = 2048;
  bool want_logprobs = true;
  std::uint64_t seed = 0;

  bool operator==(const StepRequest&) const = default;
};

struct StepResponse {
  std::string text;
  std::vector<TokenProb> tokens; // linear probabilities, stop-sequence tokens excluded
  FinishReason finish = FinishReason::STOP_SEQUENCE;
  int backend_token_count = 0;

  bool operator==(const StepResponse&) const = default;
};

// Request-level totals a client has served. The harness reconciles these
// against per-problem metrics (double-entry accounting).
struct BackendCounters {
  long long requests = 0;
  long long retries = 0;
  long long tokens = 0;
};

/**
 * A step-drafting backend. Implementations are shareable, thread-safe
 * handles: concurrent trajectories may call generate() on one instance.
 */
class StepGenerator {
 public:
  virtual ~StepGenerator() = default;

  virtual StepResponse generate(const StepRequest& request) = 0;

  BackendCounters counters() const {
    return BackendCounters{requests_.load(), retries_.load(), tokens_.load()};
  }

 protected:
  void record_call(int tokens, int retries) {
    requests_.fetch_add(1);
    retries_.fetch_add(retries);
    tokens_.fetch_add(tokens);
  }

 private:
  std::atomic<long long> requests_{0};
  std::atomic<long long> retries_{0};
  std::atomic<long long> tokens_{0};
};

using StepGeneratorPtr = std::shared_ptr<StepGenerator>;

/**
 * Drafts one step. Guarantees the returned text ends before any stop
 * sequence, whatever the backend reported.
 */
inline StepResponse generate_step(StepGenerator& backend, const StepRequest& request) {
  StepResponse r = backend.generate(request);
  for (const std::string& stop : request.stop) {
    if (stop.empty()) continue;
    std::size_t cut = r.text.find(stop);
    if (cut != std::string::npos) {
      r.text.resize(cut);
      r.finish = FinishReason::STOP_SEQUENCE;
    }
  }
  return r;
}

inline void to_json(json& j, const BackendSpec& b) {
  j = json{{"role", to_name(b.role)},
           {"endpoint_url", b.endpoint_url},
           {"model_name", b.model_name},
           {"api_key_env", b.api_key_env},
           {"request_timeout_ms", b.request_timeout_ms},
           {"max_retries", b.max_retries},
           {"rate_limit_rps", b.rate_limit_rps}};
}

inline void from_json(const json& j, BackendSpec& b) {
  b.role = backend_role_from_name(j.at("role").get<std::string>());
  j.at("endpoint_url").get_to(b.endpoint_url);
  j.at("model_name").get_to(b.model_name);
  b.api_key_env = j.value("api_key_env", "");
  b.request_timeout_ms = j.value("request_timeout_ms", 30000);
  b.max_retries = j.value("max_retries", 2);
  b.rate_limit_rps = j.value("rate_limit_rps", 0.0);
}

inline void to_json(json& j, const StepRequest& r) {
  j = json{{"problem_id", r.problem_id},
           {"step_index", r.step_index},
           {"prompt_prefix", r.prompt_prefix},
           {"stop", r.stop},
           {"temperature", r.temperature},
           {"max_tokens", r.max_tokens},
           {"want_logprobs", r.want_logprobs},
           {"seed", r.seed}};
}

inline void from_json(const json& j, StepRequest& r) {
  j.at("problem_id").get_to(r.problem_id);
  j.at("step_index").get_to(r.step_index);
  j.at("prompt_prefix").get_to(r.prompt_prefix);
  r.stop = j.at("stop").get<std::vector<std::string>>();
  j.at("temperature").get_to(r.temperature);
  j.at("max_tokens").get_to(r.max_tokens);
  j.at("want_logprobs").get_to(r.want_logprobs);
  j.at("seed").get_to(r.seed);
}

inline void to_json(json& j, const StepResponse& r) {
  j = json{{"text", r.text},
           {"tokens", r.tokens},
           {"finish", to_name(r.finish)},
           {"backend_token_count", r.backend_token_count}};
}

inline void from_json(const json& j, StepResponse& r) {
  j.at("text").get_to(r.text);
  r.tokens = j.at("tokens").get<std::vector<TokenProb>>();
  r.finish = finish_from_name(j.at("finish").get<std::string>());
  j.at("backend_token_count").get_to(r.backend_token_count);
}

} // namespace scaffold
