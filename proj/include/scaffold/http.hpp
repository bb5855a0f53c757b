#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "scaffold/backends.hpp"
#include "scaffold/errors.hpp"

namespace scaffold {

// =====================================================================
// Wire format (see docs/backend-protocol.md for the bit-exact contract)
// =====================================================================

inline json completion_request_body(const std::string& model, const StepRequest& r) {
  return json{{"model", model},
              {"prompt", r.prompt_prefix},
              {"stop", r.stop},
              {"temperature", r.temperature},
              {"max_tokens", r.max_tokens},
              {"logprobs", r.want_logprobs},
              {"seed", r.seed}};
}

inline json prm_request_body(const std::string& question, const std::vector<std::string>& steps,
                             const std::string& candidate) {
  return json{{"question", question}, {"steps", steps}, {"candidate", candidate}};
}

/**
 * Maps a completion response to a StepResponse. Log-probabilities are
 * exponentiated here, at the ingestion boundary: everything downstream sees
 * linear probabilities only. Token lists are trimmed to the tokens that fit
 * inside the returned text, which drops trailing stop-sequence fragments.
 */
inline StepResponse parse_completion_response(const json& body, bool want_logprobs) {
  if (!body.contains("choices") || !body["choices"].is_array() || body["choices"].empty()) {
    fail(ErrorCode::BACKEND_MALFORMED, "completion response without choices");
  }
  const json& choice = body["choices"][0];
  if (!choice.contains("text") || !choice["text"].is_string()) {
    fail(ErrorCode::BACKEND_MALFORMED, "completion choice without text");
  }

  StepResponse r;
  r.text = choice["text"].get<std::string>();

  std::string finish_reason = choice.value("finish_reason", "stop");
  if (finish_reason == "length") {
    r.finish = FinishReason::LENGTH;
  } else if (finish_reason == "stop") {
    bool hit_stop_sequence = choice.contains("stop_reason") && choice["stop_reason"].is_string();
    r.finish = hit_stop_sequence ? FinishReason::STOP_SEQUENCE : FinishReason::EOS;
  } else {
    fail(ErrorCode::BACKEND_MALFORMED, "unknown finish_reason '" + finish_reason + "'");
  }

  if (choice.contains("logprobs") && choice["logprobs"].is_object()) {
    const json& lp = choice["logprobs"];
    if (!lp.contains("tokens") || !lp.contains("token_logprobs") ||
        lp["tokens"].size() != lp["token_logprobs"].size()) {
      fail(ErrorCode::BACKEND_MALFORMED, "logprobs tokens and token_logprobs disagree");
    }
    std::size_t text_budget = r.text.size();
    std::size_t used = 0;
    for (std::size_t i = 0; i < lp["tokens"].size(); ++i) {
      std::string tok = lp["tokens"][i].get<std::string>();
      if (used + tok.size() > text_budget) break; // stop-sequence tail, not part of the step
      double prob = 1.0; // a null logprob (some servers emit one for the first token) counts as certain
      if (!lp["token_logprobs"][i].is_null()) {
        prob = std::exp(lp["token_logprobs"][i].get<double>());
        prob = std::min(1.0, std::max(0.0, prob));
      }
      r.tokens.push_back(TokenProb{std::move(tok), prob});
      used += r.tokens.back().token_text.size();
    }
  } else if (want_logprobs) {
    fail(ErrorCode::BACKEND_MALFORMED, "logprobs requested but absent from response");
  }

  if (body.contains("usage") && body["usage"].contains("completion_tokens")) {
    r.backend_token_count = body["usage"]["completion_tokens"].get<int>();
  } else {
    r.backend_token_count = static_cast<int>(r.tokens.size());
  }
  return r;
}

// =====================================================================
// Transport: auth, rate limiting, retries
// =====================================================================

namespace detail {

struct ParsedUrl {
  std::string base; // scheme://host:port
  std::string path; // /v1/completions
};

inline ParsedUrl parse_url(const std::string& url) {
  std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    fail(ErrorCode::CONFIG_INVALID, "endpoint_url: missing scheme in '" + url + "'");
  }
  std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return ParsedUrl{url, "/"};
  return ParsedUrl{url.substr(0, path_start), url.substr(path_start)};
}

} // namespace detail

/**
 * Shared POST machinery for the model-facing clients. Honors the spec's rate
 * limit, retries timeouts/5xx/429 up to max_retries with short backoff, and
 * authenticates from the named environment variable at call time; the key
 * value lives only in the outgoing header.
 */
class HttpTransport {
 public:
  explicit HttpTransport(BackendSpec spec) : spec_(std::move(spec)), url_(detail::parse_url(spec_.endpoint_url)) {}

  const BackendSpec& spec() const { return spec_; }

  struct Reply {
    json body;
    int retries = 0;
  };

  Reply post_json(const json& request_body) {
    std::string payload = request_body.dump();
    int attempts = spec_.max_retries + 1;
    int last_status = 0;
    bool timed_out = false;

    for (int attempt = 0; attempt < attempts; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(std::min(250, 25 << (attempt - 1))));
      }
      wait_for_rate_slot();

      httplib::Client client(url_.base);
      client.set_connection_timeout(std::chrono::milliseconds(spec_.request_timeout_ms));
      client.set_read_timeout(std::chrono::milliseconds(spec_.request_timeout_ms));
      client.set_write_timeout(std::chrono::milliseconds(spec_.request_timeout_ms));

      httplib::Headers headers;
      if (!spec_.api_key_env.empty()) {
        if (const char* key = std::getenv(spec_.api_key_env.c_str()); key && *key) {
          headers.emplace("Authorization", std::string("Bearer ") + key);
        }
      }

      auto res = client.Post(url_.path, headers, payload, "application/json");
      if (!res) {
        timed_out = true;
        continue; // connection failure or timeout: retryable
      }
      last_status = res->status;
      timed_out = false;
      if (res->status >= 200 && res->status < 300) {
        json body = json::parse(res->body, nullptr, false);
        if (body.is_discarded()) {
          fail(ErrorCode::BACKEND_MALFORMED, "response body is not JSON");
        }
        return Reply{std::move(body), attempt};
      }
      if (res->status == 429 || res->status >= 500) continue; // retryable
      fail(ErrorCode::BACKEND_HTTP, "status " + std::to_string(res->status) + " from " + spec_.endpoint_url,
           res->status);
    }

    if (timed_out) {
      fail(ErrorCode::BACKEND_TIMEOUT, "no response from " + spec_.endpoint_url + " after " +
                                           std::to_string(attempts) + " attempts");
    }
    if (last_status == 429) {
      fail(ErrorCode::RATE_LIMITED, "still rate limited by " + spec_.endpoint_url + " after " +
                                        std::to_string(attempts) + " attempts");
    }
    fail(ErrorCode::BACKEND_HTTP, "status " + std::to_string(last_status) + " from " + spec_.endpoint_url,
         last_status);
  }

 private:
  void wait_for_rate_slot() {
    if (spec_.rate_limit_rps <= 0.0) return;
    auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / spec_.rate_limit_rps));
    std::chrono::steady_clock::time_point wait_until;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto now = std::chrono::steady_clock::now();
      next_slot_ = std::max(next_slot_, now);
      wait_until = next_slot_;
      next_slot_ += interval;
    }
    std::this_thread::sleep_until(wait_until);
  }

  BackendSpec spec_;
  detail::ParsedUrl url_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point next_slot_{};
};

// =====================================================================
// Clients
// =====================================================================

class HttpCompletionClient : public StepGenerator {
 public:
  explicit HttpCompletionClient(BackendSpec spec) : transport_(std::move(spec)) {}

  const BackendSpec& spec() const { return transport_.spec(); }

  StepResponse generate(const StepRequest& request) override {
    json body = completion_request_body(transport_.spec().model_name, request);
    HttpTransport::Reply reply = transport_.post_json(body);
    StepResponse r = parse_completion_response(reply.body, request.want_logprobs);
    record_call(r.backend_token_count, reply.retries);
    return r;
  }

 private:
  HttpTransport transport_;
};

/**
 * Process-reward-model client: asks the service to score one candidate step
 * in the context of the question and the accepted steps before it.
 */
class HttpPrmClient {
 public:
  explicit HttpPrmClient(BackendSpec spec) : transport_(std::move(spec)) {}

  const BackendSpec& spec() const { return transport_.spec(); }

  double score(const std::string& question, const std::vector<std::string>& prior_steps,
               const std::string& candidate) {
    HttpTransport::Reply reply = transport_.post_json(prm_request_body(question, prior_steps, candidate));
    if (!reply.body.contains("score") || !reply.body["score"].is_number()) {
      fail(ErrorCode::BACKEND_MALFORMED, "reward response without numeric score");
    }
    double s = reply.body["score"].get<double>();
    if (!(s >= 0.0 && s <= 1.0)) {
      fail(ErrorCode::PRM_RANGE, "reward score " + std::to_string(s) + " outside [0, 1]");
    }
    requests_.fetch_add(1);
    retries_.fetch_add(reply.retries);
    return s;
  }

  BackendCounters counters() const { return BackendCounters{requests_.load(), retries_.load(), 0}; }

 private:
  HttpTransport transport_;
  std::atomic<long long> requests_{0};
  std::atomic<long long> retries_{0};
};

// Free-function form mirroring generate_step.
inline double prm_score_request(HttpPrmClient& client, const std::string& question,
                                const std::vector<std::string>& prior_steps,
                                const std::string& candidate) {
  return client.score(question, prior_steps, candidate);
}

} // namespace scaffold
