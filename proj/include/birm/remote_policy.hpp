#pragma once

// JSON-over-HTTP generator policy.
//
//   POST <path>  {"task_id": str, "prefix": [{"index": int, "value": int}], "n_samples": int}
//   200          {"steps": [[{"index": int, "value": int}, ...], ...]}
//
// One inner list per requested sample. Only the first step of each inner list is used;
// servers may return longer continuations.

#include <chrono>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"

#include "birm/env.hpp"
#include "birm/json_types.hpp"

namespace birm {

struct RemotePolicyConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string path = "/next_step";
  double timeout_seconds = 10.0;
  int retries = 2;                 // extra attempts after the first
  double retry_backoff_seconds = 0.05;
};

inline json make_next_step_request(const std::string& task_id, const std::vector<Step>& prefix, std::size_t n) {
  return json{{"task_id", task_id}, {"prefix", steps_to_json(prefix)}, {"n_samples", n}};
}

// Parses a response body, returning the first step of every sample.
inline std::vector<Step> parse_next_step_response(const std::string& body, std::size_t expected) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw SchemaError("<body>", 1, std::string("malformed JSON: ") + e.what());
  }
  const auto& samples = detail::require(j, "steps", 1);
  if (!samples.is_array()) throw SchemaError("steps", 1, "expected an array of samples");
  if (samples.size() != expected)
    throw SchemaError("steps", 1,
                      "expected " + std::to_string(expected) + " samples, got " + std::to_string(samples.size()));
  std::vector<Step> out;
  out.reserve(expected);
  for (const auto& sample : samples) {
    auto seq = steps_from_json(sample, "steps", 1);
    if (seq.empty()) throw SchemaError("steps", 1, "empty sample");
    out.push_back(seq.front());
  }
  return out;
}

class RemotePolicy final : public GeneratorPolicy {
 public:
  explicit RemotePolicy(RemotePolicyConfig config) : config_(std::move(config)) {}

  Step next_step(const Task& task, const Trajectory& prefix, Rng& rng) const override {
    return sample_steps(task, prefix, 1, rng).front();
  }

  // The remote side owns its randomness; `rng` is not consumed.
  std::vector<Step> sample_steps(const Task& task, const Trajectory& prefix, std::size_t n,
                                 Rng& /*rng*/) const override {
    if (prefix.terminal) throw ContractError("prefix is already terminal");
    const auto index = prefix.steps.size() + 1;
    const std::string body = make_next_step_request(task.id, prefix.steps, n).dump();
    std::string last_error;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(std::chrono::duration<double>(config_.retry_backoff_seconds * attempt));
      httplib::Client client(config_.host, config_.port);
      const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
          std::chrono::duration<double>(config_.timeout_seconds));
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      auto res = client.Post(config_.path, body, "application/json");
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "HTTP status " + std::to_string(res->status);
        continue;
      }
      std::vector<Step> steps;
      try {
        steps = parse_next_step_response(res->body, n);
      } catch (const SchemaError& e) {
        throw PolicyError(index, e.what());
      }
      for (const auto& s : steps)
        if (s.index != static_cast<int>(index))
          throw PolicyError(index, "server returned step index " + std::to_string(s.index));
      return steps;
    }
    throw PolicyError(index, last_error + " after " + std::to_string(config_.retries + 1) + " attempts");
  }

  const RemotePolicyConfig& config() const { return config_; }

 private:
  RemotePolicyConfig config_;
};

}  // namespace birm
