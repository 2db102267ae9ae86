#pragma once

// Trajectory scores from per-step head outputs.
//
//   g = Agg(r_1 .. r_t)      accumulated reward of the prefix
//   h = v_t                  value of the prefix (last step only)
//   f = g + beta * h
//
// Mode decides which part becomes the ranking score: PRM f = g, VM f = h, ORM f = h on
// terminal trajectories only, BiRM f = g + beta * h.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "birm/corpus.hpp"
#include "birm/env.hpp"
#include "birm/error.hpp"
#include "birm/method.hpp"
#include "birm/rng.hpp"
#include "birm/supervisor.hpp"

namespace birm {

enum class Aggregation { prod, min, max, avg };

inline const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::prod: return "prod";
    case Aggregation::min: return "min";
    case Aggregation::max: return "max";
    case Aggregation::avg: return "avg";
  }
  return "?";
}

inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "prod") return Aggregation::prod;
  if (s == "min") return Aggregation::min;
  if (s == "max") return Aggregation::max;
  if (s == "avg") return Aggregation::avg;
  throw ValidationError("unknown aggregation '" + s + "'");
}

struct ScoringConfig {
  Method mode = Method::birm;
  Aggregation aggregation = Aggregation::prod;
  double beta = 1.0;

  void validate() const {
    if (!(beta >= 0.0)) throw ValidationError("beta must be >= 0");
  }
};

// Beta grid from "lo:hi:step" (inclusive), "a,b,c" or a single number; an optional
// "beta=" prefix is accepted.
inline std::vector<double> parse_beta_sweep(std::string text) {
  if (text.rfind("beta=", 0) == 0) text = text.substr(5);
  const auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw ValidationError("bad beta sweep '" + text + "'");
    if (!(x >= 0.0)) throw ValidationError("beta must be >= 0");
    return x;
  };
  std::vector<std::string> parts;
  char sep = text.find(':') != std::string::npos ? ':' : ',';
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i)
    if (i == text.size() || text[i] == sep) {
      parts.push_back(text.substr(start, i - start));
      start = i + 1;
    }
  std::vector<double> out;
  if (sep == ':') {
    if (parts.size() != 3) throw ValidationError("beta range needs lo:hi:step");
    const double lo = number(parts[0]), hi = number(parts[1]), step = number(parts[2]);
    if (!(step > 0.0) || hi < lo) throw ValidationError("bad beta range '" + text + "'");
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  } else {
    for (const auto& p : parts) out.push_back(number(p));
  }
  return out;
}

struct CombinedScore {
  double g = 0.0;
  double h = 0.0;
  double f = 0.0;
  bool operator==(const CombinedScore&) const = default;
};

// prod is accumulated as a sum of logs so long products do not underflow.
inline double aggregate(std::span<const double> rewards, Aggregation agg) {
  if (rewards.empty()) throw ValidationError("cannot aggregate an empty reward sequence");
  switch (agg) {
    case Aggregation::prod: {
      double log_sum = 0.0;
      for (double r : rewards) {
        if (r <= 0.0) return 0.0;
        log_sum += std::log(r);
      }
      return std::exp(log_sum);
    }
    case Aggregation::min: {
      double m = rewards[0];
      for (double r : rewards) m = std::min(m, r);
      return m;
    }
    case Aggregation::max: {
      double m = rewards[0];
      for (double r : rewards) m = std::max(m, r);
      return m;
    }
    case Aggregation::avg: {
      double s = 0.0;
      for (double r : rewards) s += r;
      return s / static_cast<double>(rewards.size());
    }
  }
  return 0.0;
}

inline double combine(double g, double h, double beta) { return g + beta * h; }

// Core arithmetic shared by model-based and offline scoring. `rewards` may be empty in
// VM/ORM modes, where g is reported as 0.
inline CombinedScore combine_heads(std::span<const double> rewards, double last_value, bool terminal,
                                   const ScoringConfig& config) {
  config.validate();
  CombinedScore s;
  s.h = last_value;
  switch (config.mode) {
    case Method::prm:
      s.g = aggregate(rewards, config.aggregation);
      s.f = s.g;
      break;
    case Method::birm:
      s.g = aggregate(rewards, config.aggregation);
      s.f = combine(s.g, s.h, config.beta);
      break;
    case Method::orm:
      if (!terminal) throw ContractError("ORM scores complete trajectories only");
      [[fallthrough]];
    case Method::vm:
      s.g = rewards.empty() ? 0.0 : aggregate(rewards, config.aggregation);
      s.f = s.h;
      break;
  }
  return s;
}

// ---- Head sources --------------------------------------------------------------------

// Per-prefix (reward, value) readings for a trajectory: element t-1 reads prefix s_1..s_t.
class HeadSource {
 public:
  virtual ~HeadSource() = default;
  virtual std::vector<HeadOutputs> heads(const Task& task, const Trajectory& traj) const = 0;
};

class ModelHeads final : public HeadSource {
 public:
  explicit ModelHeads(TrainedSupervisor model) : model_(std::move(model)) {}
  std::vector<HeadOutputs> heads(const Task& task, const Trajectory& traj) const override {
    return model_.forward_prefixes(task, traj);
  }

 private:
  TrainedSupervisor model_;
};

// Exact heads: reward = local-validity label, value = DP success probability.
class OracleHeads final : public HeadSource {
 public:
  std::vector<HeadOutputs> heads(const Task& task, const Trajectory& traj) const override {
    const ValueTable table(task);
    std::vector<HeadOutputs> out;
    out.reserve(traj.steps.size());
    for (std::size_t t = 1; t <= traj.steps.size(); ++t) {
      out.push_back({static_cast<double>(oracle_reward_label(task, traj, static_cast<int>(t))),
                     table.value(static_cast<int>(t), traj.steps[t - 1].value)});
    }
    return out;
  }
};

// Hand-set head outputs keyed by prefix length; for fixtures.
class FixedHeads final : public HeadSource {
 public:
  explicit FixedHeads(std::vector<HeadOutputs> outputs) : outputs_(std::move(outputs)) {}
  std::vector<HeadOutputs> heads(const Task&, const Trajectory& traj) const override {
    if (traj.steps.size() > outputs_.size()) throw IndexError("fixture shorter than trajectory");
    return {outputs_.begin(), outputs_.begin() + static_cast<std::ptrdiff_t>(traj.steps.size())};
  }

 private:
  std::vector<HeadOutputs> outputs_;
};

// ---- Scorers ---------------------------------------------------------------------------

class Scorer {
 public:
  virtual ~Scorer() = default;
  // Scores of every prefix s_1..s_t of `traj` (t = 1..k).
  virtual std::vector<CombinedScore> score_prefixes(const Task& task, const Trajectory& traj) const = 0;

  virtual CombinedScore score(const Task& task, const Trajectory& prefix) const {
    if (prefix.steps.empty()) throw ValidationError("cannot score an empty prefix");
    return score_prefixes(task, prefix).back();
  }
};

// Combines a head source under a scoring configuration.
class HeadScorer final : public Scorer {
 public:
  HeadScorer(std::shared_ptr<const HeadSource> heads, ScoringConfig config)
      : heads_(std::move(heads)), config_(config) {
    config_.validate();
  }

  std::vector<CombinedScore> score_prefixes(const Task& task, const Trajectory& traj) const override {
    const auto outputs = heads_->heads(task, traj);
    std::vector<double> rewards;
    rewards.reserve(outputs.size());
    std::vector<CombinedScore> out;
    out.reserve(outputs.size());
    const auto m = static_cast<std::size_t>(task.num_steps());
    for (std::size_t t = 0; t < outputs.size(); ++t) {
      rewards.push_back(outputs[t].reward);
      const bool terminal = t + 1 == m;
      if (config_.mode == Method::orm && !terminal) {
        out.push_back(CombinedScore{});  // placeholder; only the terminal score is defined
        continue;
      }
      out.push_back(combine_heads(rewards, outputs[t].value, terminal, config_));
    }
    if (config_.mode == Method::orm && !traj.terminal) throw ContractError("ORM scores complete trajectories only");
    return out;
  }

  const ScoringConfig& config() const { return config_; }

 private:
  std::shared_ptr<const HeadSource> heads_;
  ScoringConfig config_;
};

inline CombinedScore score_partial(const TrainedSupervisor& model, const Task& task, const Trajectory& prefix,
                                   const ScoringConfig& config) {
  if (prefix.steps.empty()) throw ValidationError("cannot score an empty prefix");
  const auto outputs = model.forward_prefixes(task, prefix);
  std::vector<double> rewards;
  rewards.reserve(outputs.size());
  for (const auto& o : outputs) rewards.push_back(o.reward);
  return combine_heads(rewards, outputs.back().value, prefix.terminal, config);
}

// FNV-1a; stable across platforms, used to key deterministic noise.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

enum class NoiseKind { gaussian, laplace, student_t };

inline NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "gaussian") return NoiseKind::gaussian;
  if (s == "laplace") return NoiseKind::laplace;
  if (s == "student_t") return NoiseKind::student_t;
  throw ValidationError("unknown noise kind '" + s + "'");
}

inline const char* to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::laplace: return "laplace";
    case NoiseKind::student_t: return "student_t";
  }
  return "?";
}

struct NoiseConfig {
  double sigma = 0.0;  // scale multiplier of a unit-variance draw
  NoiseKind kind = NoiseKind::gaussian;
  int dof = 3;  // student_t only (>= 3 so the variance is finite)
  std::uint64_t seed = 0;

  void validate() const {
    if (!(sigma >= 0.0)) throw ValidationError("noise sigma must be >= 0");
    if (kind == NoiseKind::student_t && dof < 3) throw ValidationError("student_t noise needs dof >= 3");
  }
};

// Unit-variance zero-mean draw of the configured family.
inline double unit_noise(Rng& rng, const NoiseConfig& cfg) {
  switch (cfg.kind) {
    case NoiseKind::gaussian: return rng.normal();
    case NoiseKind::laplace: return rng.laplace() / std::sqrt(2.0);
    case NoiseKind::student_t: return rng.student_t(cfg.dof) / std::sqrt(cfg.dof / (cfg.dof - 2.0));
  }
  return 0.0;
}

// Imperfect verifier: perturbs g (reward-head aggregate) and h (value-head output) of an
// underlying scorer with independent zero-mean noise, then recombines per the mode. The
// perturbation is a fixed function of (seed, task, prefix contents), so the same input
// always receives the same error and curves stay prefix-consistent.
class NoisyScorer final : public Scorer {
 public:
  NoisyScorer(std::shared_ptr<const Scorer> base, ScoringConfig config, NoiseConfig noise)
      : base_(std::move(base)), config_(config), noise_(noise) {
    config_.validate();
    noise_.validate();
  }

  std::vector<CombinedScore> score_prefixes(const Task& task, const Trajectory& traj) const override {
    auto scores = base_->score_prefixes(task, traj);
    std::uint64_t key = fnv1a(task.id);
    for (std::size_t t = 0; t < scores.size(); ++t) {
      key = mix64(key ^ static_cast<std::uint64_t>(traj.steps[t].value) ^ (static_cast<std::uint64_t>(t) << 32));
      if (noise_.sigma == 0.0) continue;
      Rng rng(derive_seed(noise_.seed, {key}));
      const double eg = noise_.sigma * unit_noise(rng, noise_);
      const double eh = noise_.sigma * unit_noise(rng, noise_);
      auto& s = scores[t];
      s.g += eg;
      s.h += eh;
      switch (config_.mode) {
        case Method::prm: s.f = s.g; break;
        case Method::birm: s.f = combine(s.g, s.h, config_.beta); break;
        case Method::orm:
        case Method::vm: s.f = s.h; break;
      }
    }
    return scores;
  }

 private:
  std::shared_ptr<const Scorer> base_;
  ScoringConfig config_;
  NoiseConfig noise_;
};

inline std::shared_ptr<const Scorer> make_model_scorer(const TrainedSupervisor& model, ScoringConfig config) {
  return std::make_shared<HeadScorer>(std::make_shared<ModelHeads>(model), config);
}

inline std::shared_ptr<const Scorer> make_oracle_scorer(ScoringConfig config = {Method::vm, Aggregation::prod, 1.0}) {
  return std::make_shared<HeadScorer>(std::make_shared<OracleHeads>(), config);
}

inline std::shared_ptr<const Scorer> with_noise(std::shared_ptr<const Scorer> base, ScoringConfig config,
                                                NoiseConfig noise) {
  if (noise.sigma == 0.0) return base;
  return std::make_shared<NoisyScorer>(std::move(base), config, noise);
}

// ---- Offline re-ranking ------------------------------------------------------------------

inline CombinedScore score_offline(const ScoredRecord& record, const ScoringConfig& config) {
  const bool needs_rewards = config.mode == Method::prm || config.mode == Method::birm;
  const bool needs_values = config.mode != Method::prm;
  if (needs_rewards && !record.reward_scores)
    throw ValidationError("record " + record.trajectory.task_id + " lacks reward_scores");
  if (needs_values && !record.value_scores)
    throw ValidationError("record " + record.trajectory.task_id + " lacks value_scores");
  const auto rewards = needs_rewards ? std::span<const double>(*record.reward_scores) : std::span<const double>{};
  const double h = record.value_scores && !record.value_scores->empty() ? record.value_scores->back() : 0.0;
  return combine_heads(rewards, h, record.trajectory.final_answer.has_value(), config);
}

}  // namespace birm
