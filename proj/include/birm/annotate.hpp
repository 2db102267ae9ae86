#pragma once

// Step-label producers: oracle reward labels plus four value-label estimators
// (Monte-Carlo soft / hard, outcome replication, entropy-regularized).

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "birm/corpus.hpp"
#include "birm/env.hpp"
#include "birm/error.hpp"
#include "birm/parallel.hpp"
#include "birm/rng.hpp"

namespace birm {

enum class ValueLabelMode { mc_soft, mc_hard, outcome, er_prm };

inline const char* to_string(ValueLabelMode m) {
  switch (m) {
    case ValueLabelMode::mc_soft: return "mc_soft";
    case ValueLabelMode::mc_hard: return "mc_hard";
    case ValueLabelMode::outcome: return "outcome";
    case ValueLabelMode::er_prm: return "er_prm";
  }
  return "?";
}

inline ValueLabelMode value_label_mode_from_string(const std::string& s) {
  if (s == "mc_soft") return ValueLabelMode::mc_soft;
  if (s == "mc_hard") return ValueLabelMode::mc_hard;
  if (s == "outcome") return ValueLabelMode::outcome;
  if (s == "er_prm") return ValueLabelMode::er_prm;
  throw ValidationError("unknown annotation mode '" + s + "'");
}

struct AnnotationConfig {
  std::size_t rollouts_per_step = 8;
  ValueLabelMode mode = ValueLabelMode::mc_soft;
  double eta = 2.0;  // er_prm only
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const {
    if (rollouts_per_step < 1) throw ValidationError("rollouts_per_step must be >= 1");
    if (mode == ValueLabelMode::er_prm && !(eta > 0.0)) throw ValidationError("eta must be > 0");
  }
};

// Outcome of N rollouts from one prefix. Soft and hard labels read the same draws.
struct RolloutStats {
  std::size_t rollouts = 0;
  std::size_t successes = 0;
  std::vector<int> outcomes;  // 1 per successful rollout, in draw order

  double soft() const { return static_cast<double>(successes) / static_cast<double>(rollouts); }
  int hard() const { return successes > 0 ? 1 : 0; }
};

inline RolloutStats mc_rollouts(const Task& task, const Trajectory& prefix, std::size_t n,
                                const GeneratorPolicy& policy, Rng& rng) {
  if (n < 1) throw ValidationError("rollout count must be >= 1");
  RolloutStats stats;
  stats.rollouts = n;
  stats.outcomes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto done = rollout(task, prefix, policy, rng);
    const int ok = check_answer(task, done.final_answer) ? 1 : 0;
    stats.outcomes.push_back(ok);
    stats.successes += static_cast<std::size_t>(ok);
  }
  return stats;
}

inline double mc_value_soft(const Task& task, const Trajectory& prefix, std::size_t n,
                            const GeneratorPolicy& policy, Rng& rng) {
  return mc_rollouts(task, prefix, n, policy, rng).soft();
}

inline int mc_value_hard(const Task& task, const Trajectory& prefix, std::size_t n, const GeneratorPolicy& policy,
                         Rng& rng) {
  return mc_rollouts(task, prefix, n, policy, rng).hard();
}

inline std::vector<double> outcome_value(std::size_t num_steps, bool answer_correct) {
  return std::vector<double>(num_steps, answer_correct ? 1.0 : 0.0);
}

inline std::vector<double> outcome_value(const Task& task, const Trajectory& traj) {
  if (!traj.terminal) throw ContractError("outcome labels need a terminal trajectory");
  return outcome_value(traj.steps.size(), check_answer(task, traj.final_answer));
}

// (1/eta) ln E[exp(eta * y)] for y ~ Bernoulli(p):  (1/eta) ln(1 - p + p e^eta),
// written as log1p(p * expm1(eta)) / eta so it stays accurate as eta -> 0.
inline double er_prm_label(double p, double eta) {
  if (!(eta > 0.0)) throw ValidationError("eta must be > 0");
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("success probability outside [0,1]");
  return std::log1p(p * std::expm1(eta)) / eta;
}

// Same label from raw rollout outcomes via log-sum-exp; used to cross-check the closed form.
inline double er_prm_label_from_outcomes(std::span<const int> outcomes, double eta) {
  if (!(eta > 0.0)) throw ValidationError("eta must be > 0");
  if (outcomes.empty()) throw ValidationError("no rollout outcomes");
  double hi = -INFINITY;
  for (int y : outcomes) hi = std::max(hi, eta * y);
  double acc = 0.0;
  for (int y : outcomes) acc += std::exp(eta * y - hi);
  return (hi + std::log(acc / static_cast<double>(outcomes.size()))) / eta;
}

// Precomputed per-step statistics carried by non-synthetic records under
// question["annotations"] = {"step_correct":[0|1], "rollout_counts":[int], "success_counts":[int]}.
struct PrecomputedStats {
  std::vector<int> step_correct;
  std::vector<std::size_t> rollout_counts;
  std::vector<std::size_t> success_counts;
};

inline std::optional<PrecomputedStats> precomputed_stats(const TrajectoryRecord& r) {
  if (!r.question.is_object() || !r.question.contains("annotations")) return std::nullopt;
  const auto& a = r.question["annotations"];
  PrecomputedStats s;
  s.step_correct = detail::field_as<std::vector<int>>(a, "step_correct", 0);
  s.rollout_counts = detail::field_as<std::vector<std::size_t>>(a, "rollout_counts", 0);
  s.success_counts = detail::field_as<std::vector<std::size_t>>(a, "success_counts", 0);
  const auto n = r.steps.size();
  if (s.step_correct.size() != n || s.rollout_counts.size() != n || s.success_counts.size() != n)
    throw ValidationError("annotation statistics length differs from steps for " + r.task_id);
  for (std::size_t i = 0; i < n; ++i)
    if (s.rollout_counts[i] == 0 || s.success_counts[i] > s.rollout_counts[i])
      throw ValidationError("inconsistent rollout statistics for " + r.task_id);
  return s;
}

namespace detail {

inline double value_label_from(ValueLabelMode mode, std::size_t rollouts, std::size_t successes, bool answer_correct,
                               double eta) {
  const double soft = static_cast<double>(successes) / static_cast<double>(rollouts);
  switch (mode) {
    case ValueLabelMode::mc_soft: return soft;
    case ValueLabelMode::mc_hard: return successes > 0 ? 1.0 : 0.0;
    case ValueLabelMode::outcome: return answer_correct ? 1.0 : 0.0;
    case ValueLabelMode::er_prm: return er_prm_label(soft, eta);
  }
  return soft;
}

}  // namespace detail

// Labels one record. Rollouts for step t start from the prefix s_1..s_t and use the
// stream derive_seed(seed, {record_index, t}); each prefix draws fresh rollouts.
inline LabeledRecord annotate_record(const TrajectoryRecord& record, std::size_t record_index,
                                     const GeneratorPolicy& policy, const AnnotationConfig& config) {
  LabeledRecord out{record, {}, {}};
  const auto n = record.steps.size();
  out.reward_labels.reserve(n);
  out.value_labels.reserve(n);

  if (auto task = task_for(record)) {
    const auto traj = trajectory_of(record, *task);
    Trajectory prefix = Trajectory::empty_for(*task);
    for (std::size_t t = 1; t <= n; ++t) {
      prefix.push(traj.steps[t - 1], *task);
      out.reward_labels.push_back(oracle_reward_label(*task, traj, static_cast<int>(t)));
      if (config.mode == ValueLabelMode::outcome) {
        out.value_labels.push_back(record.answer_correct ? 1.0 : 0.0);
        continue;
      }
      Rng rng(derive_seed(config.seed, {record_index, t}));
      const auto stats = mc_rollouts(*task, prefix, config.rollouts_per_step, policy, rng);
      out.value_labels.push_back(
          detail::value_label_from(config.mode, stats.rollouts, stats.successes, record.answer_correct, config.eta));
    }
    return out;
  }
  if (auto stats = precomputed_stats(record)) {
    for (std::size_t i = 0; i < n; ++i) {
      out.reward_labels.push_back(stats->step_correct[i] ? 1.0 : 0.0);
      out.value_labels.push_back(detail::value_label_from(config.mode, stats->rollout_counts[i],
                                                          stats->success_counts[i], record.answer_correct,
                                                          config.eta));
    }
    return out;
  }
  throw ValidationError("record " + record.task_id + " has no environment oracle and no rollout statistics");
}

inline std::vector<LabeledRecord> annotate_corpus(const std::vector<TrajectoryRecord>& records,
                                                  const GeneratorPolicy& policy, const AnnotationConfig& config) {
  config.validate();
  std::vector<LabeledRecord> out(records.size());
  parallel_for(records.size(), config.workers,
               [&](std::size_t i) { out[i] = annotate_record(records[i], i, policy, config); });
  return out;
}

}  // namespace birm
