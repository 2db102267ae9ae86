#pragma once

// Synthetic step-wise reasoning environments.
//
// A task is a hidden chain of modular operations x_t = op_t(x_{t-1}) mod P. A generator
// policy emits one asserted value per step; a step is correct when it equals the
// operation applied to the *previously asserted* value (local validity), so a wrong
// intermediate step can still be followed by a correct final answer.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "birm/error.hpp"
#include "birm/rng.hpp"

namespace birm {

enum class OpKind { add, mul };

struct Operation {
  OpKind kind = OpKind::add;
  int operand = 1;

  int apply(int x, int modulus) const {
    const auto m = static_cast<std::int64_t>(modulus);
    const auto r = kind == OpKind::add ? (x + static_cast<std::int64_t>(operand)) % m
                                       : (static_cast<std::int64_t>(x) * operand) % m;
    return static_cast<int>(r);
  }

  bool operator==(const Operation&) const = default;
};

inline bool is_prime(int n) {
  if (n < 2) return false;
  for (int d = 2; static_cast<long long>(d) * d <= n; ++d)
    if (n % d == 0) return false;
  return true;
}

struct TaskSpec {
  std::uint64_t seed = 0;
  int num_steps = 1;
  int modulus = 97;
  std::vector<double> error_profile;  // one error probability per step

  void validate() const {
    if (num_steps < 1) throw ValidationError("num_steps must be >= 1");
    if (modulus < 5 || !is_prime(modulus))
      throw ValidationError("modulus must be a prime >= 5, got " + std::to_string(modulus));
    if (error_profile.size() != static_cast<std::size_t>(num_steps))
      throw ValidationError("error_profile length " + std::to_string(error_profile.size()) +
                            " != num_steps " + std::to_string(num_steps));
    for (double e : error_profile)
      if (!(e >= 0.0 && e <= 1.0)) throw ValidationError("error probability outside [0,1]");
  }

  bool operator==(const TaskSpec&) const = default;
};

struct Task {
  std::string id;
  TaskSpec spec;
  std::vector<Operation> ops;
  int initial_value = 0;
  std::vector<int> truth_chain;  // num_steps + 1 entries
  int answer = 0;

  int num_steps() const { return spec.num_steps; }
  int modulus() const { return spec.modulus; }

  // Value a correct step `t` (1-based) asserts given the previously asserted value.
  int continuation(int t, int prev) const { return ops[static_cast<std::size_t>(t - 1)].apply(prev, spec.modulus); }

  bool operator==(const Task&) const = default;
};

struct Step {
  int index = 1;
  int value = 0;
  bool operator==(const Step&) const = default;
};

struct Trajectory {
  std::string task_id;
  std::vector<Step> steps;
  std::optional<int> final_answer;
  bool terminal = false;

  static Trajectory empty_for(const Task& task) { return Trajectory{task.id, {}, std::nullopt, false}; }

  std::size_t length() const { return steps.size(); }

  // Value the next step builds on: the last asserted value or the task's initial value.
  int last_value(const Task& task) const { return steps.empty() ? task.initial_value : steps.back().value; }

  void push(Step s, const Task& task) {
    if (terminal) throw ContractError("cannot extend a terminal trajectory");
    if (s.index != static_cast<int>(steps.size()) + 1)
      throw ContractError("step index " + std::to_string(s.index) + " does not follow prefix of length " +
                          std::to_string(steps.size()));
    steps.push_back(s);
    if (static_cast<int>(steps.size()) == task.num_steps()) {
      terminal = true;
      final_answer = s.value;
    }
  }

  bool operator==(const Trajectory&) const = default;
};

inline std::string task_id_for_seed(std::uint64_t seed) { return "q" + std::to_string(seed); }

namespace detail {
inline void fill_truth_chain(Task& task) {
  task.truth_chain.assign(1, task.initial_value);
  for (const auto& op : task.ops) task.truth_chain.push_back(op.apply(task.truth_chain.back(), task.modulus()));
  task.answer = task.truth_chain.back();
}
}  // namespace detail

inline Task make_task(const TaskSpec& spec) {
  spec.validate();
  Task task;
  task.id = task_id_for_seed(spec.seed);
  task.spec = spec;
  Rng rng(derive_seed(spec.seed, {0x7A5C}));
  const int p = spec.modulus;
  task.initial_value = static_cast<int>(rng.below(static_cast<std::uint64_t>(p)));
  task.ops.reserve(static_cast<std::size_t>(spec.num_steps));
  for (int t = 0; t < spec.num_steps; ++t) {
    Operation op;
    op.kind = rng.bernoulli(0.5) ? OpKind::add : OpKind::mul;
    op.operand = static_cast<int>(rng.between(1, p - 1));
    task.ops.push_back(op);
  }
  detail::fill_truth_chain(task);
  return task;
}

// Task with explicitly given hidden operations; used for crafted fixtures.
inline Task make_task(const TaskSpec& spec, std::vector<Operation> ops, int initial_value) {
  spec.validate();
  if (ops.size() != static_cast<std::size_t>(spec.num_steps)) throw ValidationError("need one operation per step");
  if (initial_value < 0 || initial_value >= spec.modulus) throw ValidationError("initial value outside [0,P)");
  for (const auto& op : ops)
    if (op.operand < 1 || op.operand >= spec.modulus) throw ValidationError("operand outside [1,P-1]");
  Task task;
  task.id = task_id_for_seed(spec.seed);
  task.spec = spec;
  task.initial_value = initial_value;
  task.ops = std::move(ops);
  detail::fill_truth_chain(task);
  return task;
}

// Throws unless `prefix` is a well-formed prefix for `task`.
inline void validate_prefix(const Task& task, const Trajectory& prefix) {
  const auto m = static_cast<std::size_t>(task.num_steps());
  if (prefix.steps.size() > m) throw ValidationError("prefix longer than task");
  for (std::size_t i = 0; i < prefix.steps.size(); ++i) {
    const auto& s = prefix.steps[i];
    if (s.index != static_cast<int>(i) + 1) throw ValidationError("step indices must be 1..k");
    if (s.value < 0 || s.value >= task.modulus()) throw ValidationError("asserted value outside [0,P)");
  }
  const bool full = prefix.steps.size() == m;
  if (prefix.terminal != full) throw ValidationError("terminal flag inconsistent with prefix length");
  if (full && prefix.final_answer != prefix.steps.back().value)
    throw ValidationError("final_answer must equal the last asserted value");
  if (!full && prefix.final_answer) throw ValidationError("non-terminal trajectory carries a final_answer");
}

// Draws the next step for a prefix; the seam where a real generator plugs in.
class GeneratorPolicy {
 public:
  virtual ~GeneratorPolicy() = default;

  virtual Step next_step(const Task& task, const Trajectory& prefix, Rng& rng) const = 0;

  // n independent continuations of the same prefix. Remote policies batch this.
  virtual std::vector<Step> sample_steps(const Task& task, const Trajectory& prefix, std::size_t n,
                                         Rng& rng) const {
    std::vector<Step> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(next_step(task, prefix, rng));
    return out;
  }
};

// With probability 1 - eps_t the step asserts the correct continuation; otherwise a value
// uniform over the P - 1 incorrect ones.
class SyntheticPolicy final : public GeneratorPolicy {
 public:
  SyntheticPolicy() = default;
  explicit SyntheticPolicy(std::vector<double> error_profile) : override_(std::move(error_profile)) {}

  Step next_step(const Task& task, const Trajectory& prefix, Rng& rng) const override {
    if (prefix.terminal) throw ContractError("prefix is already terminal");
    const int t = static_cast<int>(prefix.steps.size()) + 1;
    const int p = task.modulus();
    const int correct = task.continuation(t, prefix.last_value(task));
    const auto& profile = override_ ? *override_ : task.spec.error_profile;
    const double eps = profile.at(static_cast<std::size_t>(t - 1));
    if (rng.uniform() < eps) {
      const int offset = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(p - 1)));
      return Step{t, (correct + offset) % p};
    }
    return Step{t, correct};
  }

 private:
  std::optional<std::vector<double>> override_;
};

inline Trajectory rollout(const Task& task, Trajectory prefix, const GeneratorPolicy& policy, Rng& rng) {
  while (!prefix.terminal) {
    const auto index = prefix.steps.size() + 1;
    Step s;
    try {
      s = policy.next_step(task, prefix, rng);
    } catch (const PolicyError&) {
      throw;
    } catch (const std::exception& e) {
      throw PolicyError(index, e.what());
    }
    if (s.index != static_cast<int>(index))
      throw PolicyError(index, "policy returned step index " + std::to_string(s.index));
    if (s.value < 0 || s.value >= task.modulus()) throw PolicyError(index, "policy returned value outside [0,P)");
    prefix.push(s, task);
  }
  return prefix;
}

// 1 iff step t (1-based) asserts the operation applied to the previous asserted value.
inline int oracle_reward_label(const Task& task, const Trajectory& traj, int t) {
  if (t < 1 || t > static_cast<int>(traj.steps.size()))
    throw IndexError("step " + std::to_string(t) + " out of range 1.." + std::to_string(traj.steps.size()));
  const int prev = t == 1 ? task.initial_value : traj.steps[static_cast<std::size_t>(t - 2)].value;
  return traj.steps[static_cast<std::size_t>(t - 1)].value == task.continuation(t, prev) ? 1 : 0;
}

inline bool check_answer(const Task& task, std::optional<int> answer) {
  return answer.has_value() && *answer == task.answer;
}

// Exact success probabilities for every (steps taken, current value) state:
//   V[m][x]   = [x == answer]
//   V[t][x]   = (1 - e) V[t+1][c] + e / (P - 1) * (sum_y V[t+1][y] - V[t+1][c]),  c = op_{t+1}(x)
// Built backward in O(m * P).
class ValueTable {
 public:
  ValueTable(const Task& task, const std::vector<double>& error_profile)
      : modulus_(task.modulus()), num_steps_(task.num_steps()) {
    if (error_profile.size() != static_cast<std::size_t>(num_steps_))
      throw ValidationError("error profile length mismatch");
    const auto p = static_cast<std::size_t>(modulus_);
    table_.assign(static_cast<std::size_t>(num_steps_ + 1) * p, 0.0);
    at(num_steps_, task.answer) = 1.0;
    for (int t = num_steps_ - 1; t >= 0; --t) {
      const double e = error_profile[static_cast<std::size_t>(t)];
      double total = 0.0;
      for (int y = 0; y < modulus_; ++y) total += at(t + 1, y);
      for (int x = 0; x < modulus_; ++x) {
        const double hit = at(t + 1, task.continuation(t + 1, x));
        at(t, x) = (1.0 - e) * hit + e / static_cast<double>(modulus_ - 1) * (total - hit);
      }
    }
  }
  explicit ValueTable(const Task& task) : ValueTable(task, task.spec.error_profile) {}

  double value(int steps_taken, int current_value) const { return table_[index(steps_taken, current_value)]; }

  double value(const Task& task, const Trajectory& prefix) const {
    return value(static_cast<int>(prefix.steps.size()), prefix.last_value(task));
  }

 private:
  std::size_t index(int t, int x) const {
    return static_cast<std::size_t>(t) * static_cast<std::size_t>(modulus_) + static_cast<std::size_t>(x);
  }
  double& at(int t, int x) { return table_[index(t, x)]; }
  double at(int t, int x) const { return table_[index(t, x)]; }

  int modulus_;
  int num_steps_;
  std::vector<double> table_;
};

// Exact probability that a SyntheticPolicy rollout from `prefix` ends on the answer.
inline double oracle_value(const Task& task, const Trajectory& prefix, const std::vector<double>& error_profile) {
  validate_prefix(task, prefix);
  return ValueTable(task, error_profile).value(task, prefix);
}

inline double oracle_value(const Task& task, const Trajectory& prefix) {
  return oracle_value(task, prefix, task.spec.error_profile);
}

// Desk-scale task distribution.
struct TaskDistribution {
  int modulus = 97;
  int min_steps = 4;
  int max_steps = 12;
  double min_error = 0.05;
  double max_error = 0.35;

  void validate() const {
    if (min_steps < 1 || max_steps < min_steps) throw ValidationError("invalid step range");
    if (!(min_error >= 0 && max_error <= 1 && min_error <= max_error)) throw ValidationError("invalid error range");
    if (modulus < 5 || !is_prime(modulus)) throw ValidationError("modulus must be a prime >= 5");
  }

  // Spec for the index-th task of a set drawn under `master_seed`.
  TaskSpec sample(std::uint64_t master_seed, std::uint64_t index) const {
    validate();
    Rng rng(derive_seed(master_seed, {0x5E7, index}));
    TaskSpec spec;
    spec.seed = derive_seed(master_seed, {0x5EED, index}) >> 16;
    spec.modulus = modulus;
    spec.num_steps = static_cast<int>(rng.between(min_steps, max_steps));
    spec.error_profile.resize(static_cast<std::size_t>(spec.num_steps));
    for (auto& e : spec.error_profile) e = min_error + (max_error - min_error) * rng.uniform();
    return spec;
  }

  std::vector<Task> sample_tasks(std::uint64_t master_seed, std::size_t count, std::size_t offset = 0) const {
    std::vector<Task> tasks;
    tasks.reserve(count);
    for (std::size_t i = 0; i < count; ++i) tasks.push_back(make_task(sample(master_seed, offset + i)));
    return tasks;
  }
};

}  // namespace birm
