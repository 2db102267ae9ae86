#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "birm/env.hpp"

using namespace birm;

namespace {

TaskSpec spec_of(std::uint64_t seed, int m, int p, double eps) {
  return TaskSpec{seed, m, p, std::vector<double>(static_cast<std::size_t>(m), eps)};
}

Trajectory prefix_of(const Task& task, const std::vector<int>& values) {
  auto traj = Trajectory::empty_for(task);
  for (std::size_t i = 0; i < values.size(); ++i) traj.push({static_cast<int>(i) + 1, values[i]}, task);
  return traj;
}

// Probability of each full path from `from` onward, by explicit enumeration of every
// step outcome; independent of the backward table.
void enumerate_paths(const Task& task, int t, int prev, double prob, std::map<int, double>& answer_mass) {
  if (t > task.num_steps()) {
    answer_mass[prev] += prob;
    return;
  }
  const int p = task.modulus();
  const double e = task.spec.error_profile[static_cast<std::size_t>(t - 1)];
  const int correct = task.ops[static_cast<std::size_t>(t - 1)].apply(prev, p);
  for (int y = 0; y < p; ++y) {
    const double step_prob = y == correct ? 1.0 - e : e / (p - 1);
    if (step_prob > 0) enumerate_paths(task, t + 1, y, prob * step_prob, answer_mass);
  }
}

std::map<int, double> answer_distribution(const Task& task, const Trajectory& prefix) {
  std::map<int, double> mass;
  enumerate_paths(task, static_cast<int>(prefix.steps.size()) + 1, prefix.last_value(task), 1.0, mass);
  return mass;
}

}  // namespace

TEST(Rng, DeriveSeedSeparatesKeys) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
}

TEST(Rng, BelowIsUniform) {
  Rng rng(5);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
  for (int c : counts) EXPECT_NEAR(c / 70000.0, 1.0 / 7, 0.01);
}

TEST(Rng, NormalAndLaplaceMoments) {
  Rng rng(9);
  double s1 = 0, s2 = 0, l1 = 0, l2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal(), l = rng.laplace();
    s1 += z;
    s2 += z * z;
    l1 += l;
    l2 += l * l;
  }
  EXPECT_NEAR(s1 / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
  EXPECT_NEAR(l1 / n, 0.0, 0.02);
  EXPECT_NEAR(l2 / n, 2.0, 0.05);  // Laplace(0, 1) has variance 2
}

TEST(MakeTask, TruthChainFollowsOps) {
  const auto task = make_task(spec_of(0, 1, 5, 0.0), {{OpKind::add, 2}}, 1);
  EXPECT_EQ(task.truth_chain, (std::vector<int>{1, 3}));
  EXPECT_EQ(task.answer, 3);
}

TEST(MakeTask, DrawnTaskSatisfiesRecurrence) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto task = make_task(spec_of(seed, 6, 97, 0.1));
    ASSERT_EQ(task.truth_chain.size(), 7u);
    EXPECT_EQ(task.truth_chain[0], task.initial_value);
    for (int t = 1; t <= 6; ++t) {
      const auto& op = task.ops[static_cast<std::size_t>(t - 1)];
      EXPECT_GE(op.operand, 1);
      EXPECT_LE(op.operand, 96);
      EXPECT_EQ(task.truth_chain[static_cast<std::size_t>(t)], op.apply(task.truth_chain[t - 1], 97));
    }
    EXPECT_EQ(task.answer, task.truth_chain.back());
  }
}

TEST(MakeTask, Deterministic) {
  EXPECT_EQ(make_task(spec_of(17, 8, 97, 0.2)), make_task(spec_of(17, 8, 97, 0.2)));
  EXPECT_NE(make_task(spec_of(17, 8, 97, 0.2)).ops, make_task(spec_of(18, 8, 97, 0.2)).ops);
}

TEST(MakeTask, RejectsInvalidSpecs) {
  EXPECT_THROW(make_task(spec_of(0, 3, 6, 0.1)), ValidationError);
  EXPECT_THROW(make_task(spec_of(0, 3, 3, 0.1)), ValidationError);
  EXPECT_THROW(make_task(spec_of(0, 0, 5, 0.1)), ValidationError);
  EXPECT_THROW(make_task(spec_of(0, 3, 5, 1.5)), ValidationError);
  EXPECT_THROW(make_task(spec_of(0, 3, 5, -0.1)), ValidationError);
  EXPECT_THROW(make_task(TaskSpec{0, 3, 5, {0.1, 0.1}}), ValidationError);
}

TEST(Trajectory, TerminalExactlyAtFullLength) {
  const auto task = make_task(spec_of(3, 2, 5, 0.0));
  auto traj = Trajectory::empty_for(task);
  traj.push({1, 4}, task);
  EXPECT_FALSE(traj.terminal);
  EXPECT_FALSE(traj.final_answer.has_value());
  traj.push({2, 0}, task);
  EXPECT_TRUE(traj.terminal);
  EXPECT_EQ(traj.final_answer, 0);
  EXPECT_THROW(traj.push({3, 1}, task), ContractError);
}

TEST(Trajectory, RejectsMisnumberedStep) {
  const auto task = make_task(spec_of(3, 3, 5, 0.0));
  auto traj = Trajectory::empty_for(task);
  EXPECT_THROW(traj.push({2, 1}, task), ContractError);
}

TEST(SyntheticPolicy, ZeroErrorIsAlwaysCorrect) {
  const auto task = make_task(spec_of(4, 10, 97, 0.0));
  const SyntheticPolicy policy;
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto traj = rollout(task, Trajectory::empty_for(task), policy, rng);
    for (int t = 1; t <= 10; ++t) {
      EXPECT_EQ(traj.steps[static_cast<std::size_t>(t - 1)].value, task.truth_chain[static_cast<std::size_t>(t)]);
      EXPECT_EQ(oracle_reward_label(task, traj, t), 1);
    }
    EXPECT_TRUE(check_answer(task, traj.final_answer));
  }
}

TEST(SyntheticPolicy, CertainErrorIsNeverCorrect) {
  const auto task = make_task(spec_of(4, 10, 5, 1.0));
  const SyntheticPolicy policy;
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto traj = rollout(task, Trajectory::empty_for(task), policy, rng);
    for (int t = 1; t <= 10; ++t) EXPECT_EQ(oracle_reward_label(task, traj, t), 0);
  }
}

TEST(SyntheticPolicy, ErrorFrequencyMatchesProfile) {
  const auto task = make_task(spec_of(6, 1, 97, 0.5));
  const SyntheticPolicy policy;
  Rng rng(3);
  int wrong = 0;
  const auto empty = Trajectory::empty_for(task);
  for (int i = 0; i < 10000; ++i) wrong += policy.next_step(task, empty, rng).value != task.answer;
  EXPECT_NEAR(wrong / 10000.0, 0.5, 0.02);
}

TEST(SyntheticPolicy, WrongValuesAreUniformOverIncorrect) {
  const auto task = make_task(spec_of(6, 1, 7, 1.0));
  const SyntheticPolicy policy;
  Rng rng(4);
  std::vector<int> counts(7, 0);
  const auto empty = Trajectory::empty_for(task);
  for (int i = 0; i < 60000; ++i) ++counts[static_cast<std::size_t>(policy.next_step(task, empty, rng).value)];
  EXPECT_EQ(counts[static_cast<std::size_t>(task.answer)], 0);
  for (int v = 0; v < 7; ++v) {
    if (v == task.answer) continue;
    EXPECT_NEAR(counts[static_cast<std::size_t>(v)] / 60000.0, 1.0 / 6, 0.01);
  }
}

TEST(SyntheticPolicy, TerminalPrefixIsAContractViolation) {
  const auto task = make_task(spec_of(6, 1, 5, 0.0));
  const SyntheticPolicy policy;
  Rng rng(0);
  const auto done = prefix_of(task, {task.answer});
  EXPECT_THROW(policy.next_step(task, done, rng), ContractError);
}

TEST(Rollout, TerminalPrefixUnchanged) {
  const auto task = make_task(spec_of(7, 2, 5, 0.5));
  const auto done = prefix_of(task, {1, 2});
  const SyntheticPolicy policy;
  Rng rng(0);
  EXPECT_EQ(rollout(task, done, policy, rng), done);
}

TEST(Rollout, ZeroErrorFollowsTruthChain) {
  const auto task = make_task(spec_of(8, 3, 97, 0.0));
  const SyntheticPolicy policy;
  Rng rng(0);
  const auto traj = rollout(task, Trajectory::empty_for(task), policy, rng);
  ASSERT_EQ(traj.steps.size(), 3u);
  for (int t = 1; t <= 3; ++t) EXPECT_EQ(traj.steps[t - 1].value, task.truth_chain[static_cast<std::size_t>(t)]);
  EXPECT_EQ(traj.final_answer, task.answer);
}

TEST(Rollout, Deterministic) {
  const auto task = make_task(spec_of(9, 8, 97, 0.3));
  const SyntheticPolicy policy;
  Rng a(77), b(77);
  for (int i = 0; i < 10; ++i)
    EXPECT_EQ(rollout(task, Trajectory::empty_for(task), policy, a),
              rollout(task, Trajectory::empty_for(task), policy, b));
}

TEST(Rollout, AnswerDistributionMatchesEnumeration) {
  const auto task = make_task(spec_of(10, 2, 5, 0.5));
  auto exact = answer_distribution(task, Trajectory::empty_for(task));
  const SyntheticPolicy policy;
  Rng rng(11);
  std::map<int, double> freq;
  const int n = 20000;
  for (int i = 0; i < n; ++i) freq[*rollout(task, Trajectory::empty_for(task), policy, rng).final_answer] += 1.0 / n;
  double tv = 0.0;
  for (int v = 0; v < 5; ++v) tv += std::abs(freq[v] - exact[v]);
  EXPECT_LE(tv / 2, 0.03);
}

class FailingPolicy final : public GeneratorPolicy {
 public:
  Step next_step(const Task&, const Trajectory& prefix, Rng&) const override {
    if (prefix.steps.size() == 2) throw std::runtime_error("transport down");
    return {static_cast<int>(prefix.steps.size()) + 1, 0};
  }
};

TEST(Rollout, PolicyFailureCarriesStepIndex) {
  const auto task = make_task(spec_of(12, 5, 5, 0.0));
  Rng rng(0);
  try {
    rollout(task, Trajectory::empty_for(task), FailingPolicy{}, rng);
    FAIL() << "expected PolicyError";
  } catch (const PolicyError& e) {
    EXPECT_EQ(e.step_index(), 3u);
  }
}

TEST(RewardLabel, WrongStepIsZero) {
  const auto task = make_task(spec_of(13, 3, 97, 0.0));
  const int wrong = (task.truth_chain[1] + 1) % 97;
  const auto traj = prefix_of(task, {wrong});
  EXPECT_EQ(oracle_reward_label(task, traj, 1), 0);
}

TEST(RewardLabel, OutOfRangeIsIndexError) {
  const auto task = make_task(spec_of(13, 3, 97, 0.0));
  const auto traj = prefix_of(task, {task.truth_chain[1]});
  EXPECT_THROW(oracle_reward_label(task, traj, 0), IndexError);
  EXPECT_THROW(oracle_reward_label(task, traj, 2), IndexError);
}

// Hand-enumerated cancellation case, P = 5: initial 1, ops (add 2, mul 3),
// truth chain 1 -> 3 -> 4. A trajectory asserting 0 then 4 is wrong at step 1
// (1 + 2 = 3, not 0); step 2 asserts 4 while 0 * 3 = 0, so it is locally wrong
// too, yet the final answer is correct.
TEST(RewardLabel, CancellationFixture) {
  const auto task = make_task(spec_of(14, 2, 5, 0.0), {{OpKind::add, 2}, {OpKind::mul, 3}}, 1);
  ASSERT_EQ(task.truth_chain, (std::vector<int>{1, 3, 4}));
  const auto cancel = prefix_of(task, {0, 4});
  EXPECT_EQ(oracle_reward_label(task, cancel, 1), 0);
  EXPECT_EQ(oracle_reward_label(task, cancel, 2), 0);
  EXPECT_TRUE(check_answer(task, cancel.final_answer));
  // Asserting 2 at step 1 (wrong) then 2 * 3 = 6 = 1 (locally valid) ends wrong.
  const auto valid_after_error = prefix_of(task, {2, 1});
  EXPECT_EQ(oracle_reward_label(task, valid_after_error, 1), 0);
  EXPECT_EQ(oracle_reward_label(task, valid_after_error, 2), 1);
  EXPECT_FALSE(check_answer(task, valid_after_error.final_answer));
}

TEST(CheckAnswer, Basics) {
  const auto task = make_task(spec_of(15, 4, 97, 0.1));
  EXPECT_TRUE(check_answer(task, task.answer));
  EXPECT_FALSE(check_answer(task, (task.answer + 1) % 97));
  EXPECT_FALSE(check_answer(task, std::nullopt));
}

TEST(OracleValue, TerminalPrefixIsIndicator) {
  const auto task = make_task(spec_of(16, 2, 5, 0.3));
  EXPECT_DOUBLE_EQ(oracle_value(task, prefix_of(task, {0, task.answer})), 1.0);
  EXPECT_DOUBLE_EQ(oracle_value(task, prefix_of(task, {0, (task.answer + 1) % 5})), 0.0);
}

TEST(OracleValue, ZeroErrorOnChainIsOne) {
  const auto task = make_task(spec_of(17, 6, 97, 0.0));
  for (int k = 0; k <= 6; ++k) {
    std::vector<int> values(task.truth_chain.begin() + 1, task.truth_chain.begin() + 1 + k);
    EXPECT_DOUBLE_EQ(oracle_value(task, prefix_of(task, values)), 1.0);
  }
}

TEST(OracleValue, MatchesBruteForceOnSmallTasks) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto task = make_task(spec_of(seed, 2, 5, 0.5));
    const auto empty = Trajectory::empty_for(task);
    EXPECT_NEAR(oracle_value(task, empty), answer_distribution(task, empty)[task.answer], 1e-12);
    for (int v = 0; v < 5; ++v) {
      const auto one = prefix_of(task, {v});
      EXPECT_NEAR(oracle_value(task, one), answer_distribution(task, one)[task.answer], 1e-12);
    }
  }
}

TEST(OracleValue, MatchesBruteForceWithUnevenProfile) {
  const TaskSpec spec{21, 4, 7, {0.1, 0.6, 0.0, 0.35}};
  const auto task = make_task(spec);
  const auto empty = Trajectory::empty_for(task);
  EXPECT_NEAR(oracle_value(task, empty), answer_distribution(task, empty)[task.answer], 1e-12);
}

// V(prefix) = sum over next steps of P(step) * V(prefix + step).
TEST(OracleValue, IsAMartingale) {
  Rng pick(99);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto task = make_task(TaskDistribution{}.sample(5, seed));
    const ValueTable table(task);
    const int p = task.modulus();
    const int k = static_cast<int>(pick.below(static_cast<std::uint64_t>(task.num_steps())));
    const int x = static_cast<int>(pick.below(static_cast<std::uint64_t>(p)));
    const double e = task.spec.error_profile[static_cast<std::size_t>(k)];
    const int c = task.continuation(k + 1, x);
    double expected = 0.0;
    for (int y = 0; y < p; ++y) expected += (y == c ? 1.0 - e : e / (p - 1)) * table.value(k + 1, y);
    EXPECT_NEAR(table.value(k, x), expected, 1e-12);
  }
}

TEST(TaskDistribution, RespectsRanges) {
  const TaskDistribution dist;
  for (const auto& task : dist.sample_tasks(3, 200)) {
    EXPECT_GE(task.num_steps(), 4);
    EXPECT_LE(task.num_steps(), 12);
    EXPECT_EQ(task.modulus(), 97);
    for (double e : task.spec.error_profile) {
      EXPECT_GE(e, 0.05);
      EXPECT_LE(e, 0.35);
    }
  }
  EXPECT_EQ(dist.sample_tasks(3, 5, 10).front(), dist.sample_tasks(3, 11).back());
}
