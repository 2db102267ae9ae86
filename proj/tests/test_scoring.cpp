#include <gtest/gtest.h>

#include <cmath>

#include "birm/annotate.hpp"
#include "birm/scoring.hpp"
#include "birm/search.hpp"

using namespace birm;

namespace {

Task three_step_task() {
  return make_task(TaskSpec{5, 3, 7, {0.2, 0.2, 0.2}}, {{OpKind::add, 1}, {OpKind::mul, 2}, {OpKind::add, 3}}, 0);
}

Trajectory prefix_of(const Task& task, const std::vector<int>& values) {
  auto traj = Trajectory::empty_for(task);
  for (std::size_t i = 0; i < values.size(); ++i) traj.push({static_cast<int>(i) + 1, values[i]}, task);
  return traj;
}

ScoredRecord scored(const std::string& id, std::vector<double> rewards, std::optional<std::vector<double>> values,
                    bool correct) {
  ScoredRecord r;
  r.trajectory.task_id = id;
  r.trajectory.question = {{"text", "fixture"}};
  for (std::size_t i = 0; i < rewards.size(); ++i) r.trajectory.steps.push_back({static_cast<int>(i) + 1, 0});
  r.trajectory.final_answer = 0;
  r.trajectory.answer_correct = correct;
  r.provenance = "fixture";
  r.reward_scores = std::move(rewards);
  r.value_scores = std::move(values);
  return r;
}

const TrainedSupervisor& tiny_model() {
  static const TrainedSupervisor model = [] {
    const TaskDistribution dist;
    const SyntheticPolicy policy;
    std::vector<TrajectoryRecord> records;
    for (std::size_t i = 0; i < 20; ++i) {
      const auto task = make_task(dist.sample(8, i));
      for (const auto& t : sample_pool(task, policy, i, 4)) records.push_back(make_record(task, t));
    }
    AnnotationConfig ac;
    ac.rollouts_per_step = 4;
    TrainConfig tc;
    tc.epochs = 3;
    return train_variant(annotate_corpus(records, policy, ac), Method::birm, tc);
  }();
  return model;
}

}  // namespace

TEST(Aggregate, Examples) {
  EXPECT_DOUBLE_EQ(aggregate(std::vector<double>{1, 1, 1}, Aggregation::prod), 1.0);
  EXPECT_DOUBLE_EQ(aggregate(std::vector<double>{0.5, 0.8, 0.6}, Aggregation::min), 0.5);
  EXPECT_DOUBLE_EQ(aggregate(std::vector<double>{0.5, 0.8, 0.6}, Aggregation::max), 0.8);
  EXPECT_DOUBLE_EQ(aggregate(std::vector<double>{0.2, 0.4}, Aggregation::avg), 0.3);
  EXPECT_NEAR(aggregate(std::vector<double>{0.9, 0.5, 0.8}, Aggregation::prod), 0.36, 1e-15);
  EXPECT_EQ(aggregate(std::vector<double>{0.9, 0.0, 0.8}, Aggregation::prod), 0.0);
}

TEST(Aggregate, EmptyIsError) {
  for (auto agg : {Aggregation::prod, Aggregation::min, Aggregation::max, Aggregation::avg})
    EXPECT_THROW(aggregate(std::vector<double>{}, agg), ValidationError);
}

TEST(Aggregate, LongProductDoesNotUnderflowPrematurely) {
  const std::vector<double> r(400, 0.2);
  const double g = aggregate(r, Aggregation::prod);
  EXPECT_GT(g, 0.0);
  EXPECT_NEAR(std::log(g), 400 * std::log(0.2), 1e-9);
}

TEST(Aggregate, ProdNonIncreasingAlongPrefix) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r;
    double prev = 1.0;
    for (int t = 0; t < 12; ++t) {
      r.push_back(rng.uniform());
      const double g = aggregate(r, Aggregation::prod);
      EXPECT_LE(g, prev);
      prev = g;
    }
  }
}

TEST(Aggregate, ProdArgmaxEqualsLogSumArgmax) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> prod_scores, log_scores;
    for (int c = 0; c < 10; ++c) {
      std::vector<double> r;
      double logs = 0.0;
      for (int t = 0; t < 8; ++t) {
        r.push_back(0.01 + 0.99 * rng.uniform());
        logs += std::log(r.back());
      }
      prod_scores.push_back(aggregate(r, Aggregation::prod));
      log_scores.push_back(logs);
    }
    EXPECT_EQ(argmax_first(prod_scores), argmax_first(log_scores));
  }
}

TEST(Combine, Examples) {
  EXPECT_NEAR(combine(0.5, 0.2, 1.0), 0.7, 1e-15);
  EXPECT_EQ(combine(0.5, 0.2, 0.0), 0.5);
  EXPECT_EQ(combine(0.0, 0.2, 3.0), 0.2 * 3.0);
}

TEST(Combine, MonotoneInBetaForPositiveH) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const double g = rng.uniform(), h = rng.uniform() + 1e-3;
    double prev = combine(g, h, 0.0);
    for (double beta = 0.25; beta <= 5; beta += 0.25) {
      EXPECT_GE(combine(g, h, beta), prev);
      prev = combine(g, h, beta);
    }
  }
}

TEST(ScoringConfig, NegativeBetaRejected) {
  EXPECT_THROW((ScoringConfig{Method::birm, Aggregation::prod, -0.5}).validate(), ValidationError);
}

TEST(BetaSweep, Parses) {
  const auto r = parse_beta_sweep("beta=0:4:0.5");
  ASSERT_EQ(r.size(), 9u);
  EXPECT_DOUBLE_EQ(r.front(), 0.0);
  EXPECT_DOUBLE_EQ(r.back(), 4.0);
  EXPECT_EQ(parse_beta_sweep("1.5,3,3.5"), (std::vector<double>{1.5, 3.0, 3.5}));
  EXPECT_EQ(parse_beta_sweep("2"), (std::vector<double>{2.0}));
  EXPECT_THROW(parse_beta_sweep("0:4"), ValidationError);
  EXPECT_THROW(parse_beta_sweep("a,b"), ValidationError);
  EXPECT_THROW(parse_beta_sweep("-1"), ValidationError);
}

// Hand-set heads on a 3-step trajectory: rewards (0.9, 0.5, 0.8), values (0.7, 0.6, 0.4).
TEST(ScorePartial, HandComputedFixture) {
  const auto task = three_step_task();
  const auto traj = prefix_of(task, {1, 2, 5});
  const auto heads = std::make_shared<FixedHeads>(std::vector<HeadOutputs>{{0.9, 0.7}, {0.5, 0.6}, {0.8, 0.4}});
  const struct {
    Aggregation agg;
    double g;
  } cases[] = {{Aggregation::prod, 0.36}, {Aggregation::min, 0.5}, {Aggregation::max, 0.9},
               {Aggregation::avg, 2.2 / 3}};
  for (const auto& c : cases) {
    const auto birm = HeadScorer(heads, {Method::birm, c.agg, 1.5}).score(task, traj);
    EXPECT_NEAR(birm.g, c.g, 1e-15);
    EXPECT_DOUBLE_EQ(birm.h, 0.4);
    EXPECT_NEAR(birm.f, c.g + 0.6, 1e-15);
    EXPECT_NEAR(HeadScorer(heads, {Method::prm, c.agg, 1.5}).score(task, traj).f, c.g, 1e-15);
    EXPECT_DOUBLE_EQ(HeadScorer(heads, {Method::vm, c.agg, 1.5}).score(task, traj).f, 0.4);
    EXPECT_DOUBLE_EQ(HeadScorer(heads, {Method::orm, c.agg, 1.5}).score(task, traj).f, 0.4);
  }
  // Prefix of length 2 under BiRM, prod: 0.45 + 1.5 * 0.6.
  const auto two = HeadScorer(heads, {Method::birm, Aggregation::prod, 1.5}).score(task, prefix_of(task, {1, 2}));
  EXPECT_NEAR(two.f, 0.45 + 0.9, 1e-15);
}

TEST(ScorePartial, SingleStepReductionsCoincide) {
  const auto task = three_step_task();
  const auto one = prefix_of(task, {1});
  const auto& model = tiny_model();
  const double r1 = model.forward(task, one).reward;
  for (auto agg : {Aggregation::prod, Aggregation::min, Aggregation::max, Aggregation::avg})
    EXPECT_NEAR(score_partial(model, task, one, {Method::prm, agg, 1.0}).g, r1, 1e-15);
}

TEST(ScorePartial, BetaZeroIsPrm) {
  const auto& model = tiny_model();
  const SyntheticPolicy policy;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto task = make_task(TaskDistribution{}.sample(9, i));
    Rng rng(i);
    auto prefix = Trajectory::empty_for(task);
    prefix.push(policy.next_step(task, prefix, rng), task);
    prefix.push(policy.next_step(task, prefix, rng), task);
    EXPECT_EQ(score_partial(model, task, prefix, {Method::birm, Aggregation::prod, 0.0}).f,
              score_partial(model, task, prefix, {Method::prm, Aggregation::prod, 0.0}).f);
  }
}

TEST(ScorePartial, OrmOnPartialPrefixIsContractError) {
  const auto task = three_step_task();
  const auto& model = tiny_model();
  EXPECT_THROW(score_partial(model, task, prefix_of(task, {1}), {Method::orm, Aggregation::prod, 1.0}),
               ContractError);
  EXPECT_NO_THROW(score_partial(model, task, prefix_of(task, {1, 2, 5}), {Method::orm, Aggregation::prod, 1.0}));
  EXPECT_THROW(score_partial(model, task, Trajectory::empty_for(task), {Method::prm, Aggregation::prod, 1.0}),
               ValidationError);
}

TEST(ModelScorer, AgreesWithScorePartialOnEveryPrefix) {
  const auto& model = tiny_model();
  const ScoringConfig cfg{Method::birm, Aggregation::min, 2.0};
  const auto scorer = make_model_scorer(model, cfg);
  const SyntheticPolicy policy;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto task = make_task(TaskDistribution{}.sample(10, i));
    const auto traj = sample_candidate(task, policy, i, 0);
    const auto all = scorer->score_prefixes(task, traj);
    auto prefix = Trajectory::empty_for(task);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      prefix.push(traj.steps[t], task);
      EXPECT_EQ(all[t], score_partial(model, task, prefix, cfg));
    }
  }
}

TEST(ModelScorer, BetaZeroRankingEqualsPrmRanking) {
  const auto& model = tiny_model();
  const auto prm = make_model_scorer(model, {Method::prm, Aggregation::prod, 1.0});
  const auto birm0 = make_model_scorer(model, {Method::birm, Aggregation::prod, 0.0});
  const SyntheticPolicy policy;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto task = make_task(TaskDistribution{}.sample(11, i));
    const auto pool = sample_pool(task, policy, i, 16);
    const auto a = score_candidates(task, pool, *prm), b = score_candidates(task, pool, *birm0);
    EXPECT_EQ(best_of_n_index(a), best_of_n_index(b));
  }
}

TEST(OracleScorer, ValueIsExact) {
  const auto scorer = make_oracle_scorer();
  const SyntheticPolicy policy;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto task = make_task(TaskDistribution{}.sample(12, i));
    const auto traj = sample_candidate(task, policy, 3, i);
    auto prefix = Trajectory::empty_for(task);
    const auto scores = scorer->score_prefixes(task, traj);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      prefix.push(traj.steps[t], task);
      EXPECT_NEAR(scores[t].f, oracle_value(task, prefix), 1e-15);
    }
    EXPECT_EQ(scores.back().f, check_answer(task, traj.final_answer) ? 1.0 : 0.0);
  }
}

TEST(NoisyScorer, ZeroSigmaIsIdentity) {
  const auto base = make_oracle_scorer({Method::birm, Aggregation::prod, 1.0});
  EXPECT_EQ(with_noise(base, {Method::birm, Aggregation::prod, 1.0}, NoiseConfig{}), base);
}

TEST(NoisyScorer, DeterministicPerPrefixAndRecombined) {
  const ScoringConfig cfg{Method::birm, Aggregation::prod, 2.0};
  const auto base = make_oracle_scorer(cfg);
  const auto noisy = with_noise(base, cfg, NoiseConfig{0.1, NoiseKind::laplace, 3, 5});
  const SyntheticPolicy policy;
  const auto task = make_task(TaskDistribution{}.sample(13, 0));
  const auto traj = sample_candidate(task, policy, 1, 0);
  const auto a = noisy->score_prefixes(task, traj), b = noisy->score_prefixes(task, traj);
  EXPECT_EQ(a, b);
  const auto clean = base->score_prefixes(task, traj);
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_NE(a[t].g, clean[t].g);
    EXPECT_DOUBLE_EQ(a[t].f, a[t].g + 2.0 * a[t].h);
  }
  // Scores of a shared prefix do not depend on what follows it.
  auto prefix = Trajectory::empty_for(task);
  prefix.push(traj.steps[0], task);
  prefix.push(traj.steps[1], task);
  EXPECT_EQ(noisy->score(task, prefix), a[1]);
}

TEST(NoisyScorer, PerturbationHasRequestedScale) {
  for (auto kind : {NoiseKind::gaussian, NoiseKind::laplace, NoiseKind::student_t}) {
    const ScoringConfig cfg{Method::prm, Aggregation::prod, 1.0};
    const auto base = make_oracle_scorer(cfg);
    const auto noisy = with_noise(base, cfg, NoiseConfig{0.3, kind, 5, 17});
    const SyntheticPolicy policy;
    double s1 = 0, s2 = 0;
    int n = 0;
    for (std::uint64_t i = 0; i < 400; ++i) {
      const auto task = make_task(TaskDistribution{}.sample(14, i));
      const auto traj = sample_candidate(task, policy, 2, i);
      const auto a = noisy->score_prefixes(task, traj), b = base->score_prefixes(task, traj);
      for (std::size_t t = 0; t < a.size(); ++t, ++n) {
        const double d = a[t].f - b[t].f;
        s1 += d;
        s2 += d * d;
      }
    }
    EXPECT_NEAR(s1 / n, 0.0, 0.02) << to_string(kind);
    EXPECT_NEAR(std::sqrt(s2 / n), 0.3, 0.03) << to_string(kind);
  }
}

TEST(ScoreOffline, ArithmeticExample) {
  const auto r = scored("a", {0.9, 0.9}, std::vector<double>{0.8}, true);
  const auto s = score_offline(r, {Method::birm, Aggregation::prod, 1.0});
  EXPECT_NEAR(s.g, 0.81, 1e-15);
  EXPECT_DOUBLE_EQ(s.h, 0.8);
  EXPECT_NEAR(s.f, 1.61, 1e-15);
}

TEST(ScoreOffline, PrmIgnoresValues) {
  auto a = scored("a", {0.9, 0.7}, std::vector<double>{0.1}, true);
  auto b = a;
  b.value_scores = std::nullopt;
  const ScoringConfig prm{Method::prm, Aggregation::prod, 1.0};
  EXPECT_EQ(score_offline(a, prm).f, score_offline(b, prm).f);
}

TEST(ScoreOffline, MissingSequenceNamed) {
  const auto r = scored("a", {0.9, 0.7}, std::nullopt, true);
  try {
    score_offline(r, {Method::birm, Aggregation::prod, 1.0});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("value_scores"), std::string::npos);
  }
  auto v = r;
  v.reward_scores = std::nullopt;
  v.value_scores = std::vector<double>{0.5, 0.5};
  try {
    score_offline(v, {Method::prm, Aggregation::prod, 1.0});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("reward_scores"), std::string::npos);
  }
}

// A low-reward, high-value candidate overtakes the PRM winner once beta = 3.
//   A: prod 0.857375, h 0.2  -> PRM 0.857375, BiRM(3) 1.457375
//   B: prod 0.512,    h 0.9  -> PRM 0.512,    BiRM(3) 3.212
//   C: prod 0.729,    h 0.5  -> PRM 0.729,    BiRM(3) 2.229
TEST(ScoreOffline, BetaThreeChangesTheWinner) {
  const std::vector<ScoredRecord> group{scored("q", {0.95, 0.95, 0.95}, std::vector<double>{0.2}, false),
                                        scored("q", {0.8, 0.8, 0.8}, std::vector<double>{0.9}, true),
                                        scored("q", {0.9, 0.9, 0.9}, std::vector<double>{0.5}, false)};
  const auto pick = [&](const ScoringConfig& cfg) {
    std::vector<double> f;
    for (const auto& r : group) f.push_back(score_offline(r, cfg).f);
    return argmax_first(f);
  };
  EXPECT_EQ(pick({Method::prm, Aggregation::prod, 1.0}), 0u);
  EXPECT_EQ(pick({Method::birm, Aggregation::prod, 3.0}), 1u);
  for (const auto& r : group)
    EXPECT_EQ(score_offline(r, {Method::birm, Aggregation::prod, 0.0}).f,
              score_offline(r, {Method::prm, Aggregation::prod, 0.0}).f);
}

TEST(ModelScorer, OutlivesTheModelItWasBuiltFrom) {
  const ScoringConfig cfg{Method::birm, Aggregation::prod, 1.0};
  std::shared_ptr<const Scorer> scorer;
  {
    const TrainedSupervisor copy = tiny_model();
    scorer = make_model_scorer(copy, cfg);
  }
  const auto task = three_step_task();
  const auto traj = prefix_of(task, {1, 2, 5});
  EXPECT_EQ(scorer->score(task, traj), score_partial(tiny_model(), task, traj, cfg));
}
