// Samples a few candidates for one synthetic task and ranks them with the exact
// value scorer, then runs a small beam search with the same scorer.

#include <iostream>

#include "birm/birm.hpp"

int main() {
  using namespace birm;
  const TaskDistribution dist;
  const Task task = make_task(dist.sample(42, 0));
  const SyntheticPolicy policy;

  std::cout << "task " << task.id << ": " << task.num_steps() << " steps mod " << task.modulus() << ", answer "
            << task.answer << '\n';

  const auto scorer = make_oracle_scorer({Method::birm, Aggregation::prod, 1.0});
  auto candidates = score_candidates(task, sample_pool(task, policy, 7, 8), *scorer);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    std::cout << "  candidate " << i << " answer " << *c.trajectory.final_answer << " f=" << c.score
              << (check_answer(task, c.trajectory.final_answer) ? " (correct)" : "") << '\n';
  }
  const auto& pick = best_of_n(candidates);
  std::cout << "best-of-8 answer " << *pick.trajectory.final_answer << '\n';
  if (auto vote = majority_vote(candidates)) std::cout << "majority answer " << *vote << '\n';

  const auto beam = beam_search(task, policy, *scorer, SearchConfig{8, 2, 64, 7});
  std::cout << "beam search (K=8, b=2) answer " << *beam.best.trajectory.final_answer << " after " << beam.rounds
            << " rounds\n";
}
