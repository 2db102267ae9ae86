#pragma once

// Test-time strategies over a generator policy and a scorer.
//
// RNG protocol. Candidate i of a search (or of a Best-of-N pool) draws from its own
// stream, seeded with derive_seed(seed, {i}). When a beam member is expanded, its first
// child continues the member's stream and child c >= 1 starts a fresh stream seeded with
// derive_seed(seed, {round, member_stream_id, c}). With b = K every member has exactly one
// child, so each member evolves exactly like the Best-of-N rollout with the same index.

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "birm/env.hpp"
#include "birm/error.hpp"
#include "birm/rng.hpp"
#include "birm/scoring.hpp"

namespace birm {

struct SearchConfig {
  std::size_t total_samples = 8;  // K
  std::size_t beam_size = 2;      // b
  int max_steps = 64;             // T
  std::uint64_t seed = 0;

  void validate() const {
    if (total_samples < 1) throw ValidationError("total sampling size K must be >= 1");
    if (beam_size < 1) throw ValidationError("beam size b must be >= 1");
    if (total_samples % beam_size != 0) throw ValidationError("K must be divisible by b");
    if (max_steps < 1) throw ValidationError("max steps T must be >= 1");
  }
};

struct Candidate {
  Trajectory trajectory;
  std::vector<CombinedScore> history;  // one score per prefix
  double score = 0.0;                  // f of the full candidate
};

// Stream of the i-th independent sample of a pool.
inline Rng candidate_stream(std::uint64_t seed, std::size_t i) { return Rng(derive_seed(seed, {i})); }

inline Trajectory sample_candidate(const Task& task, const GeneratorPolicy& policy, std::uint64_t seed,
                                   std::size_t i) {
  Rng rng = candidate_stream(seed, i);
  return rollout(task, Trajectory::empty_for(task), policy, rng);
}

inline std::vector<Trajectory> sample_pool(const Task& task, const GeneratorPolicy& policy, std::uint64_t seed,
                                           std::size_t n) {
  std::vector<Trajectory> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.push_back(sample_candidate(task, policy, seed, i));
  return pool;
}

inline Candidate make_candidate(const Task& task, Trajectory traj, const Scorer& scorer) {
  Candidate c;
  c.history = scorer.score_prefixes(task, traj);
  c.score = c.history.empty() ? 0.0 : c.history.back().f;
  c.trajectory = std::move(traj);
  return c;
}

inline std::vector<Candidate> score_candidates(const Task& task, std::vector<Trajectory> pool, const Scorer& scorer) {
  std::vector<Candidate> out;
  out.reserve(pool.size());
  for (auto& t : pool) out.push_back(make_candidate(task, std::move(t), scorer));
  return out;
}

// Index of the maximum; the first of equal maxima wins.
inline std::size_t argmax_first(std::span<const double> scores) {
  if (scores.empty()) throw ValidationError("argmax of an empty sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

inline std::size_t best_of_n_index(std::span<const Candidate> candidates) {
  if (candidates.empty()) throw ValidationError("best-of-n over an empty candidate set");
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (!c.trajectory.terminal) throw ContractError("best-of-n needs complete candidates");
    scores.push_back(c.score);
  }
  return argmax_first(scores);
}

inline const Candidate& best_of_n(std::span<const Candidate> candidates) {
  return candidates[best_of_n_index(candidates)];
}

// Most frequent final answer. Ties go to the smallest answer; candidates without an
// answer vote for "no answer", which loses every tie against a real answer.
inline std::optional<int> majority_vote(std::span<const Candidate> candidates) {
  if (candidates.empty()) throw ValidationError("majority vote over an empty candidate set");
  std::map<int, std::size_t> votes;
  std::size_t absent = 0;
  for (const auto& c : candidates) {
    if (c.trajectory.final_answer) ++votes[*c.trajectory.final_answer];
    else ++absent;
  }
  std::optional<int> best;
  std::size_t best_count = 0;
  for (const auto& [answer, count] : votes) {
    if (count > best_count) {
      best = answer;
      best_count = count;
    }
  }
  if (absent > best_count) return std::nullopt;
  return best;
}

struct BeamResult {
  Candidate best;
  std::vector<Candidate> beam;  // final beam in insertion order
  int rounds = 0;
};

namespace detail {

struct BeamMember {
  Candidate candidate;
  Rng rng;
  std::uint64_t stream_id;
};

// Indices of the top `keep` entries by score (ties by position), returned in position order.
inline std::vector<std::size_t> top_by_score(const std::vector<BeamMember>& pool, std::size_t keep) {
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return pool[a].candidate.score > pool[b].candidate.score; });
  idx.resize(std::min(keep, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline void extend_member(const Task& task, BeamMember& m, const GeneratorPolicy& policy, const Scorer& scorer) {
  const auto index = m.candidate.trajectory.steps.size() + 1;
  Step s;
  try {
    s = policy.next_step(task, m.candidate.trajectory, m.rng);
  } catch (const PolicyError&) {
    throw;
  } catch (const std::exception& e) {
    throw PolicyError(index, e.what());
  }
  if (s.index != static_cast<int>(index)) throw PolicyError(index, "policy returned a misnumbered step");
  m.candidate.trajectory.push(s, task);
  const auto score = scorer.score(task, m.candidate.trajectory);
  m.candidate.history.push_back(score);
  m.candidate.score = score.f;
}

}  // namespace detail

// Step-level beam search. Round 1 samples K one-step candidates and keeps the top b.
// Every later round replaces each incomplete member by K/b one-step extensions, carries
// complete members over with their frozen scores, and keeps the top b. The search stops
// once every member is complete or T rounds have run. Returns the best complete member,
// or the best member overall if none completed.
inline BeamResult beam_search(const Task& task, const GeneratorPolicy& policy, const Scorer& scorer,
                              const SearchConfig& config) {
  config.validate();
  const std::size_t K = config.total_samples, b = config.beam_size, fanout = K / b;

  std::vector<detail::BeamMember> pool;
  pool.reserve(K);
  for (std::size_t i = 0; i < K; ++i) {
    detail::BeamMember m{Candidate{Trajectory::empty_for(task), {}, 0.0}, candidate_stream(config.seed, i), i};
    detail::extend_member(task, m, policy, scorer);
    pool.push_back(std::move(m));
  }
  std::vector<detail::BeamMember> beam;
  for (auto i : detail::top_by_score(pool, b)) beam.push_back(std::move(pool[i]));

  int round = 1;
  std::uint64_t next_stream = K;
  const auto all_complete = [&] {
    return std::all_of(beam.begin(), beam.end(), [](const auto& m) { return m.candidate.trajectory.terminal; });
  };
  while (!all_complete() && round < config.max_steps) {
    ++round;
    pool.clear();
    for (auto& member : beam) {
      if (member.candidate.trajectory.terminal) {
        pool.push_back(std::move(member));
        continue;
      }
      for (std::size_t c = 1; c < fanout; ++c) {
        detail::BeamMember child{member.candidate,
                                 Rng(derive_seed(config.seed, {static_cast<std::uint64_t>(round), member.stream_id, c})),
                                 next_stream++};
        detail::extend_member(task, child, policy, scorer);
        pool.push_back(std::move(child));
      }
      // First child continues the parent's stream; it goes first among its siblings.
      detail::extend_member(task, member, policy, scorer);
      pool.insert(pool.end() - static_cast<std::ptrdiff_t>(fanout - 1), std::move(member));
    }
    beam.clear();
    for (auto i : detail::top_by_score(pool, b)) beam.push_back(std::move(pool[i]));
  }

  BeamResult result;
  result.rounds = round;
  for (auto& m : beam) result.beam.push_back(std::move(m.candidate));
  std::vector<double> complete_scores;
  std::vector<std::size_t> complete_index;
  for (std::size_t i = 0; i < result.beam.size(); ++i) {
    if (result.beam[i].trajectory.terminal) {
      complete_scores.push_back(result.beam[i].score);
      complete_index.push_back(i);
    }
  }
  if (!complete_scores.empty()) {
    result.best = result.beam[complete_index[argmax_first(complete_scores)]];
  } else {
    std::vector<double> scores;
    for (const auto& c : result.beam) scores.push_back(c.score);
    result.best = result.beam[argmax_first(scores)];
  }
  return result;
}

}  // namespace birm
