#pragma once

// Experiment harness: Best-of-N accuracy curves, beam-search grids and method
// comparisons, with CSV output.
//
// CSV schema (one header, fixed column order):
//   experiment  "bon" | "beam"
//   method      scorer name
//   n           Best-of-N size (bon rows), empty for beam rows
//   k           total sampling size K (beam rows), empty for bon rows
//   b           beam size, or "best" for best-over-b rows, empty for bon rows
//   seed        seed index, or "all" for rows aggregated over seeds
//   accuracy    fraction of tasks answered correctly, in [0,1]
//   stderr      standard error over seeds: sqrt(sum (a_s - mean)^2 / (S - 1)) / sqrt(S); 0 when S = 1
//   n_tasks     number of tasks evaluated
//   row_type    "seed" | "mean" | "smoothed" | "best"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "birm/env.hpp"
#include "birm/error.hpp"
#include "birm/parallel.hpp"
#include "birm/scoring.hpp"
#include "birm/search.hpp"

namespace birm {

struct CurvePoint {
  std::size_t n = 0;
  double accuracy = 0.0;
  double stderr_ = 0.0;
  std::size_t seeds = 1;
};

using Curve = std::vector<CurvePoint>;

// Trailing mean over min(window, i + 1) points.
inline std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window) {
  if (window < 1) throw ValidationError("window must be >= 1");
  std::vector<double> out(xs.size());
  double running = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    running += xs[i];
    if (i >= window) running -= xs[i - window];
    out[i] = running / static_cast<double>(std::min(window, i + 1));
  }
  return out;
}

inline Curve moving_average(const Curve& curve, std::size_t window = 10) {
  std::vector<double> acc, se;
  for (const auto& p : curve) {
    acc.push_back(p.accuracy);
    se.push_back(p.stderr_);
  }
  const auto sa = moving_average(acc, window), ss = moving_average(se, window);
  Curve out = curve;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].accuracy = sa[i];
    out[i].stderr_ = ss[i];
  }
  return out;
}

// max over N of the smoothed accuracy minus the smoothed accuracy at N_max (>= 0).
inline double scaling_decline(const Curve& curve, std::size_t window = 10) {
  if (curve.size() < 2) throw ValidationError("scaling decline needs at least two curve points");
  const auto smooth = moving_average(curve, window);
  double peak = smooth.front().accuracy;
  for (const auto& p : smooth) peak = std::max(peak, p.accuracy);
  return peak - smooth.back().accuracy;
}

inline double mean_of(const std::vector<double>& xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double stderr_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
}

// Candidate pool for (seed index, task index); must return at least n trajectories.
using PoolProvider = std::function<std::vector<Trajectory>(std::size_t seed_index, std::size_t task_index,
                                                           const Task& task, std::size_t n)>;

// Seed of the pool / search for (seed index, task index); candidate j then uses
// derive_seed(pool_seed, {j}).
inline std::uint64_t pool_seed(std::uint64_t master, std::size_t seed_index, std::size_t task_index) {
  return derive_seed(master, {0xB0, seed_index, task_index});
}

inline PoolProvider synthetic_pools(const GeneratorPolicy& policy, std::uint64_t master) {
  return [&policy, master](std::size_t s, std::size_t i, const Task& task, std::size_t n) {
    return sample_pool(task, policy, pool_seed(master, s, i), n);
  };
}

// Named scorer under comparison. A null scorer means majority vote.
struct MethodScorer {
  std::string name;
  std::shared_ptr<const Scorer> scorer;
};

struct BonSettings {
  std::size_t n_max = 512;
  std::size_t seeds = 5;
  std::uint64_t master_seed = 0;
  std::size_t window = 10;
  std::size_t workers = 1;

  void validate() const {
    if (n_max < 1) throw ValidationError("n_max must be >= 1");
    if (seeds < 1) throw ValidationError("seeds must be >= 1");
    if (window < 1) throw ValidationError("window must be >= 1");
  }
};

// Per method, per seed: accuracy at every N = 1..n_max.
struct BonCurves {
  std::vector<std::string> methods;
  std::vector<std::vector<std::vector<double>>> per_seed;  // [method][seed][N-1]
  std::size_t n_tasks = 0;

  Curve curve(std::size_t method) const {
    const auto& seeds = per_seed[method];
    Curve out;
    for (std::size_t n = 0; n < seeds.front().size(); ++n) {
      std::vector<double> acc;
      for (const auto& s : seeds) acc.push_back(s[n]);
      out.push_back({n + 1, mean_of(acc), stderr_of(acc), seeds.size()});
    }
    return out;
  }
};

namespace detail {

// correct[N-1] = 1 iff the selection over the first N candidates answers correctly.
inline std::vector<std::uint8_t> running_selection(const Task& task, const std::vector<Trajectory>& pool,
                                                   const Scorer* scorer) {
  std::vector<std::uint8_t> correct(pool.size());
  if (scorer == nullptr) {
    std::map<int, std::size_t> votes;
    std::optional<int> leader;
    std::size_t leader_count = 0;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (pool[j].final_answer) {
        const int a = *pool[j].final_answer;
        const auto c = ++votes[a];
        if (c > leader_count || (c == leader_count && leader && a < *leader)) {
          leader = a;
          leader_count = c;
        }
      }
      correct[j] = check_answer(task, leader) ? 1 : 0;
    }
    return correct;
  }
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t j = 0; j < pool.size(); ++j) {
    if (!pool[j].terminal) throw ContractError("best-of-n needs complete candidates");
    const double s = scorer->score(task, pool[j]).f;
    if (j == 0 || s > best_score) {
      best = j;
      best_score = s;
    }
    correct[j] = check_answer(task, pool[best].final_answer) ? 1 : 0;
  }
  return correct;
}

}  // namespace detail

// Samples n_max candidates per task and seed once and evaluates every N <= n_max on the
// first N of them, for every method on the same pools.
inline BonCurves run_bon_curves(const std::vector<Task>& tasks, const PoolProvider& pools,
                                const std::vector<MethodScorer>& methods, const BonSettings& settings) {
  settings.validate();
  if (tasks.empty()) throw ValidationError("empty task set");
  if (methods.empty()) throw ValidationError("no methods to evaluate");
  BonCurves out;
  out.n_tasks = tasks.size();
  for (const auto& m : methods) out.methods.push_back(m.name);
  out.per_seed.assign(methods.size(),
                      std::vector<std::vector<double>>(settings.seeds, std::vector<double>(settings.n_max, 0.0)));
  for (std::size_t s = 0; s < settings.seeds; ++s) {
    // [task][method][N-1]
    std::vector<std::vector<std::vector<std::uint8_t>>> hits(tasks.size());
    parallel_for(tasks.size(), settings.workers, [&](std::size_t i) {
      auto pool = pools(s, i, tasks[i], settings.n_max);
      if (pool.size() < settings.n_max) throw ValidationError("candidate pool smaller than n_max");
      pool.resize(settings.n_max);
      hits[i].resize(methods.size());
      for (std::size_t m = 0; m < methods.size(); ++m)
        hits[i][m] = detail::running_selection(tasks[i], pool, methods[m].scorer.get());
    });
    for (std::size_t m = 0; m < methods.size(); ++m) {
      auto& acc = out.per_seed[m][s];
      for (std::size_t i = 0; i < tasks.size(); ++i)
        for (std::size_t n = 0; n < settings.n_max; ++n) acc[n] += hits[i][m][n];
      for (auto& a : acc) a /= static_cast<double>(tasks.size());
    }
  }
  return out;
}

inline Curve run_bon_curve(const std::vector<Task>& tasks, const GeneratorPolicy& policy,
                           std::shared_ptr<const Scorer> scorer, const BonSettings& settings) {
  return run_bon_curves(tasks, synthetic_pools(policy, settings.master_seed), {{"scorer", std::move(scorer)}},
                        settings)
      .curve(0);
}

// ---- Beam grids ----------------------------------------------------------------------

inline std::vector<std::size_t> divisors_descending(std::size_t k) {
  std::vector<std::size_t> out;
  for (std::size_t b = k; b >= 1; --b)
    if (k % b == 0) out.push_back(b);
  return out;
}

struct BeamGridSettings {
  std::vector<std::size_t> k_grid{4, 8, 20, 100};
  std::size_t seeds = 3;
  std::uint64_t master_seed = 0;
  int max_steps = 64;
  std::size_t workers = 1;

  void validate() const {
    if (k_grid.empty()) throw ValidationError("empty K grid");
    for (auto k : k_grid)
      if (k < 1) throw ValidationError("every K must be >= 1");
    if (seeds < 1) throw ValidationError("seeds must be >= 1");
    if (max_steps < 1) throw ValidationError("max_steps must be >= 1");
  }
};

struct BeamCell {
  std::string method;
  std::size_t k = 0;
  std::size_t b = 0;
  std::vector<double> per_seed;
  double mean() const { return mean_of(per_seed); }
  double stderr_() const { return stderr_of(per_seed); }
};

struct BeamGrid {
  std::vector<BeamCell> cells;  // method-major, then K in grid order, then b descending
  std::size_t n_tasks = 0;

  // Best mean accuracy over every beam size of (method, K).
  double best_over_b(const std::string& method, std::size_t k) const {
    double best = -1.0;
    for (const auto& c : cells)
      if (c.method == method && c.k == k) best = std::max(best, c.mean());
    if (best < 0) throw ValidationError("no cells for " + method + " at K=" + std::to_string(k));
    return best;
  }
};

// Runs every divisor b of every K. The search seed for (seed s, task i) is
// pool_seed(master, s, i), shared with Best-of-N pools.
inline BeamGrid run_beam_grid(const std::vector<Task>& tasks, const GeneratorPolicy& policy,
                              const std::vector<MethodScorer>& methods, const BeamGridSettings& settings) {
  settings.validate();
  if (tasks.empty()) throw ValidationError("empty task set");
  BeamGrid grid;
  grid.n_tasks = tasks.size();
  for (const auto& m : methods) {
    if (!m.scorer) throw ValidationError("beam search needs a scorer for " + m.name);
    for (auto k : settings.k_grid) {
      for (auto b : divisors_descending(k)) {
        BeamCell cell{m.name, k, b, {}};
        for (std::size_t s = 0; s < settings.seeds; ++s) {
          std::vector<std::uint8_t> hit(tasks.size());
          parallel_for(tasks.size(), settings.workers, [&](std::size_t i) {
            SearchConfig cfg{k, b, settings.max_steps, pool_seed(settings.master_seed, s, i)};
            const auto r = beam_search(tasks[i], policy, *m.scorer, cfg);
            hit[i] = check_answer(tasks[i], r.best.trajectory.final_answer) ? 1 : 0;
          });
          cell.per_seed.push_back(std::accumulate(hit.begin(), hit.end(), 0.0) / static_cast<double>(tasks.size()));
        }
        grid.cells.push_back(std::move(cell));
      }
    }
  }
  return grid;
}

// ---- Reports --------------------------------------------------------------------------

inline std::uint64_t taskset_fingerprint(const std::vector<Task>& tasks) {
  std::uint64_t h = fnv1a("taskset");
  for (const auto& t : tasks) h = fnv1a(t.id, mix64(h));
  return h;
}

struct ExperimentReport {
  std::string method;
  nlohmann::json config;
  Curve curve;
  Curve smoothed;
  std::map<std::size_t, double> accuracy_at;  // N -> mean accuracy
  double decline = 0.0;
  std::uint64_t taskset = 0;
};

// Evaluates every method on shared pools; one report per method.
inline std::vector<ExperimentReport> compare_methods(const std::vector<Task>& tasks, const PoolProvider& pools,
                                                     const std::vector<MethodScorer>& methods,
                                                     const BonSettings& settings,
                                                     const nlohmann::json& config_snapshot = nlohmann::json::object()) {
  const auto curves = run_bon_curves(tasks, pools, methods, settings);
  const auto fp = taskset_fingerprint(tasks);
  std::vector<ExperimentReport> reports;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    ExperimentReport r;
    r.method = methods[m].name;
    r.config = config_snapshot;
    r.config["experiment"] = "bon";
    r.config["method"] = r.method;
    r.config["n_max"] = settings.n_max;
    r.config["seeds"] = settings.seeds;
    r.config["master_seed"] = settings.master_seed;
    r.config["window"] = settings.window;
    r.config["n_tasks"] = tasks.size();
    r.config["taskset"] = std::to_string(fp);
    r.curve = curves.curve(m);
    r.smoothed = moving_average(r.curve, settings.window);
    for (std::size_t n : {std::size_t{1}, std::size_t{128}, std::size_t{256}, std::size_t{512}, settings.n_max})
      if (n <= settings.n_max) r.accuracy_at[n] = r.curve[n - 1].accuracy;
    r.decline = r.curve.size() >= 2 ? scaling_decline(r.curve, settings.window) : 0.0;
    r.taskset = fp;
    reports.push_back(std::move(r));
  }
  return reports;
}

struct RankedMethod {
  std::string method;
  double accuracy;
};

// Ranks reports by accuracy at the largest N they share; reports must come from one taskset.
inline std::vector<RankedMethod> rank_reports(const std::vector<ExperimentReport>& reports) {
  if (reports.empty()) return {};
  for (const auto& r : reports)
    if (r.taskset != reports.front().taskset) throw ValidationError("reports were computed on different task sets");
  std::size_t n = reports.front().curve.size();
  for (const auto& r : reports) n = std::min(n, r.curve.size());
  std::vector<RankedMethod> out;
  for (const auto& r : reports) out.push_back({r.method, r.curve[n - 1].accuracy});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.accuracy > b.accuracy; });
  return out;
}

// ---- CSV -------------------------------------------------------------------------------

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{"experiment", "method", "n",       "k",       "b",
                                             "seed",       "accuracy", "stderr", "n_tasks", "row_type"};
  return cols;
}

struct CsvRow {
  std::string experiment, method, n, k, b, seed;
  double accuracy = 0.0, stderr_ = 0.0;
  std::size_t n_tasks = 0;
  std::string row_type;
};

inline std::string format_real(double x) {
  std::ostringstream os;
  os.precision(10);
  os << x;
  return os.str();
}

inline std::vector<CsvRow> bon_rows(const BonCurves& curves, std::size_t window) {
  std::vector<CsvRow> rows;
  for (std::size_t m = 0; m < curves.methods.size(); ++m) {
    const auto& name = curves.methods[m];
    for (std::size_t s = 0; s < curves.per_seed[m].size(); ++s)
      for (std::size_t n = 0; n < curves.per_seed[m][s].size(); ++n)
        rows.push_back({"bon", name, std::to_string(n + 1), "", "", std::to_string(s), curves.per_seed[m][s][n], 0.0,
                        curves.n_tasks, "seed"});
    const auto curve = curves.curve(m);
    for (const auto& p : curve)
      rows.push_back({"bon", name, std::to_string(p.n), "", "", "all", p.accuracy, p.stderr_, curves.n_tasks, "mean"});
    for (const auto& p : moving_average(curve, window))
      rows.push_back(
          {"bon", name, std::to_string(p.n), "", "", "all", p.accuracy, p.stderr_, curves.n_tasks, "smoothed"});
  }
  return rows;
}

inline std::vector<CsvRow> beam_rows(const BeamGrid& grid) {
  std::vector<CsvRow> rows;
  std::vector<std::pair<std::string, std::size_t>> keys;
  for (const auto& c : grid.cells) {
    for (std::size_t s = 0; s < c.per_seed.size(); ++s)
      rows.push_back({"beam", c.method, "", std::to_string(c.k), std::to_string(c.b), std::to_string(s), c.per_seed[s],
                      0.0, grid.n_tasks, "seed"});
    rows.push_back({"beam", c.method, "", std::to_string(c.k), std::to_string(c.b), "all", c.mean(), c.stderr_(),
                    grid.n_tasks, "mean"});
    if (keys.empty() || keys.back() != std::pair{c.method, c.k}) keys.emplace_back(c.method, c.k);
  }
  for (const auto& [method, k] : keys)
    rows.push_back({"beam", method, "", std::to_string(k), "best", "all", grid.best_over_b(method, k), 0.0,
                    grid.n_tasks, "best"});
  return rows;
}

inline void write_csv(const std::vector<CsvRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : rows)
    out << r.experiment << ',' << r.method << ',' << r.n << ',' << r.k << ',' << r.b << ',' << r.seed << ','
        << format_real(r.accuracy) << ',' << format_real(r.stderr_) << ',' << r.n_tasks << ',' << r.row_type << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// Parses and schema-checks a CSV written by write_csv.
inline std::vector<CsvRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("<header>", 1, "empty file");
  std::string expected;
  for (const auto& c : csv_columns()) expected += (expected.empty() ? "" : ",") + c;
  if (line != expected) throw SchemaError("<header>", 1, "unexpected header '" + line + "'");
  std::vector<CsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != csv_columns().size()) throw SchemaError("<row>", lineno, "wrong number of columns");
    CsvRow r;
    r.experiment = f[0];
    r.method = f[1];
    r.n = f[2];
    r.k = f[3];
    r.b = f[4];
    r.seed = f[5];
    try {
      r.accuracy = std::stod(f[6]);
      r.stderr_ = std::stod(f[7]);
      r.n_tasks = std::stoul(f[8]);
    } catch (const std::exception&) {
      throw SchemaError("accuracy", lineno, "non-numeric value");
    }
    r.row_type = f[9];
    if (r.experiment != "bon" && r.experiment != "beam") throw SchemaError("experiment", lineno, "unknown experiment");
    if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) throw SchemaError("accuracy", lineno, "outside [0,1]");
    if (r.row_type != "seed" && r.row_type != "mean" && r.row_type != "smoothed" && r.row_type != "best")
      throw SchemaError("row_type", lineno, "unknown row type");
    if (r.experiment == "bon" && (r.n.empty() || !r.k.empty() || !r.b.empty()))
      throw SchemaError("n", lineno, "bon rows carry n and no k/b");
    if (r.experiment == "beam" && (!r.n.empty() || r.k.empty() || r.b.empty()))
      throw SchemaError("k", lineno, "beam rows carry k and b and no n");
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace birm
