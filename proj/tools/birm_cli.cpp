// birm: data generation, annotation, training, evaluation and reporting.
//
// Every subcommand writes its artifacts under --run-dir together with
// config.<subcommand>.ini, its full effective configuration; `birm_cli --config <that file>`
// reruns it.
//
// Exit codes: 0 ok, 1 internal, 2 usage, 3 missing or unreadable file, 4 schema, 5 validation.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "birm/birm.hpp"

namespace fs = std::filesystem;
using namespace birm;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::size_t workers = default_workers();
  std::string run_dir = "run";
};

struct GenTasksOpts {
  std::size_t count = 100;
  std::size_t offset = 0;
  TaskDistribution dist;
  std::string out = "tasks.jsonl";
};

struct SampleOpts {
  std::string tasks = "tasks.jsonl";
  std::size_t responses = 15;
  std::string policy = "synthetic";
  RemotePolicyConfig remote;
  std::string out = "trajectories.jsonl";
};

struct AnnotateOpts {
  std::string in = "trajectories.jsonl";
  std::string mode = "mc_soft";
  std::size_t rollouts = 8;
  double eta = 2.0;
  std::string out = "labeled.jsonl";
};

struct TrainOpts {
  std::string in = "labeled.jsonl";
  std::string mode = "birm";
  TrainConfig train;
  FeatureConfig features;
  std::string out = "model.json";
};

struct ScorerOpts {
  std::string scorer = "model";
  std::vector<std::string> checkpoints;
  std::string mode;  // empty: the checkpoint's own variant
  std::string aggregation = "prod";
  double beta = 1.0;
  std::string beta_sweep;  // "beta=lo:hi:step" or "a,b,c"; one scorer per value
  double noise = 0.0;
  std::string noise_kind = "gaussian";
  int noise_dof = 3;
  bool majority = false;
};

struct EvalBonOpts {
  std::string tasks = "tasks.jsonl";
  ScorerOpts scoring;
  std::size_t n_max = 128;
  std::size_t seeds = 5;
  std::size_t window = 10;
  std::string out = "bon.csv";
};

struct EvalBeamOpts {
  std::string tasks = "tasks.jsonl";
  ScorerOpts scoring;
  std::vector<std::size_t> k_grid{4, 8, 20, 100};
  std::size_t seeds = 3;
  int max_rounds = 64;
  std::string out = "beam.csv";
};

struct RerankOpts {
  std::string in = "scored.jsonl";
  std::string mode = "birm";
  std::string aggregation = "prod";
  double beta = 1.0;
  std::string out = "rerank.json";
};

struct ReportOpts {
  std::vector<std::string> inputs;
  std::string out = "report.md";
};

// Inputs resolve against the working directory, outputs against the run directory.
fs::path output_path(const Globals& g, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : fs::path(g.run_dir) / path;
}

void progress(const std::string& msg) { std::cerr << "[birm] " << msg << '\n'; }

std::vector<Task> load_tasks(const std::string& path) {
  std::vector<Task> tasks;
  for (const auto& spec : read_jsonl<TaskSpec>(path)) tasks.push_back(make_task(spec));
  if (tasks.empty()) throw ValidationError("no tasks in " + path);
  return tasks;
}

NoiseConfig noise_of(const ScorerOpts& o, std::uint64_t seed) {
  NoiseConfig n;
  n.sigma = o.noise;
  n.kind = noise_kind_from_string(o.noise_kind);
  n.dof = o.noise_dof;
  n.seed = derive_seed(seed, {0x401});
  return n;
}

std::vector<double> betas_for(const ScorerOpts& o, Method mode) {
  if (o.beta_sweep.empty()) return {o.beta};
  if (mode != Method::birm) throw ValidationError("--beta-sweep needs birm scoring");
  return parse_beta_sweep(o.beta_sweep);
}

std::string scorer_name(const std::string& base, const ScorerOpts& o, double beta) {
  if (o.beta_sweep.empty()) return base;
  std::ostringstream os;
  os << base << "_beta=" << beta;
  return os.str();
}

// beam = true maps outcome models to value-mode scoring of partial prefixes.
std::vector<MethodScorer> build_scorers(const ScorerOpts& o, std::uint64_t seed, bool beam) {
  std::vector<MethodScorer> out;
  const auto agg = aggregation_from_string(o.aggregation);
  const auto noise = noise_of(o, seed);
  if (o.scorer == "oracle") {
    const Method mode = o.mode.empty() ? Method::vm : method_from_string(o.mode);
    for (double beta : betas_for(o, mode)) {
      const ScoringConfig cfg{mode, agg, beta};
      out.push_back({scorer_name(std::string("oracle_") + to_string(mode), o, beta),
                     with_noise(make_oracle_scorer(cfg), cfg, noise)});
    }
  } else if (o.scorer == "model") {
    if (o.checkpoints.empty()) throw ValidationError("--scorer model needs at least one --checkpoint");
    for (const auto& path : o.checkpoints) {
      auto model = load_checkpoint(path);
      Method mode = o.mode.empty() ? model.variant : method_from_string(o.mode);
      if (beam && mode == Method::orm) mode = Method::vm;
      for (double beta : betas_for(o, mode)) {
        const ScoringConfig cfg{mode, agg, beta};
        out.push_back({scorer_name(to_string(model.variant), o, beta),
                       with_noise(make_model_scorer(model, cfg), cfg, noise)});
      }
    }
  } else {
    throw ValidationError("unknown scorer '" + o.scorer + "' (expected oracle or model)");
  }
  if (o.majority) {
    if (beam) throw ValidationError("majority vote is not a step scorer");
    out.push_back({"majority", nullptr});
  }
  return out;
}

void add_scorer_options(CLI::App* cmd, ScorerOpts& o) {
  cmd->add_option("--scorer", o.scorer, "oracle or model")->check(CLI::IsMember({"oracle", "model"}));
  cmd->add_option("--checkpoint", o.checkpoints, "trained supervisor checkpoint (repeatable)");
  cmd->add_option("--mode", o.mode, "scoring mode orm|prm|vm|birm (default: checkpoint variant)");
  cmd->add_option("--agg", o.aggregation, "prod|min|max|avg");
  cmd->add_option("--beta", o.beta, "weight of the value term");
  cmd->add_option("--beta-sweep", o.beta_sweep, "several betas, e.g. beta=0:4:0.5 or 1.5,3,3.5");
  cmd->add_option("--noise", o.noise, "noisy-verifier scale (0 disables)");
  cmd->add_option("--noise-kind", o.noise_kind, "gaussian|laplace|student_t");
  cmd->add_option("--noise-dof", o.noise_dof, "student_t degrees of freedom");
}

int run_gen_tasks(const Globals& g, const GenTasksOpts& o) {
  const auto tasks = o.dist.sample_tasks(g.seed, o.count, o.offset);
  std::vector<TaskSpec> specs;
  for (const auto& t : tasks) specs.push_back(t.spec);
  write_jsonl(specs, output_path(g, o.out));
  progress("wrote " + std::to_string(specs.size()) + " tasks");
  return 0;
}

int run_sample(const Globals& g, const SampleOpts& o) {
  const auto tasks = load_tasks(o.tasks);
  std::unique_ptr<GeneratorPolicy> policy;
  if (o.policy == "synthetic") policy = std::make_unique<SyntheticPolicy>();
  else if (o.policy == "remote") policy = std::make_unique<RemotePolicy>(o.remote);
  else throw ValidationError("unknown policy '" + o.policy + "'");
  std::vector<std::vector<TrajectoryRecord>> per_task(tasks.size());
  parallel_for(tasks.size(), o.policy == "remote" ? 1 : g.workers, [&](std::size_t i) {
    for (auto& t : sample_pool(tasks[i], *policy, derive_seed(g.seed, {0x5A, i}), o.responses))
      per_task[i].push_back(make_record(tasks[i], t));
  });
  std::vector<TrajectoryRecord> records;
  for (auto& v : per_task)
    for (auto& r : v) records.push_back(std::move(r));
  write_jsonl(records, output_path(g, o.out));
  progress("wrote " + std::to_string(records.size()) + " trajectories");
  return 0;
}

int run_annotate(const Globals& g, const AnnotateOpts& o) {
  const auto records = read_jsonl<TrajectoryRecord>(o.in);
  AnnotationConfig cfg;
  cfg.mode = value_label_mode_from_string(o.mode);
  cfg.rollouts_per_step = o.rollouts;
  cfg.eta = o.eta;
  cfg.seed = derive_seed(g.seed, {0xA7});
  cfg.workers = g.workers;
  const SyntheticPolicy policy;
  const auto labeled = annotate_corpus(records, policy, cfg);
  write_jsonl(labeled, output_path(g, o.out));
  progress("labeled " + std::to_string(labeled.size()) + " trajectories");
  return 0;
}

int run_train(const Globals& g, const TrainOpts& o) {
  const auto corpus = read_jsonl<LabeledRecord>(o.in);
  auto cfg = o.train;
  cfg.seed = derive_seed(g.seed, {0x7A});
  const auto model = train_variant(corpus, method_from_string(o.mode), cfg, o.features);
  save_checkpoint(model, output_path(g, o.out));
  const auto& last = model.history.back().loss;
  progress("trained " + o.mode + ": L_PRM=" + std::to_string(last.prm) + " L_VM=" + std::to_string(last.vm));
  return 0;
}

int run_eval_bon(const Globals& g, const EvalBonOpts& o) {
  const auto tasks = load_tasks(o.tasks);
  const auto methods = build_scorers(o.scoring, g.seed, false);
  BonSettings s;
  s.n_max = o.n_max;
  s.seeds = o.seeds;
  s.window = o.window;
  s.master_seed = derive_seed(g.seed, {0xB0});
  s.workers = g.workers;
  const SyntheticPolicy policy;
  const auto curves = run_bon_curves(tasks, synthetic_pools(policy, s.master_seed), methods, s);
  write_csv(bon_rows(curves, s.window), output_path(g, o.out));
  for (std::size_t m = 0; m < methods.size(); ++m)
    progress(methods[m].name + " acc@" + std::to_string(o.n_max) + " = " +
             std::to_string(curves.curve(m).back().accuracy));
  return 0;
}

int run_eval_beam(const Globals& g, const EvalBeamOpts& o) {
  const auto tasks = load_tasks(o.tasks);
  const auto methods = build_scorers(o.scoring, g.seed, true);
  BeamGridSettings s;
  s.k_grid = o.k_grid;
  s.seeds = o.seeds;
  s.max_steps = o.max_rounds;
  s.master_seed = derive_seed(g.seed, {0xB0});
  s.workers = g.workers;
  const SyntheticPolicy policy;
  const auto grid = run_beam_grid(tasks, policy, methods, s);
  write_csv(beam_rows(grid), output_path(g, o.out));
  progress("wrote " + std::to_string(grid.cells.size()) + " beam cells");
  return 0;
}

int run_rerank(const Globals& g, const RerankOpts& o) {
  const auto groups = ingest_scored(o.in);
  const ScoringConfig cfg{method_from_string(o.mode), aggregation_from_string(o.aggregation), o.beta};
  cfg.validate();
  nlohmann::json selections = nlohmann::json::array();
  std::size_t correct = 0;
  for (const auto& group : groups) {
    std::vector<double> scores;
    for (const auto& c : group.candidates) scores.push_back(score_offline(c, cfg).f);
    const auto best = argmax_first(scores);
    const auto& pick = group.candidates[best].trajectory;
    correct += pick.answer_correct ? 1 : 0;
    selections.push_back({{"task_id", group.task_id},
                          {"index", best},
                          {"score", scores[best]},
                          {"final_answer", pick.final_answer ? nlohmann::json(*pick.final_answer) : nlohmann::json()},
                          {"answer_correct", pick.answer_correct}});
  }
  const double acc = groups.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(groups.size());
  const nlohmann::json report{{"mode", to_string(cfg.mode)},
                              {"aggregation", to_string(cfg.aggregation)},
                              {"beta", cfg.beta},
                              {"groups", groups.size()},
                              {"accuracy", acc},
                              {"selections", selections}};
  const auto path = output_path(g, o.out);
  std::ofstream(path) << report.dump(2) << '\n';
  progress("re-ranked " + std::to_string(groups.size()) + " groups, accuracy " + std::to_string(acc));
  return 0;
}

int run_report(const Globals& g, const ReportOpts& o) {
  if (o.inputs.empty()) throw ValidationError("report needs at least one --in CSV");
  std::ostringstream md;
  for (const auto& in : o.inputs) {
    const auto rows = read_csv(in);
    md << "## " << fs::path(in).filename().string() << "\n\n";
    // Best-of-N: mean accuracy at powers of two plus the smoothed decline per method.
    std::map<std::string, Curve> curves;
    std::map<std::string, std::map<std::string, std::map<std::string, double>>> beam;  // method -> k -> b
    std::size_t window = 10;
    for (const auto& r : rows) {
      if (r.experiment == "bon" && r.row_type == "mean")
        curves[r.method].push_back({std::stoul(r.n), r.accuracy, r.stderr_, 0});
      if (r.experiment == "beam" && (r.row_type == "mean" || r.row_type == "best"))
        beam[r.method][r.k][r.b] = r.accuracy;
    }
    if (!curves.empty()) {
      md << "| method | N | accuracy | stderr |\n|---|---|---|---|\n";
      for (const auto& [method, curve] : curves)
        for (const auto& p : curve)
          if ((p.n & (p.n - 1)) == 0 || p.n == curve.back().n)
            md << "| " << method << " | " << p.n << " | " << p.accuracy << " | " << p.stderr_ << " |\n";
      md << "\n| method | scaling decline (window " << window << ") |\n|---|---|\n";
      for (const auto& [method, curve] : curves)
        md << "| " << method << " | " << (curve.size() >= 2 ? scaling_decline(curve, window) : 0.0) << " |\n";
      md << '\n';
    }
    if (!beam.empty()) {
      md << "| method | K | b | accuracy |\n|---|---|---|---|\n";
      for (const auto& [method, ks] : beam)
        for (const auto& [k, bs] : ks)
          for (const auto& [b, acc] : bs) md << "| " << method << " | " << k << " | " << b << " | " << acc << " |\n";
      md << '\n';
    }
  }
  std::ofstream(output_path(g, o.out)) << md.str();
  progress("wrote report");
  return 0;
}

int fail(int code, const std::string& kind, const std::string& message) {
  std::string flat = message;
  for (auto& ch : flat)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::cerr << "error code=" << code << " kind=" << kind << " message=" << nlohmann::json(flat).dump() << '\n';
  return code;
}

}  // namespace

std::string ini_value(const CLI::Option& opt) {
  const auto quote = [](const std::string& v) { return "\"" + v + "\""; };
  if (opt.count() == 0) return quote(opt.get_default_str());
  const auto& r = opt.results();
  if (r.size() == 1) return quote(r.front());
  std::string out = "[";
  for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + quote(r[i]);
  return out + "]";
}

// Effective configuration of this invocation: global options, then the chosen subcommand
// as an INI section. `birm_cli --config <file>` replays it.
std::string echo_config(const CLI::App& app, const CLI::App& sub) {
  std::ostringstream out;
  const auto emit = [&](const CLI::App& a) {
    for (const auto* opt : a.get_options()) {
      const auto name = opt->get_single_name();
      if (name == "help" || name == "config" || !opt->get_configurable()) continue;
      if (opt->count() == 0 && (opt->get_default_str().empty() || opt->get_default_str() == "{}")) continue;
      out << name << "=" << ini_value(*opt) << "\n";
    }
  };
  emit(app);
  out << "\n[" << sub.get_name() << "]\n";
  emit(sub);
  return out.str();
}

int main(int argc, char** argv) {
  CLI::App app{"BiRM verifier toolkit on synthetic arithmetic chains"};
  app.require_subcommand(1, 1);
  app.set_config("--config", "", "INI config file; flags override it");
  app.allow_config_extras(false);

  Globals g;
  app.add_option("--seed", g.seed, "master seed")->capture_default_str();
  app.add_option("--workers", g.workers, "worker threads")->capture_default_str();
  app.add_option("--run-dir", g.run_dir, "output directory")->capture_default_str();
  app.option_defaults()->always_capture_default();

  GenTasksOpts gen;
  auto* c_gen = app.add_subcommand("gen-tasks", "draw synthetic tasks");
  c_gen->add_option("--count", gen.count);
  c_gen->add_option("--offset", gen.offset);
  c_gen->add_option("--modulus", gen.dist.modulus);
  c_gen->add_option("--min-steps", gen.dist.min_steps);
  c_gen->add_option("--max-steps", gen.dist.max_steps);
  c_gen->add_option("--min-error", gen.dist.min_error);
  c_gen->add_option("--max-error", gen.dist.max_error);
  c_gen->add_option("--out", gen.out);

  SampleOpts smp;
  auto* c_smp = app.add_subcommand("sample", "sample trajectories from a generator policy");
  c_smp->add_option("--tasks", smp.tasks);
  c_smp->add_option("--responses", smp.responses);
  c_smp->add_option("--policy", smp.policy)->check(CLI::IsMember({"synthetic", "remote"}));
  c_smp->add_option("--host", smp.remote.host);
  c_smp->add_option("--port", smp.remote.port);
  c_smp->add_option("--path", smp.remote.path);
  c_smp->add_option("--timeout", smp.remote.timeout_seconds);
  c_smp->add_option("--retries", smp.remote.retries);
  c_smp->add_option("--out", smp.out);

  AnnotateOpts ann;
  auto* c_ann = app.add_subcommand("annotate", "label steps with rewards and values");
  c_ann->add_option("--in", ann.in);
  c_ann->add_option("--mode", ann.mode)->check(CLI::IsMember({"mc_soft", "mc_hard", "outcome", "er_prm"}));
  c_ann->add_option("--rollouts", ann.rollouts);
  c_ann->add_option("--eta", ann.eta);
  c_ann->add_option("--out", ann.out);

  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train", "train a supervisor");
  c_tr->add_option("--in", tr.in);
  c_tr->add_option("--mode", tr.mode)->check(CLI::IsMember({"orm", "prm", "vm", "birm"}));
  c_tr->add_option("--c", tr.train.c, "weight of the value loss");
  c_tr->add_option("--lr", tr.train.learning_rate);
  c_tr->add_option("--epochs", tr.train.epochs);
  c_tr->add_option("--batch", tr.train.batch_size);
  c_tr->add_option("--hidden", tr.train.hidden);
  c_tr->add_option("--max-steps", tr.features.max_steps);
  c_tr->add_option("--perception-noise", tr.features.perception_noise);
  c_tr->add_option("--residue-modulus", tr.features.residue_modulus);
  c_tr->add_option("--out", tr.out);

  EvalBonOpts bon;
  auto* c_bon = app.add_subcommand("eval-bon", "Best-of-N accuracy curves");
  c_bon->add_option("--tasks", bon.tasks);
  add_scorer_options(c_bon, bon.scoring);
  c_bon->add_flag("--majority", bon.scoring.majority, "add a majority-vote baseline");
  c_bon->add_option("--n-max", bon.n_max);
  c_bon->add_option("--seeds", bon.seeds);
  c_bon->add_option("--window", bon.window);
  c_bon->add_option("--out", bon.out);

  EvalBeamOpts beam;
  auto* c_beam = app.add_subcommand("eval-beam", "beam-search grid over K and b");
  c_beam->add_option("--tasks", beam.tasks);
  add_scorer_options(c_beam, beam.scoring);
  c_beam->add_option("--k-grid", beam.k_grid)->delimiter(',');
  c_beam->add_option("--seeds", beam.seeds);
  c_beam->add_option("--max-rounds", beam.max_rounds);
  c_beam->add_option("--out", beam.out);

  RerankOpts rr;
  auto* c_rr = app.add_subcommand("rerank-offline", "re-rank externally scored candidates");
  c_rr->add_option("--in", rr.in);
  c_rr->add_option("--mode", rr.mode)->check(CLI::IsMember({"orm", "prm", "vm", "birm"}));
  c_rr->add_option("--agg", rr.aggregation);
  c_rr->add_option("--beta", rr.beta);
  c_rr->add_option("--out", rr.out);

  ReportOpts rep;
  auto* c_rep = app.add_subcommand("report", "summarize result CSVs");
  c_rep->add_option("--in", rep.inputs)->delimiter(',');
  c_rep->add_option("--out", rep.out);
  for (auto* sub : app.get_subcommands({})) sub->configurable();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    return fail(3, "io", e.what());
  } catch (const CLI::ParseError& e) {
    return fail(2, "usage", e.what());
  }

  try {
    fs::create_directories(g.run_dir);
    const auto& sub = *app.get_subcommands().front();
    std::ofstream(fs::path(g.run_dir) / ("config." + sub.get_name() + ".ini")) << echo_config(app, sub);
    const auto start = std::chrono::steady_clock::now();
    int rc = 1;
    if (*c_gen) rc = run_gen_tasks(g, gen);
    else if (*c_smp) rc = run_sample(g, smp);
    else if (*c_ann) rc = run_annotate(g, ann);
    else if (*c_tr) rc = run_train(g, tr);
    else if (*c_bon) rc = run_eval_bon(g, bon);
    else if (*c_beam) rc = run_eval_beam(g, beam);
    else if (*c_rr) rc = run_rerank(g, rr);
    else if (*c_rep) rc = run_report(g, rep);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    progress("done in " + std::to_string(secs) + " s");
    return rc;
  } catch (const IoError& e) {
    return fail(3, e.kind(), e.what());
  } catch (const SchemaError& e) {
    return fail(4, e.kind(), e.what());
  } catch (const Error& e) {
    return fail(5, e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail(1, "internal", e.what());
  }
}
