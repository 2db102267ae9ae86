#pragma once

// Dual-head supervisor: a shared tanh backbone feeding a reward head and a value head,
// both logistic, trained on  L = w_r * L_PRM + w_v * L_VM  (w_r = 1, w_v = c for BiRM).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "birm/corpus.hpp"
#include "birm/env.hpp"
#include "birm/error.hpp"
#include "birm/method.hpp"
#include "birm/rng.hpp"

namespace birm {

// ---- Features -------------------------------------------------------------------------

// The verifier never sees the hidden operations. It sees the question through a noisy
// reading: each operation is perceived correctly with probability 1 - perception_noise
// and as a random operation otherwise (fixed per task and step). The consistency flag
// checks a step against that perceived operation. Separately, the verifier knows the
// correct intermediate results modulo a small residue modulus R, a coarse view of where
// the correct solution goes (R = 0 disables it).
struct FeatureConfig {
  int max_steps = 12;
  double perception_noise = 0.2;
  int residue_modulus = 3;

  int dim() const { return max_steps + 8; }

  void validate() const {
    if (max_steps < 1) throw ValidationError("max_steps must be >= 1");
    if (!(perception_noise >= 0.0 && perception_noise <= 1.0))
      throw ValidationError("perception_noise outside [0,1]");
    if (residue_modulus < 0) throw ValidationError("residue_modulus must be >= 0");
  }

  bool operator==(const FeatureConfig&) const = default;
};

inline Operation perceived_operation(const Task& task, int t, double perception_noise) {
  Rng rng(derive_seed(task.spec.seed, {0x9E2C, static_cast<std::uint64_t>(t)}));
  if (rng.uniform() < perception_noise) {
    Operation op;
    op.kind = rng.bernoulli(0.5) ? OpKind::add : OpKind::mul;
    op.operand = static_cast<int>(rng.between(1, task.modulus() - 1));
    return op;
  }
  return task.ops[static_cast<std::size_t>(t - 1)];
}

// Layout (D = max_steps + 8):
//   [0, max_steps)   one-hot step index (capped at max_steps)
//   +0  asserted value / P
//   +1  previous asserted value / P
//   +2  step agrees with the perceived operation
//   +3  step repeats the previous value
//   +4  prefix length / max_steps
//   +5  remaining steps / max_steps
//   +6  fraction of prefix steps agreeing with their perceived operation
//   +7  asserted value matches the correct result modulo R
class FeatureEncoder {
 public:
  explicit FeatureEncoder(FeatureConfig config = {}) : config_(config) { config_.validate(); }

  int dim() const { return config_.dim(); }
  const FeatureConfig& config() const { return config_; }

  // One feature row per prefix s_1..s_t, t = 1..k.
  std::vector<std::vector<double>> encode_prefixes(const Task& task, const Trajectory& traj) const {
    std::vector<std::vector<double>> rows;
    rows.reserve(traj.steps.size());
    const double p = task.modulus();
    const double mmax = config_.max_steps;
    int agreeing = 0;
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
      const int t = static_cast<int>(i) + 1;
      const int prev = i == 0 ? task.initial_value : traj.steps[i - 1].value;
      const int value = traj.steps[i].value;
      const bool agrees = perceived_operation(task, t, config_.perception_noise).apply(prev, task.modulus()) == value;
      agreeing += agrees ? 1 : 0;
      std::vector<double> x(static_cast<std::size_t>(dim()), 0.0);
      x[static_cast<std::size_t>(std::min(t, config_.max_steps) - 1)] = 1.0;
      double* tail = x.data() + config_.max_steps;
      tail[0] = value / p;
      tail[1] = prev / p;
      tail[2] = agrees ? 1.0 : 0.0;
      tail[3] = value == prev ? 1.0 : 0.0;
      tail[4] = t / mmax;
      tail[5] = (task.num_steps() - t) / mmax;
      tail[6] = static_cast<double>(agreeing) / t;
      const int r = config_.residue_modulus;
      tail[7] = r > 0 && value % r == task.truth_chain[i + 1] % r ? 1.0 : 0.0;
      rows.push_back(std::move(x));
    }
    return rows;
  }

  // Features of the last step of a non-empty prefix.
  std::vector<double> encode(const Task& task, const Trajectory& prefix) const {
    if (prefix.steps.empty()) throw ValidationError("cannot encode an empty prefix");
    return encode_prefixes(task, prefix).back();
  }

 private:
  FeatureConfig config_;
};

// ---- Model ------------------------------------------------------------------------------

struct TrainConfig {
  double c = 1.0;
  double learning_rate = 0.05;
  int epochs = 30;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  int hidden = 64;

  void validate() const {
    if (!(c >= 0.0)) throw ValidationError("c must be >= 0");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be > 0");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (hidden < 1) throw ValidationError("hidden width must be >= 1");
  }

  bool operator==(const TrainConfig&) const = default;
};

struct HeadOutputs {
  double reward;
  double value;
};

struct Sample {
  std::vector<double> features;
  double reward_target;
  double value_target;
};

struct LossWeights {
  double reward = 1.0;
  double value = 1.0;
};

struct Losses {
  double prm;
  double vm;
  double birm;  // reward-weight * prm + value-weight * vm
};

inline double logistic(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Parameters live in one flat vector:
//   backbone weight (H x D, row-major) | backbone bias (H) |
//   reward weight (H) | reward bias | value weight (H) | value bias
class SupervisorModel {
 public:
  SupervisorModel() = default;
  SupervisorModel(int input_dim, int hidden) : input_dim_(input_dim), hidden_(hidden) {
    if (input_dim < 1 || hidden < 1) throw ValidationError("model dimensions must be >= 1");
    params_.assign(parameter_count(input_dim, hidden), 0.0);
  }

  static std::size_t parameter_count(int d, int h) {
    const auto D = static_cast<std::size_t>(d), H = static_cast<std::size_t>(h);
    return D * H + H + 2 * (H + 1);
  }

  // Backbone ~ N(0, 1/D); heads start at zero so both outputs start at 0.5.
  static SupervisorModel initialized(int input_dim, int hidden, std::uint64_t seed) {
    SupervisorModel m(input_dim, hidden);
    Rng rng(derive_seed(seed, {0x1217}));
    const double scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
    for (std::size_t i = 0; i < m.backbone_weight_size(); ++i) m.params_[i] = scale * rng.normal();
    return m;
  }

  int input_dim() const { return input_dim_; }
  int hidden() const { return hidden_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  std::size_t backbone_weight_size() const { return static_cast<std::size_t>(input_dim_) * hidden_; }
  std::size_t backbone_bias_offset() const { return backbone_weight_size(); }
  std::size_t reward_offset() const { return backbone_bias_offset() + static_cast<std::size_t>(hidden_); }
  std::size_t value_offset() const { return reward_offset() + static_cast<std::size_t>(hidden_) + 1; }

  HeadOutputs forward(std::span<const double> x) const {
    std::vector<double> z;
    return forward(x, z);
  }

  // Also returns the backbone activation.
  HeadOutputs forward(std::span<const double> x, std::vector<double>& activation) const {
    if (x.size() != static_cast<std::size_t>(input_dim_))
      throw ValidationError("feature dimension " + std::to_string(x.size()) + " != model input " +
                            std::to_string(input_dim_));
    const auto D = static_cast<std::size_t>(input_dim_), H = static_cast<std::size_t>(hidden_);
    activation.resize(H);
    const double* w = params_.data();
    const double* b = w + backbone_bias_offset();
    for (std::size_t j = 0; j < H; ++j) {
      double a = b[j];
      const double* row = w + j * D;
      for (std::size_t i = 0; i < D; ++i) a += row[i] * x[i];
      activation[j] = std::tanh(a);
    }
    const double* wr = w + reward_offset();
    const double* wv = w + value_offset();
    double sr = wr[H], sv = wv[H];
    for (std::size_t j = 0; j < H; ++j) {
      sr += wr[j] * activation[j];
      sv += wv[j] * activation[j];
    }
    return {logistic(sr), logistic(sv)};
  }

  bool operator==(const SupervisorModel&) const = default;

 private:
  int input_dim_ = 0;
  int hidden_ = 0;
  std::vector<double> params_;
};

namespace detail {

inline void check_sample(const Sample& s) {
  if (!(s.reward_target >= 0.0 && s.reward_target <= 1.0)) throw ValidationError("reward label outside [0,1]");
  if (!(s.value_target >= 0.0 && s.value_target <= 1.0)) throw ValidationError("value label outside [0,1]");
}

}  // namespace detail

inline Losses loss_batch(const SupervisorModel& model, std::span<const Sample> batch, LossWeights weights) {
  if (batch.empty()) throw ValidationError("empty batch");
  double prm = 0.0, vm = 0.0;
  std::vector<double> z;
  for (const auto& s : batch) {
    detail::check_sample(s);
    const auto out = model.forward(s.features, z);
    prm += (out.reward - s.reward_target) * (out.reward - s.reward_target);
    vm += (out.value - s.value_target) * (out.value - s.value_target);
  }
  prm /= static_cast<double>(batch.size());
  vm /= static_cast<double>(batch.size());
  return {prm, vm, weights.reward * prm + weights.value * vm};
}

inline Losses loss_batch(const SupervisorModel& model, std::span<const Sample> batch, double c) {
  return loss_batch(model, batch, LossWeights{1.0, c});
}

// Analytic gradient of the weighted loss with respect to every parameter.
inline std::vector<double> grad(const SupervisorModel& model, std::span<const Sample> batch, LossWeights weights) {
  if (batch.empty()) throw ValidationError("empty batch");
  const auto D = static_cast<std::size_t>(model.input_dim());
  const auto H = static_cast<std::size_t>(model.hidden());
  const auto p = model.params();
  std::vector<double> g(p.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double* wr = p.data() + model.reward_offset();
  const double* wv = p.data() + model.value_offset();
  double* gw = g.data();
  double* gb = g.data() + model.backbone_bias_offset();
  double* gr = g.data() + model.reward_offset();
  double* gv = g.data() + model.value_offset();
  std::vector<double> z, dz(H);
  for (const auto& s : batch) {
    detail::check_sample(s);
    const auto out = model.forward(s.features, z);
    // d/ds of w * (sigma(s) - y)^2 / n
    const double dr = weights.reward * 2.0 * (out.reward - s.reward_target) * out.reward * (1.0 - out.reward) * inv_n;
    const double dv = weights.value * 2.0 * (out.value - s.value_target) * out.value * (1.0 - out.value) * inv_n;
    for (std::size_t j = 0; j < H; ++j) {
      gr[j] += dr * z[j];
      gv[j] += dv * z[j];
      dz[j] = (dr * wr[j] + dv * wv[j]) * (1.0 - z[j] * z[j]);
    }
    gr[H] += dr;
    gv[H] += dv;
    for (std::size_t j = 0; j < H; ++j) {
      gb[j] += dz[j];
      double* row = gw + j * D;
      for (std::size_t i = 0; i < D; ++i) row[i] += dz[j] * s.features[i];
    }
  }
  return g;
}

inline std::vector<double> grad(const SupervisorModel& model, std::span<const Sample> batch, double c) {
  return grad(model, batch, LossWeights{1.0, c});
}

// ---- Training ---------------------------------------------------------------------------

struct EpochLoss {
  int epoch;
  Losses loss;
};

struct TrainedSupervisor {
  SupervisorModel model;
  FeatureConfig features;
  TrainConfig config;
  Method variant = Method::birm;
  std::vector<EpochLoss> history;

  HeadOutputs forward(const Task& task, const Trajectory& prefix) const {
    return model.forward(FeatureEncoder(features).encode(task, prefix));
  }

  // Head outputs for every prefix s_1..s_t of `traj`.
  std::vector<HeadOutputs> forward_prefixes(const Task& task, const Trajectory& traj) const {
    std::vector<HeadOutputs> out;
    std::vector<double> z;
    for (const auto& row : FeatureEncoder(features).encode_prefixes(task, traj)) out.push_back(model.forward(row, z));
    return out;
  }
};

inline LossWeights loss_weights_for(Method variant, double c) {
  switch (variant) {
    case Method::birm: return {1.0, c};
    case Method::prm: return {1.0, 0.0};
    case Method::vm:
    case Method::orm: return {0.0, 1.0};
  }
  return {1.0, c};
}

// Mini-batch gradient descent with a fixed learning rate. Epoch e visits the samples in
// the order of a Fisher-Yates shuffle seeded by derive_seed(seed, {e}). History holds the
// full-corpus losses after each epoch.
inline std::pair<SupervisorModel, std::vector<EpochLoss>> train(std::span<const Sample> corpus,
                                                                const TrainConfig& config, int input_dim,
                                                                LossWeights weights) {
  config.validate();
  if (corpus.empty()) throw ValidationError("empty training corpus");
  for (const auto& s : corpus) {
    detail::check_sample(s);
    if (s.features.size() != static_cast<std::size_t>(input_dim)) throw ValidationError("feature dimension mismatch");
  }
  auto model = SupervisorModel::initialized(input_dim, config.hidden, config.seed);
  std::vector<EpochLoss> history;
  std::vector<std::size_t> order(corpus.size());
  std::vector<Sample> batch;
  batch.reserve(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      const auto stop = std::min(order.size(), start + config.batch_size);
      for (std::size_t k = start; k < stop; ++k) batch.push_back(corpus[order[k]]);
      const auto g = grad(model, batch, weights);
      auto p = model.params();
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= config.learning_rate * g[i];
    }
    history.push_back({epoch + 1, loss_batch(model, corpus, weights)});
  }
  return {std::move(model), std::move(history)};
}

// Training rows for one variant. ORM targets replicate the outcome label on every step;
// the head a variant does not train keeps its record label (it carries zero weight).
inline std::vector<Sample> training_samples(const std::vector<LabeledRecord>& corpus, Method variant,
                                            const FeatureEncoder& encoder) {
  std::vector<Sample> samples;
  for (const auto& rec : corpus) {
    const auto task = task_for(rec.trajectory);
    if (!task) throw ValidationError("record " + rec.trajectory.task_id + " is not a synthetic task");
    const auto traj = trajectory_of(rec.trajectory, *task);
    const auto rows = encoder.encode_prefixes(*task, traj);
    const auto n = rows.size();
    const bool needs_reward = variant == Method::prm || variant == Method::birm;
    const bool needs_value = variant == Method::vm || variant == Method::birm;
    if (needs_reward && rec.reward_labels.size() != n)
      throw ValidationError("record " + rec.trajectory.task_id + " lacks reward labels");
    if (needs_value && rec.value_labels.size() != n)
      throw ValidationError("record " + rec.trajectory.task_id + " lacks value labels");
    for (std::size_t t = 0; t < n; ++t) {
      Sample s{rows[t], 0.0, 0.0};
      if (rec.reward_labels.size() == n) s.reward_target = rec.reward_labels[t];
      if (variant == Method::orm) s.value_target = rec.trajectory.answer_correct ? 1.0 : 0.0;
      else if (rec.value_labels.size() == n) s.value_target = rec.value_labels[t];
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

inline TrainedSupervisor train_variant(const std::vector<LabeledRecord>& corpus, Method variant,
                                       const TrainConfig& config, const FeatureConfig& features = {}) {
  const FeatureEncoder encoder(features);
  const auto samples = training_samples(corpus, variant, encoder);
  auto [model, history] = train(samples, config, encoder.dim(), loss_weights_for(variant, config.c));
  return TrainedSupervisor{std::move(model), features, config, variant, std::move(history)};
}

// ---- Checkpoints --------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline json checkpoint_to_json(const TrainedSupervisor& s) {
  const auto p = s.model.params();
  const auto slice = [&](std::size_t from, std::size_t n) { return std::vector<double>(p.begin() + from, p.begin() + from + n); };
  const auto H = static_cast<std::size_t>(s.model.hidden());
  json history = json::array();
  for (const auto& h : s.history)
    history.push_back({{"epoch", h.epoch}, {"prm", h.loss.prm}, {"vm", h.loss.vm}, {"birm", h.loss.birm}});
  return json{
      {"format", "birm-supervisor"},
      {"version", kCheckpointVersion},
      {"variant", to_string(s.variant)},
      {"input_dim", s.model.input_dim()},
      {"hidden", s.model.hidden()},
      {"features",
       {{"max_steps", s.features.max_steps},
        {"perception_noise", s.features.perception_noise},
        {"residue_modulus", s.features.residue_modulus}}},
      {"train_config",
       {{"c", s.config.c},
        {"learning_rate", s.config.learning_rate},
        {"epochs", s.config.epochs},
        {"batch_size", s.config.batch_size},
        {"seed", s.config.seed},
        {"hidden", s.config.hidden}}},
      {"params",
       {{"backbone_weight", slice(0, s.model.backbone_weight_size())},
        {"backbone_bias", slice(s.model.backbone_bias_offset(), H)},
        {"reward_head", slice(s.model.reward_offset(), H + 1)},
        {"value_head", slice(s.model.value_offset(), H + 1)}}},
      {"history", history}};
}

inline TrainedSupervisor checkpoint_from_json(const json& j) {
  using detail::field_as;
  using detail::require;
  if (field_as<std::string>(j, "format", 1) != "birm-supervisor") throw SchemaError("format", 1, "not a checkpoint");
  if (field_as<int>(j, "version", 1) != kCheckpointVersion) throw SchemaError("version", 1, "unsupported version");
  TrainedSupervisor s;
  s.variant = method_from_string(field_as<std::string>(j, "variant", 1));
  const auto& f = require(j, "features", 1);
  s.features.max_steps = field_as<int>(f, "max_steps", 1);
  s.features.perception_noise = field_as<double>(f, "perception_noise", 1);
  s.features.residue_modulus = field_as<int>(f, "residue_modulus", 1);
  const auto& tc = require(j, "train_config", 1);
  s.config.c = field_as<double>(tc, "c", 1);
  s.config.learning_rate = field_as<double>(tc, "learning_rate", 1);
  s.config.epochs = field_as<int>(tc, "epochs", 1);
  s.config.batch_size = field_as<std::size_t>(tc, "batch_size", 1);
  s.config.seed = field_as<std::uint64_t>(tc, "seed", 1);
  s.config.hidden = field_as<int>(tc, "hidden", 1);
  const int d = field_as<int>(j, "input_dim", 1);
  const int h = field_as<int>(j, "hidden", 1);
  if (d != s.features.dim()) throw SchemaError("input_dim", 1, "does not match feature configuration");
  s.model = SupervisorModel(d, h);
  const auto& params = require(j, "params", 1);
  const auto H = static_cast<std::size_t>(h);
  const auto load = [&](const char* name, std::size_t offset, std::size_t n) {
    const auto v = detail::real_array(require(params, name, 1), name, 1);
    if (v.size() != n) throw SchemaError(name, 1, "expected " + std::to_string(n) + " values");
    std::copy(v.begin(), v.end(), s.model.params().begin() + static_cast<std::ptrdiff_t>(offset));
  };
  load("backbone_weight", 0, s.model.backbone_weight_size());
  load("backbone_bias", s.model.backbone_bias_offset(), H);
  load("reward_head", s.model.reward_offset(), H + 1);
  load("value_head", s.model.value_offset(), H + 1);
  if (j.contains("history"))
    for (const auto& e : j["history"])
      s.history.push_back({e.at("epoch").get<int>(),
                           {e.at("prm").get<double>(), e.at("vm").get<double>(), e.at("birm").get<double>()}});
  return s;
}

inline void save_checkpoint(const TrainedSupervisor& s, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << checkpoint_to_json(s).dump() << '\n';
}

inline TrainedSupervisor load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SchemaError("<file>", 1, std::string("malformed checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace birm
