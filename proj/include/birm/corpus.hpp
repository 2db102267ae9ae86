#pragma once

// On-disk datasets. Every file is JSONL (one object per line, UTF-8); a path ending in
// ".gz" is read and written gzip-compressed. Record schemas:
//
//   TaskSpec          {"kind":"synthetic","seed":u64,"num_steps":int,"modulus":int,
//                      "error_profile":[float]}
//   TrajectoryRecord  {"task_id":str,"question":any,"steps":[{"index":int,"value":int}],
//                      "final_answer":int|null,"answer_correct":bool}
//   LabeledRecord     TrajectoryRecord + {"reward_labels":[float],"value_labels":[float]}
//   ScoredRecord      TrajectoryRecord + {"provenance":str,"reward_scores":[float]?,
//                      "value_scores":[float]?}
//
// For synthetic tasks "question" holds the TaskSpec object above, from which the task
// is rebuilt exactly.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <zlib.h>

#include "birm/env.hpp"
#include "birm/error.hpp"
#include "birm/json_types.hpp"
#include "birm/rng.hpp"

namespace birm {

struct TrajectoryRecord {
  std::string task_id;
  json question;
  std::vector<Step> steps;
  std::optional<int> final_answer;
  bool answer_correct = false;

  bool operator==(const TrajectoryRecord&) const = default;
};

struct LabeledRecord {
  TrajectoryRecord trajectory;
  std::vector<double> reward_labels;
  std::vector<double> value_labels;

  bool operator==(const LabeledRecord&) const = default;
};

struct ScoredRecord {
  TrajectoryRecord trajectory;
  std::string provenance;
  std::optional<std::vector<double>> reward_scores;
  std::optional<std::vector<double>> value_scores;

  bool operator==(const ScoredRecord&) const = default;
};

inline TrajectoryRecord make_record(const Task& task, const Trajectory& traj) {
  return TrajectoryRecord{task.id, task_spec_to_json(task.spec), traj.steps, traj.final_answer,
                          check_answer(task, traj.final_answer)};
}

// Rebuilds the environment task behind a synthetic record, if any.
inline std::optional<Task> task_for(const TrajectoryRecord& r) {
  if (!is_synthetic_question(r.question)) return std::nullopt;
  return make_task(task_spec_from_json(r.question));
}

inline Trajectory trajectory_of(const TrajectoryRecord& r, const Task& task) {
  Trajectory t = Trajectory::empty_for(task);
  for (const auto& s : r.steps) t.push(s, task);
  return t;
}

// ---- JSON codecs -------------------------------------------------------------------

template <typename T>
struct Codec;

template <>
struct Codec<TaskSpec> {
  static json encode(const TaskSpec& s) { return task_spec_to_json(s); }
  static TaskSpec decode(const json& j, std::size_t line) { return task_spec_from_json(j, line); }
};

template <>
struct Codec<TrajectoryRecord> {
  static json encode(const TrajectoryRecord& r) {
    return json{{"task_id", r.task_id},
                {"question", r.question},
                {"steps", steps_to_json(r.steps)},
                {"final_answer", r.final_answer ? json(*r.final_answer) : json(nullptr)},
                {"answer_correct", r.answer_correct}};
  }
  static TrajectoryRecord decode(const json& j, std::size_t line) {
    TrajectoryRecord r;
    r.task_id = detail::field_as<std::string>(j, "task_id", line);
    r.question = detail::require(j, "question", line);
    r.steps = steps_from_json(detail::require(j, "steps", line), "steps", line);
    const auto& fa = detail::require(j, "final_answer", line);
    if (!fa.is_null()) r.final_answer = detail::get_as<int>(fa, "final_answer", line);
    r.answer_correct = detail::field_as<bool>(j, "answer_correct", line);
    for (std::size_t i = 0; i < r.steps.size(); ++i)
      if (r.steps[i].index != static_cast<int>(i) + 1) throw SchemaError("steps", line, "indices must be 1..k");
    return r;
  }
};

namespace detail {

inline std::vector<double> unit_interval_array(const json& j, const char* field, std::size_t line) {
  auto v = real_array(j, field, line);
  for (double x : v)
    if (!(x >= 0.0 && x <= 1.0)) throw SchemaError(field, line, "value " + std::to_string(x) + " outside [0,1]");
  return v;
}

}  // namespace detail

template <>
struct Codec<LabeledRecord> {
  static json encode(const LabeledRecord& r) {
    json j = Codec<TrajectoryRecord>::encode(r.trajectory);
    j["reward_labels"] = r.reward_labels;
    j["value_labels"] = r.value_labels;
    return j;
  }
  static LabeledRecord decode(const json& j, std::size_t line) {
    LabeledRecord r;
    r.trajectory = Codec<TrajectoryRecord>::decode(j, line);
    r.reward_labels = detail::unit_interval_array(detail::require(j, "reward_labels", line), "reward_labels", line);
    r.value_labels = detail::unit_interval_array(detail::require(j, "value_labels", line), "value_labels", line);
    if (r.reward_labels.size() != r.trajectory.steps.size())
      throw SchemaError("reward_labels", line, "length differs from steps");
    if (r.value_labels.size() != r.trajectory.steps.size())
      throw SchemaError("value_labels", line, "length differs from steps");
    return r;
  }
};

template <>
struct Codec<ScoredRecord> {
  static json encode(const ScoredRecord& r) {
    json j = Codec<TrajectoryRecord>::encode(r.trajectory);
    j["provenance"] = r.provenance;
    if (r.reward_scores) j["reward_scores"] = *r.reward_scores;
    if (r.value_scores) j["value_scores"] = *r.value_scores;
    return j;
  }
  // Reward scores cover every step. Value scores cover every step or only the last one.
  static ScoredRecord decode(const json& j, std::size_t line) {
    ScoredRecord r;
    r.trajectory = Codec<TrajectoryRecord>::decode(j, line);
    r.provenance = detail::field_as<std::string>(j, "provenance", line);
    const auto n = r.trajectory.steps.size();
    if (j.contains("reward_scores") && !j["reward_scores"].is_null()) {
      r.reward_scores = detail::unit_interval_array(j["reward_scores"], "reward_scores", line);
      if (r.reward_scores->size() != n) throw SchemaError("reward_scores", line, "length differs from steps");
    }
    if (j.contains("value_scores") && !j["value_scores"].is_null()) {
      r.value_scores = detail::unit_interval_array(j["value_scores"], "value_scores", line);
      if (r.value_scores->size() != n && r.value_scores->size() != 1)
        throw SchemaError("value_scores", line, "length must equal steps or 1");
    }
    if (!r.reward_scores && !r.value_scores)
      throw SchemaError("reward_scores", line, "record carries neither reward_scores nor value_scores");
    return r;
  }
};

// ---- Line IO -------------------------------------------------------------------------

inline bool is_gzip_path(const std::filesystem::path& p) { return p.extension() == ".gz"; }

// Reads lines from a plain or gzip file (zlib reads uncompressed input transparently).
class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path) : file_(gzopen(path.string().c_str(), "rb")) {
    if (!file_) throw IoError("cannot open " + path.string());
  }
  ~LineReader() {
    if (file_) gzclose(file_);
  }
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  bool next(std::string& line) {
    line.clear();
    char buf[8192];
    while (true) {
      if (!gzgets(file_, buf, sizeof buf)) {
        int err = 0;
        gzerror(file_, &err);
        if (err != Z_OK && err != Z_STREAM_END) throw IoError("read error");
        return !line.empty();
      }
      line += buf;
      if (!line.empty() && line.back() == '\n') {
        line.pop_back();
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
      }
    }
  }

 private:
  gzFile file_;
};

// Writes to `path` via a sibling temporary that is renamed into place on commit().
class LineWriter {
 public:
  explicit LineWriter(std::filesystem::path path) : path_(std::move(path)), tmp_(path_) {
    tmp_ += ".tmp";
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    if (is_gzip_path(path_)) {
      gz_ = gzopen(tmp_.string().c_str(), "wb");
      if (!gz_) throw IoError("cannot open " + tmp_.string());
    } else {
      out_.open(tmp_, std::ios::binary | std::ios::trunc);
      if (!out_) throw IoError("cannot open " + tmp_.string());
    }
  }
  ~LineWriter() {
    if (gz_) gzclose(gz_);
    if (!committed_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(tmp_, ec);
    }
  }
  LineWriter(const LineWriter&) = delete;
  LineWriter& operator=(const LineWriter&) = delete;

  void write(const std::string& line) {
    if (gz_) {
      if (gzwrite(gz_, line.data(), static_cast<unsigned>(line.size())) != static_cast<int>(line.size()) ||
          gzputc(gz_, '\n') != '\n')
        throw IoError("write failed: " + tmp_.string());
    } else {
      out_ << line << '\n';
      if (!out_) throw IoError("write failed: " + tmp_.string());
    }
  }

  void commit() {
    if (gz_) {
      if (gzclose(gz_) != Z_OK) throw IoError("close failed: " + tmp_.string());
      gz_ = nullptr;
    } else {
      out_.close();
      if (!out_) throw IoError("close failed: " + tmp_.string());
    }
    std::filesystem::rename(tmp_, path_);
    committed_ = true;
  }

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  gzFile gz_ = nullptr;
  bool committed_ = false;
};

template <typename Record>
std::size_t write_jsonl(const std::vector<Record>& records, const std::filesystem::path& path) {
  LineWriter w(path);
  for (const auto& r : records) w.write(Codec<Record>::encode(r).dump());
  w.commit();
  return records.size();
}

// Blank lines are skipped. Line numbers in errors are 1-based.
template <typename Record>
std::vector<Record> read_jsonl(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  LineReader reader(path);
  std::vector<Record> out;
  std::string line;
  std::size_t lineno = 0;
  while (reader.next(line)) {
    ++lineno;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError("<line>", lineno, std::string("malformed JSON: ") + e.what());
    }
    out.push_back(Codec<Record>::decode(j, lineno));
  }
  return out;
}

// ---- Dataset sizing / splits ---------------------------------------------------------

enum class Split { train = 0, dev = 1, test = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

struct CorpusManifest {
  std::size_t n_queries = 0;
  std::size_t responses_per_query = 15;
  std::array<double, 3> split_fracs{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
  std::vector<Split> assignment;  // per query index

  std::size_t total_records() const { return n_queries * responses_per_query; }

  std::vector<std::size_t> queries_in(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == s) out.push_back(i);
    return out;
  }

  bool operator==(const CorpusManifest&) const = default;
};

// Query-level split: a seeded permutation of query indices, cut into consecutive blocks
// of round(n * frac) (train, dev) and the remainder (test).
inline CorpusManifest build_manifest(std::size_t n_queries, std::size_t responses_per_query,
                                     std::array<double, 3> split_fracs, std::uint64_t seed) {
  double sum = 0.0;
  for (double f : split_fracs) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("split fractions must lie in [0,1]");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");
  if (responses_per_query < 1) throw ValidationError("responses_per_query must be >= 1");

  CorpusManifest m{n_queries, responses_per_query, split_fracs, seed, {}};
  std::vector<std::size_t> order(n_queries);
  for (std::size_t i = 0; i < n_queries; ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0x5B117}));
  for (std::size_t i = n_queries; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  const auto n_train = std::min(n_queries, static_cast<std::size_t>(std::llround(n_queries * split_fracs[0])));
  const auto n_dev =
      std::min(n_queries - n_train, static_cast<std::size_t>(std::llround(n_queries * split_fracs[1])));
  m.assignment.assign(n_queries, Split::test);
  for (std::size_t k = 0; k < n_queries; ++k) {
    const auto q = order[k];
    m.assignment[q] = k < n_train ? Split::train : (k < n_train + n_dev ? Split::dev : Split::test);
  }
  return m;
}

// Query x response shapes of the data-scaling study.
struct SizingShape {
  std::size_t queries;
  std::size_t responses;
};

inline std::vector<SizingShape> query_response_grid() {
  return {{15000, 30}, {15000, 15}, {15000, 8}, {7500, 15}, {3750, 30}};
}

inline json manifest_to_json(const CorpusManifest& m) {
  json splits = json::array();
  for (auto s : m.assignment) splits.push_back(to_string(s));
  return json{{"n_queries", m.n_queries},
              {"responses_per_query", m.responses_per_query},
              {"split_fracs", m.split_fracs},
              {"seed", m.seed},
              {"assignment", splits}};
}

inline CorpusManifest manifest_from_json(const json& j) {
  CorpusManifest m;
  m.n_queries = detail::field_as<std::size_t>(j, "n_queries", 1);
  m.responses_per_query = detail::field_as<std::size_t>(j, "responses_per_query", 1);
  m.split_fracs = detail::field_as<std::array<double, 3>>(j, "split_fracs", 1);
  m.seed = detail::field_as<std::uint64_t>(j, "seed", 1);
  for (const auto& s : detail::require(j, "assignment", 1)) {
    const auto name = detail::get_as<std::string>(s, "assignment", 1);
    if (name == "train") m.assignment.push_back(Split::train);
    else if (name == "dev") m.assignment.push_back(Split::dev);
    else if (name == "test") m.assignment.push_back(Split::test);
    else throw SchemaError("assignment", 1, "unknown split '" + name + "'");
  }
  if (m.assignment.size() != m.n_queries) throw SchemaError("assignment", 1, "length differs from n_queries");
  return m;
}

// ---- Externally scored dumps ---------------------------------------------------------

struct ScoredGroup {
  std::string task_id;
  std::vector<ScoredRecord> candidates;
};

// Groups by task_id in order of first appearance; candidate order is file order.
inline std::vector<ScoredGroup> group_scored(std::vector<ScoredRecord> records) {
  std::vector<ScoredGroup> groups;
  std::unordered_map<std::string, std::size_t> slot;
  for (auto& r : records) {
    auto [it, inserted] = slot.emplace(r.trajectory.task_id, groups.size());
    if (inserted) groups.push_back(ScoredGroup{r.trajectory.task_id, {}});
    groups[it->second].candidates.push_back(std::move(r));
  }
  return groups;
}

inline std::vector<ScoredGroup> ingest_scored(const std::filesystem::path& path) {
  return group_scored(read_jsonl<ScoredRecord>(path));
}

}  // namespace birm
