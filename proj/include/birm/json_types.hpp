#pragma once

// JSON mapping of environment types. Readers validate field presence and type and
// report the offending field name through SchemaError.

#include <string>
#include <vector>

#include "json.hpp"

#include "birm/env.hpp"
#include "birm/error.hpp"

namespace birm {

using json = nlohmann::json;

namespace detail {

inline const json& require(const json& obj, const char* field, std::size_t line) {
  if (!obj.is_object()) throw SchemaError("<record>", line, "expected a JSON object");
  auto it = obj.find(field);
  if (it == obj.end()) throw SchemaError(field, line, "missing");
  return *it;
}

template <typename T>
T get_as(const json& value, const char* field, std::size_t line) {
  try {
    return value.get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(field, line, std::string("wrong type: ") + e.what());
  }
}

template <typename T>
T field_as(const json& obj, const char* field, std::size_t line) {
  return get_as<T>(require(obj, field, line), field, line);
}

inline bool is_real_number(const json& v) { return v.is_number(); }

inline std::vector<double> real_array(const json& v, const char* field, std::size_t line) {
  if (!v.is_array()) throw SchemaError(field, line, "expected an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw SchemaError(field, line, "expected numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace detail

inline json step_to_json(const Step& s) { return json{{"index", s.index}, {"value", s.value}}; }

inline Step step_from_json(const json& j, std::size_t line = 0) {
  Step s;
  s.index = detail::field_as<int>(j, "index", line);
  s.value = detail::field_as<int>(j, "value", line);
  return s;
}

inline json steps_to_json(const std::vector<Step>& steps) {
  json arr = json::array();
  for (const auto& s : steps) arr.push_back(step_to_json(s));
  return arr;
}

inline std::vector<Step> steps_from_json(const json& arr, const char* field, std::size_t line) {
  if (!arr.is_array()) throw SchemaError(field, line, "expected an array of steps");
  std::vector<Step> out;
  out.reserve(arr.size());
  for (const auto& s : arr) {
    if (!s.is_object()) throw SchemaError(field, line, "step must be an object");
    out.push_back(Step{detail::field_as<int>(s, "index", line), detail::field_as<int>(s, "value", line)});
  }
  return out;
}

inline json task_spec_to_json(const TaskSpec& spec) {
  return json{{"kind", "synthetic"},
              {"seed", spec.seed},
              {"num_steps", spec.num_steps},
              {"modulus", spec.modulus},
              {"error_profile", spec.error_profile}};
}

inline TaskSpec task_spec_from_json(const json& j, std::size_t line = 0) {
  TaskSpec spec;
  spec.seed = detail::field_as<std::uint64_t>(j, "seed", line);
  spec.num_steps = detail::field_as<int>(j, "num_steps", line);
  spec.modulus = detail::field_as<int>(j, "modulus", line);
  spec.error_profile = detail::real_array(detail::require(j, "error_profile", line), "error_profile", line);
  try {
    spec.validate();
  } catch (const ValidationError& e) {
    throw SchemaError("question", line, e.what());
  }
  return spec;
}

inline bool is_synthetic_question(const json& q) {
  return q.is_object() && q.contains("kind") && q["kind"] == "synthetic";
}

}  // namespace birm
