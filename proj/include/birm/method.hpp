#pragma once

#include <string>

#include "birm/error.hpp"

namespace birm {

// Verifier family. Selects both the training targets of a supervisor and how its head
// outputs are turned into a trajectory score.
enum class Method { orm, prm, vm, birm };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::orm: return "orm";
    case Method::prm: return "prm";
    case Method::vm: return "vm";
    case Method::birm: return "birm";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "orm" || s == "ORM") return Method::orm;
  if (s == "prm" || s == "PRM") return Method::prm;
  if (s == "vm" || s == "VM") return Method::vm;
  if (s == "birm" || s == "BiRM" || s == "BIRM") return Method::birm;
  throw ValidationError("unknown method '" + s + "'");
}

}  // namespace birm
