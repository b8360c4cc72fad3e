#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "symvar/bounds.hpp"

namespace symvar::scenario {

// Configuration problems: unknown keys, unresolvable references, bad values.
// The CLI maps these to exit code 3.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A parsed scenario file.  Flat key-value sections:
//
//   name = my-run              # before any section
//   [model]
//   descriptor = gaussian:4
//   isotropize = false         # isotropic copy for moment bounds
//   [group]
//   generators = unconditional:4   # default: the model's natural family
//   subset = 0                     # keep only the first k generators
//   decomposition = auto           # auto | whole | exchangeable
//   [sampler]
//   seed = 1
//   chains = 4
//   samples = 4096
//   [functions]
//   f = norm2                  # repeated key, one per function
//   [bounds]
//   op = brascamp-lieb         # repeated key, one per bound
//   [constants]
//   c_borell = 3               # numeric overrides picked up by evaluators
struct Scenario {
  std::string name;

  std::string model;
  bool isotropize = false;

  std::string generators;              // empty = model default family
  Index subset = 0;                    // 0 = all generators
  std::string decomposition = "auto";  // auto | whole | exchangeable

  std::uint64_t seed = 1;
  Index chains = 4;
  Index samples = 4096;

  std::vector<std::string> functions;
  std::vector<std::string> ops;
  std::map<std::string, double> constants;
};

Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::string& path);

// Built-in scenario catalog.
std::vector<std::string> builtin_scenarios(const std::string& filter = "");
bool is_builtin_scenario(const std::string& name);
std::string builtin_scenario_text(const std::string& name);
std::string builtin_description(const std::string& name);

// Result of one scenario run.  `json` and `csv` are deterministic given the
// scenario (no timings, fixed key order, fixed float formatting).
struct RunReport {
  Scenario scenario;
  std::vector<bounds::BoundReport> reports;
  std::string json;
  std::string csv;      // columns: name,lhs,lhs_err,rhs,rhs_err,ratio,verdict,seed
  std::string spin_csv; // columns: m,J,J2,cP (spin-gap scenarios; empty otherwise)
  bool any_violated = false;
  int exit_code = 0;    // 0 ok, 2 some bound violated
};

RunReport run_scenario(const Scenario& sc);

// Write <dir>/<name>.csv, <dir>/<name>.json and, when present,
// <dir>/<name>-spin.csv.  Returns the paths written.
std::vector<std::string> write_outputs(const RunReport& report, const std::string& dir);

}  // namespace symvar::scenario
