#pragma once

#include "kvt/diagnostics.hpp"
#include "kvt/scheme.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace kvt {

/// Everything a batch run needs. A preset fills the defaults; keys in the document override them.
struct RunConfig {
  std::string preset;  // empty: the scenario comes entirely from the document
  ScenarioSpec spec;
  double tau = 0.01;
  double eps = 0.01;
  std::vector<double> tau_list;
  std::vector<double> eps_list;
  NewtonOptions mech;
  HeatOptions heat;
  int max_halvings = 4;
  std::string out_dir = "out";
  std::uint64_t seed = 1;             // test bank phases
  std::string diagnostics = "full";   // none | basic | full
  int korn_every = 10;
  int dump_every = 1;                 // field dump every n snapshots; 0 disables
  int checkpoint_every = 0;
  int test_bank = 10;
};

/// Field-by-field equality (the material's optional conductivity function is not part of a config).
bool same_config(const RunConfig& a, const RunConfig& b);

/// Every problem found in a document, in reading order. Empty when the document is valid.
std::vector<std::string> config_violations(const std::string& text);

/// Parses an INI document with sections [grid], [material], [loads], [time], [solver], [output] and the
/// top-level key `preset`. Throws ConfigError listing every violation.
RunConfig parse_config(const std::string& text);

/// Canonical document with every key spelled out; parse_config(serialize_config(c)) equals c.
std::string serialize_config(const RunConfig& c);

/// Hash of the parts of a config that determine the trajectory (output settings excluded).
std::uint64_t config_hash(const RunConfig& c);

/// Reads a file, or returns the document "preset = NAME" when path names a preset and no such file exists.
std::string load_config_text(const std::string& path);

/// Names of all valid keys as "section.key" (top level keys have no section).
std::vector<std::string> config_keys();

// ---- outputs ----

/// Frozen column order of timeseries.csv.
const std::vector<std::string>& timeseries_columns();
constexpr int kTimeseriesVersion = 1;
constexpr int kFieldDumpVersion = 1;

/// 17 significant digits, "nan" / "inf" / "-inf" for non-finite values.
std::string format_double(double v);

void write_timeseries(const std::string& path, const std::vector<StepDiagnostics>& rows);

/// Binary snapshot: text header terminated by "end_header\n", then little-endian float64 arrays
/// y, theta, w, detF in that order.
template <int Dim>
void write_field_dump(const std::string& path, const StructuredGrid<Dim>& grid, const State& s, int step);

struct FieldDump {
  std::map<std::string, std::string> header;
  std::vector<double> y, theta, w, detF;
};
FieldDump read_field_dump(const std::string& path);

/// Result of a batch command; exit_code is 0 only if every enabled certificate passed.
struct CommandResult {
  int exit_code = 0;
  std::vector<Certificate> certificates;
  std::vector<std::string> files;
};

using Logger = std::function<void(const std::string&)>;

/// simulate: run, diagnose, write timeseries.csv, apriori.csv, fields/, report.json and config.ini into out_dir.
/// resume: continue from out_dir/checkpoint.bin when present.
CommandResult simulate(const RunConfig& c, const Logger& log = {}, bool resume = false);

/// refine: every (tau, eps) pair of the lists; writes refinement_cells.csv, refinement_cauchy.csv and
/// refinement.json.
CommandResult refine(const RunConfig& c, const Logger& log = {});

}  // namespace kvt
