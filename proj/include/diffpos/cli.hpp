#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffpos/construct.hpp"
#include "diffpos/stability.hpp"

namespace diffpos::cli {

inline constexpr const char* kConfigSchema = "diffpos.config/1";
inline constexpr const char* kReportSchema = "diffpos.report/1";

// Exit statuses.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;    // bad config, flags or output directory
inline constexpr int kExitNumeric = 3;   // a numerical stage threw
inline constexpr int kExitNegative = 4;  // the analysis ran and the verdict is negative

struct ConeSpec {
  std::string variant = "orthant";  // orthant | polyhedral | elliptical | construct
  Vector signs;                     // orthant
  Matrix normals;                   // polyhedral, one row per facet
  Vector axis;                      // elliptical
  Matrix weight;
  double sigma = 1.0;
};

struct AttractorSpec {
  std::string kind = "auto";  // auto | fixed_points | limit_cycle
  std::optional<Vector> x0;
  double t_burn = 50.0;
  std::optional<Section> section;
  int seeds_per_axis = 9;
};

struct ConstructSpec {
  double c = 0.3;
  double nh_horizon = 10.0;
  double t_int = 5.0;
  double tau_max = 30.0;
  int max_halvings = 4;
  int tube_samples = 100;
};

struct PfSpec {
  double s = 20.0;
  int points = 10;
  double s_max = 30.0;
  double tol = 1e-6;
};

struct MetricSection {
  Matrix p;
  double lambda = 0.0;
  double horizon = 5.0;
};

struct ObstructionSpec {
  std::optional<Vector> saddle;
  double horizon = 5.0;
  int grid = 51;
};

struct AnalysisConfig {
  std::string builtin;                   // empty for expression systems
  std::vector<std::string> expressions;  // empty for builtins
  std::optional<SystemDef> system;
  Box box;
  ConeSpec cone;
  IntegratorOptions integ;
  std::vector<double> horizons{1.0, 2.0, 4.0};
  int samples = 200;
  int rays = 2;
  double eps = 0.1;
  std::uint64_t seed = 1;
  int threads = 1;
  Vector x0;
  double t_end = 10.0;
  int grid = 101;
  AttractorSpec attractor;
  ConstructSpec construct;
  PfSpec pf;
  std::optional<MetricSection> metric;
  ObstructionSpec obstruction;

  const SystemDef& sys() const { return *system; }
  int dim() const { return system->dim(); }
};

// Parses and validates a config document. Unknown keys are rejected; every
// error is Error("cli.config") with the offending field path in the message.
AnalysisConfig parse_config(const nlohmann::json& doc);
AnalysisConfig parse_config_text(const std::string& text);
AnalysisConfig load_config(const std::string& path);

const std::vector<std::string>& commands();

struct RunArtifacts {
  std::string command;
  nlohmann::json report;
  std::vector<std::string> trajectory_header;
  std::vector<std::vector<double>> trajectories;
  std::vector<std::string> field_header;
  std::vector<std::vector<double>> field;
  std::vector<std::string> summary;  // one line per stage
  int status = kExitOk;
};

// Runs one command. Numerical failures are caught and reported with their
// module-qualified code and status kExitNumeric; an unknown command throws
// Error("cli.usage").
RunArtifacts run(const AnalysisConfig& cfg, const std::string& command);

// Writes report.json and, when present, trajectories.csv and field.csv.
// Throws Error("cli.io").
void emit_report(const RunArtifacts& art, const std::string& dir);

// JSON text with sorted keys, numbers at 17 significant digits and
// non-finite numbers as the strings "inf", "-inf", "nan".
std::string dump_json(const nlohmann::json& j);

// Cone built from a spec; throws Error("cli.config") for "construct".
Cone make_cone(const ConeSpec& spec, int dim);

// Whole command line: flags, config, run, emit, summary on stdout.
int main(int argc, char** argv);

}  // namespace diffpos::cli
