#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "shellsde/chain_sim.hpp"
#include "shellsde/ensemble.hpp"
#include "shellsde/model_io.hpp"
#include "shellsde/moment_flow.hpp"
#include "shellsde/sde_engine.hpp"

namespace shellsde {

/// Everything needed to reproduce a run. Serialized verbatim into every
/// result document.
struct ExperimentConfig {
  json model = "novikov:lambda=2,sigma=1";
  System system = System::Linear;
  Scheme scheme = Scheme::Exponential;
  Boundary boundary = Boundary::Absorbing;
  int shells = 15;
  double dt = 1e-4;
  double horizon = 1.0;
  int paths = 1000;
  int replicates = 10000;
  /// Flattened X_1..X_N (d components per shell); empty means the first
  /// component of shell 1 set to 1.
  std::vector<double> initial;
  /// Times at which statistics are reported; empty means a default grid.
  std::vector<double> record_times;
  std::string grid = "geometric";  // geometric | uniform
  double grid_min = 1e-3;
  int grid_count = 40;
  ForwardMode forward_mode = ForwardMode::Auto;
  int max_level = 60;
  long max_jumps = 10'000'000;
  /// ||x||^2 for `constants`; defaults to the energy of `initial`.
  std::optional<double> energy;
  int visit_shells = 40;
  std::vector<int> dissipation_shells = {10, 15, 20};
  int compare_shells = 10;  // triangulation cells n = 1..compare_shells
  double z_max = 3.0;
  double pass_fraction = 0.95;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out = "results";
};

/// Unknown keys are rejected (ParseError naming the key). A document with a
/// top-level "config" object (a previous result file) is accepted as well.
ExperimentConfig config_from_json(const json& doc);
json config_to_json(const ExperimentConfig& config);

System parse_system(const std::string& s);
Scheme parse_scheme(const std::string& s);
Boundary parse_boundary(const std::string& s);
ForwardMode parse_forward_mode(const std::string& s);

/// Initial condition as a flat vector of length shells * dim.
std::vector<double> initial_state(const ExperimentConfig& config, const ModelSpec& spec,
                                  int shells);
/// Shell energies |x_n|^2 of a flat initial condition.
std::vector<double> shell_energies(std::span<const double> x, int dim);

/// Report times for simulate/triangulate: record_times, or ten equal
/// intervals of the horizon when they are multiples of dt.
std::vector<double> report_times(const ExperimentConfig& config);
/// Grid for moments/chain/dissipation: {0} plus grid_count points.
std::vector<double> time_grid(const ExperimentConfig& config);

// ---- triangulation ----------------------------------------------------------

struct TriangulationCell {
  double t;
  int n;
  double sde, sde_se;
  double ode;
  double chain, chain_se;
  double z_sde_ode, z_sde_chain, z_ode_chain;
  bool pass;
};

struct Triangulation {
  std::vector<TriangulationCell> cells;
  double pass_fraction = 0.0;
  bool passed = false;
  int sde_failures = 0;
  double x_norm_sq = 0.0;
  EnsembleStats sde;  // the SDE leg, kept for further diagnostics
};

/// Runs the three routes to E^Q|X_n(t)|^2: the linear SDE ensemble on the
/// absorbing truncation, the forward equation, and the chain killed above N.
/// With `weights` set, the SDE leg also carries Girsanov weights.
Triangulation triangulate(const ModelSpec& spec, const ExperimentConfig& config,
                          WeightDirection weights = WeightDirection::None);

// ---- commands ---------------------------------------------------------------

struct CommandResult {
  int exit_code = 0;
  json report;
  std::vector<std::string> files;
};

CommandResult cmd_validate(const ExperimentConfig& config);
CommandResult cmd_simulate(const ExperimentConfig& config);
CommandResult cmd_moments(const ExperimentConfig& config);
CommandResult cmd_chain(const ExperimentConfig& config);
CommandResult cmd_constants(const ExperimentConfig& config);
CommandResult cmd_triangulate(const ExperimentConfig& config);
CommandResult cmd_dissipation(const ExperimentConfig& config);

}  // namespace shellsde
