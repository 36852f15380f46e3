#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shellsde/sde_engine.hpp"

namespace shellsde {

struct EnsembleConfig {
  double dt = 1e-4;
  double horizon = 1.0;
  int paths = 1000;
  System system = System::Linear;
  Scheme scheme = Scheme::EulerMaruyama;
  std::uint64_t seed = 1;
  /// Times at which statistics are recorded; each must be a multiple of dt
  /// in [0, horizon]. Empty means {horizon}.
  std::vector<double> record_times;
  WeightDirection weights = WeightDirection::None;
  int threads = 1;
};

/// A path that broke down; its index and time are kept so the failure can be
/// replayed from (seed, path).
struct PathFailureRecord {
  std::uint32_t path;
  double time;
  std::string message;
};

/// Per record time (rows) and shell (columns, shell n in column n-1).
struct EnsembleStats {
  std::vector<double> times;
  int shells = 0;
  int paths_requested = 0;
  int paths_completed = 0;
  std::vector<PathFailureRecord> failures;

  Eigen::MatrixXd mean_sq;  // E|X_n(t)|^2
  Eigen::MatrixXd se;
  std::vector<double> energy_mean;
  std::vector<double> energy_se;

  // Filled only when weights != None. The weighted estimators average
  // f * exp(z - qv/2) over the simulated paths.
  bool weighted = false;
  std::vector<double> weight_mean;
  std::vector<double> weight_se;
  std::vector<double> ess;
  std::vector<double> qv_max;
  Eigen::MatrixXd weighted_mean_sq;
  Eigen::MatrixXd weighted_se;
  std::vector<double> weighted_energy_mean;
  std::vector<double> weighted_energy_se;
};

/// Called at step 0 and after every step.
using PathObserver =
    std::function<void(int step, const TruncatedState& state, const PathWeight& weight)>;

/// Number of steps for a horizon; throws StructuralError unless the horizon
/// is a multiple of dt.
int step_count(double horizon, double dt);

/// Runs one path from x0 with noise keyed by (seed, path, step). Throws
/// PathFailure on breakdown.
void simulate_path(Integrator& integrator, NoiseSlab& slab, const TruncatedState& x0,
                   std::uint64_t seed, std::uint32_t path, int steps, WeightDirection weights,
                   const PathObserver& observer);

/// Monte Carlo ensemble over `paths` independent paths. Paths are grouped in
/// fixed chunks and the chunk statistics are merged pairwise in chunk order,
/// so results are identical for any thread count.
EnsembleStats run_ensemble(const TruncatedModel& model, std::span<const double> x0,
                           const EnsembleConfig& config);

}  // namespace shellsde
