#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "shellsde/model_spec.hpp"
#include "shellsde/noise_field.hpp"

namespace shellsde {

/// Walker alias table over a finite outcome set.
class AliasTable {
 public:
  AliasTable() = default;
  /// Weights must be >= 0 with a positive sum.
  explicit AliasTable(std::span<const double> weights);

  /// Index drawn with probability weight / sum, using two uniforms in (0, 1].
  int sample(double u1, double u2) const;
  int size() const noexcept { return static_cast<int>(prob_.size()); }

 private:
  std::vector<double> prob_;
  std::vector<int> alias_;
};

/// Jump rates of the chain with q-matrix Pi, row by row, without
/// truncation: rows are built lazily up to the requested level.
class JumpTable {
 public:
  struct Row {
    double rate = 0.0;             // pi_n
    std::vector<int> targets;      // m != n with pi_{n,m} > 0
    std::vector<double> probs;     // pi_{n,m} / pi_n
    AliasTable alias;
  };

  /// Refuses (ModelError) unless every L_i is the identity.
  explicit JumpTable(const ModelSpec& spec);

  /// Row for shell n >= 1 (built on first use; not thread safe for new rows,
  /// so call reserve() before sharing across threads).
  const Row& row(int n);
  const Row& row(int n) const;
  void reserve(int max_level);
  int built() const noexcept { return static_cast<int>(rows_.size()); }
  const ModelSpec& spec() const noexcept { return spec_; }

 private:
  Row make_row(int n) const;

  ModelSpec spec_;
  std::vector<Row> rows_;
};

/// One step of the embedded chain from n.
int embedded_step(const JumpTable& table, int n, CounterRng& rng);

struct IncrementDistribution {
  std::map<int, double> q;  // offset r -> q_r
  double drift = 0.0;       // sum_r r q_r
};

/// Increment law of the embedded chain once all interactions are active.
IncrementDistribution increment_distribution(const ModelSpec& spec);

enum class ChainStatus { Alive, Exploded, Absorbed };
std::string to_string(ChainStatus s);

struct ChainCaps {
  long max_jumps = 10'000'000;
  int max_level = 60;
};

struct ChainTrajectory {
  std::vector<double> times;  // jump times, times[0] = 0
  std::vector<int> positions;
  ChainStatus status = ChainStatus::Alive;
  double end_time = 0.0;      // horizon, or the time the cap was hit
  /// Position at time t, or 0 once the chain has exploded or been absorbed.
  int position_at(double t) const;
};

/// Draws a start shell from the weights |x_n|^2 (index 0 is shell 1).
int draw_start(std::span<const double> start_weights, CounterRng& rng);

/// Simulates until the horizon or a cap. Reaching a level above
/// caps.max_level or exceeding caps.max_jumps counts as explosion; a row
/// with zero total rate absorbs.
ChainTrajectory simulate_chain(const JumpTable& table, std::span<const double> start_weights,
                               double horizon, const ChainCaps& caps, CounterRng& rng);

struct SurvivalOptions {
  ChainCaps caps;
  std::uint64_t seed = 1;
  int threads = 1;
  /// Occupancy histogram covers shells 1..occupancy_shells.
  int occupancy_shells = 20;
};

struct SurvivalCurve {
  std::vector<double> times;
  std::vector<double> survival;      // P(alive at t)
  std::vector<double> se;
  std::vector<double> monotone;      // isotonic (nonincreasing) fit for reporting
  std::vector<std::vector<double>> occupancy;  // [t][n-1] = P(xi_t = n)
  std::vector<std::vector<double>> occupancy_se;
  int replicates = 0;
  int exploded = 0;
  int absorbed = 0;
  /// Upper bound on the mean remaining time to infinity once above
  /// max_level: sup_n E[V_n|V_n>0] * sum_{n > L} 1/pi_n, with the visit
  /// bound taken from the highest simulated levels.
  double residual_time_bound = 0.0;
};

/// Replicate r uses CounterRng(seed, Chain, r), so the curve does not depend
/// on the thread count.
SurvivalCurve survival_curve(const JumpTable& table, std::span<const double> start_weights,
                             std::span<const double> times, int replicates,
                             const SurvivalOptions& options);

struct VisitStatistics {
  std::vector<double> mean;        // E[V_n | V_n > 0], index n-1
  std::vector<double> se;
  std::vector<double> reached;     // P(V_n > 0)
  std::vector<int> reached_count;
  /// continuation[n-1][k] = P(V_n > k+1 | V_n > k) for k = 0..3.
  std::vector<std::vector<double>> continuation;
  std::vector<std::vector<int>> continuation_trials;
};

/// Embedded-chain visit counts V_n = #{k >= 1 : zeta_k = n} for n <= N,
/// killed on first exit above N, from start shell `start`.
VisitStatistics visit_statistics(const JumpTable& table, int start, int shells, int replicates,
                                 std::uint64_t seed);

}  // namespace shellsde
