#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "shellsde/model_spec.hpp"

namespace shellsde {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;
PhiloxCounter philox4x32(PhiloxCounter counter, PhiloxKey key);

PhiloxKey philox_key(std::uint64_t seed);

/// Uniform in (0, 1] from 64 random bits (53-bit resolution).
double unit_uniform(std::uint32_t hi, std::uint32_t lo);

/// Inverse standard normal CDF for p in (0, 1).
double standard_normal_quantile(double p);

/// Two independent standard normals from one Philox block, each by
/// inversion of 64 random bits.
std::pair<double, double> normal_pair(const PhiloxCounter& counter,
                                      const PhiloxKey& key);

/// Stream tags keep the SDE noise and the chain simulator on disjoint
/// counter ranges under the same seed.
enum class RngStream : std::uint32_t { Noise = 0, Chain = 1, Start = 2 };

/// Sequential draws from a counter-based stream identified by
/// (seed, stream, id). Two objects with the same identity produce the same
/// sequence regardless of what else runs concurrently.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, RngStream stream, std::uint32_t id);

  double uniform();
  double exponential(double rate);

 private:
  void refill();

  PhiloxKey key_;
  PhiloxCounter counter_;
  std::array<double, 2> buffer_{};
  int available_ = 0;
};

/// Identifies one time step of one path.
struct NoiseKey {
  std::uint64_t seed = 0;
  std::uint32_t path = 0;
  std::uint32_t step = 0;
};

/// Largest truncation level a slab can address.
inline constexpr int kMaxShells = 16000;

/// Brownian increments W_{i,m}(t+dt) - W_{i,m}(t) for the independent
/// representatives i in I* and every noise index m reachable from shells
/// 1..N, i.e. m in [1 + min h_i, N + max h_i]. Lookups through a paired
/// interaction return the representative's values.
///
/// Besides the increments (lane 0, variance dt per component) a slab may
/// carry extra standard-normal lanes used by schemes that need more than
/// the increment itself.
class NoiseSlab {
 public:
  NoiseSlab(const ModelSpec& spec, int shells, double dt, int lanes = 1);

  /// Overwrites all values with the draws keyed by `key`.
  void fill(const NoiseKey& key);
  void clear();

  double dt() const noexcept { return dt_; }
  int window_lo() const noexcept { return lo_; }
  int window_hi() const noexcept { return hi_; }
  int lanes() const noexcept { return lanes_; }
  int dim() const noexcept { return dim_; }
  bool contains(int m) const noexcept { return m >= lo_ && m <= hi_; }

  /// Increment of W_{i,m}; throws std::out_of_range outside the window.
  std::span<const double> lookup(int interaction, int m) const;
  /// Standard normals backing lane `lane` (lane 0 is increment / sqrt(dt)).
  std::span<const double> standard(int interaction, int m, int lane) const;

  /// Sets the increment of W_{i,m} (and its alias); standard lane 0 follows.
  void set_increment(int interaction, int m, std::span<const double> value);

  /// Direct access by I* slot, used by the integrators' inner loops.
  const double* increment_by_slot(int slot, int m) const noexcept {
    return increments_.data() + offset(slot, m);
  }
  const double* standard_by_slot(int slot, int m, int lane) const noexcept {
    return normals_.data() + static_cast<std::size_t>(lane) * plane_ + offset(slot, m);
  }

 private:
  std::size_t offset(int slot, int m) const noexcept {
    return (static_cast<std::size_t>(slot) * width_ + (m - lo_)) * dim_;
  }
  int slot_of(int interaction) const;
  void check_window(int m) const;

  std::vector<int> slot_by_interaction_;
  int dim_;
  int lo_;
  int hi_;
  int width_;
  int slots_;
  int lanes_;
  double dt_;
  std::size_t plane_;
  std::vector<double> normals_;
  std::vector<double> increments_;
};

NoiseSlab sample_slab(const ModelSpec& spec, int shells, double dt,
                      const NoiseKey& key, int lanes = 1);

/// Parameters tying the complex GOY noise to the real family.
struct GoyNoiseParams {
  double a;
  double c;
  double lambda;
};

/// Complex increment dw_n = (a W_{1,n+2} - c/lambda W_{2,n-1}) / s with the
/// second real component entering with a minus sign in the imaginary part;
/// s = sqrt(a^2 + c^2/lambda^2). Each real part has variance dt.
std::complex<double> goy_noise_bridge(const NoiseSlab& slab,
                                      const GoyNoiseParams& p, int n);

/// Complementary combination dw~_n = (c/lambda W_{1,n+2} + a W_{2,n-1}) / s,
/// conjugated the same way. Together with dw_n it is an orthogonal change
/// of variables of the pair (W_{1,n+2}, W_{2,n-1}).
std::complex<double> goy_noise_complement(const NoiseSlab& slab,
                                          const GoyNoiseParams& p, int n);

/// Inverse of (goy_noise_bridge, goy_noise_complement): returns the real
/// 2-vectors (W_{1,n+2}, W_{2,n-1}).
std::pair<std::array<double, 2>, std::array<double, 2>> goy_noise_unbridge(
    std::complex<double> w, std::complex<double> w_complement,
    const GoyNoiseParams& p);

}  // namespace shellsde
