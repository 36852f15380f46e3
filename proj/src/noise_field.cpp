#include "shellsde/noise_field.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "shellsde/errors.hpp"

namespace shellsde {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

constexpr int kMOffset = 1 << 15;

}  // namespace

PhiloxCounter philox4x32(PhiloxCounter ctr, PhiloxKey key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kPhiloxW0;
      key[1] += kPhiloxW1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

PhiloxKey philox_key(std::uint64_t seed) {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

double unit_uniform(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

namespace {

// Wichura's AS241 (PPND16) inverse normal CDF, accurate to about 1e-16.
double inverse_normal(double p) {
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
  double v;
  if (r <= 5.0) {
    r -= 1.6;
    v = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
            3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    v = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -v : v;
}

// Midpoint of one of 2^53 equal cells, strictly inside (0, 1).
double open_uniform(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

double standard_normal_quantile(double p) { return inverse_normal(p); }

std::pair<double, double> normal_pair(const PhiloxCounter& counter,
                                      const PhiloxKey& key) {
  const auto r = philox4x32(counter, key);
  return {inverse_normal(open_uniform(r[0], r[1])), inverse_normal(open_uniform(r[2], r[3]))};
}

// ---- CounterRng -------------------------------------------------------------

CounterRng::CounterRng(std::uint64_t seed, RngStream stream, std::uint32_t id)
    : key_(philox_key(seed)),
      counter_{0u, 0u, id, static_cast<std::uint32_t>(stream) | 0x80000000u} {}

void CounterRng::refill() {
  const auto r = philox4x32(counter_, key_);
  buffer_ = {unit_uniform(r[0], r[1]), unit_uniform(r[2], r[3])};
  available_ = 2;
  if (++counter_[0] == 0) ++counter_[1];
}

double CounterRng::uniform() {
  if (available_ == 0) refill();
  return buffer_[static_cast<std::size_t>(2 - available_--)];
}

double CounterRng::exponential(double rate) { return -std::log(uniform()) / rate; }

// ---- NoiseSlab --------------------------------------------------------------

NoiseSlab::NoiseSlab(const ModelSpec& spec, int shells, double dt, int lanes)
    : dim_(spec.dim), lanes_(lanes), dt_(dt) {
  if (shells < 1) throw StructuralError("noise slab needs at least one shell");
  if (shells > kMaxShells)
    throw StructuralError("noise window overflow: truncation level " +
                          std::to_string(shells) + " exceeds " +
                          std::to_string(kMaxShells));
  if (!(dt > 0.0)) throw StructuralError("noise slab needs dt > 0");
  if (lanes < 1) throw StructuralError("noise slab needs at least one lane");
  int hmin = 0, hmax = 0;
  for (const auto& in : spec.interactions) {
    hmin = std::min(hmin, in.h);
    hmax = std::max(hmax, in.h);
  }
  lo_ = 1 + hmin;
  hi_ = shells + hmax;
  width_ = hi_ - lo_ + 1;
  slots_ = static_cast<int>(spec.istar.size());
  slot_by_interaction_.resize(spec.interactions.size());
  for (int i = 0; i < spec.size(); ++i)
    slot_by_interaction_[static_cast<std::size_t>(i)] = spec.istar_slot(i);
  plane_ = static_cast<std::size_t>(slots_) * width_ * dim_;
  normals_.assign(plane_ * lanes_, 0.0);
  increments_.assign(plane_, 0.0);
}

int NoiseSlab::slot_of(int interaction) const {
  return slot_by_interaction_.at(static_cast<std::size_t>(interaction));
}

void NoiseSlab::check_window(int m) const {
  if (!contains(m))
    throw std::out_of_range("noise index " + std::to_string(m) +
                            " outside slab window [" + std::to_string(lo_) +
                            ", " + std::to_string(hi_) + "]");
}

void NoiseSlab::fill(const NoiseKey& key) {
  const auto pkey = philox_key(key.seed);
  const double sdt = std::sqrt(dt_);
  const int per_coord = dim_ * lanes_;
  for (int slot = 0; slot < slots_; ++slot)
    for (int m = lo_; m <= hi_; ++m) {
      const std::size_t base = offset(slot, m);
      for (int j = 0; j < per_coord; j += 2) {
        const std::uint32_t packed = (static_cast<std::uint32_t>(slot) << 24) |
                                     (static_cast<std::uint32_t>(m + kMOffset) << 8) |
                                     static_cast<std::uint32_t>(j / 2);
        const auto z = normal_pair({packed, key.step, key.path,
                                    static_cast<std::uint32_t>(RngStream::Noise)},
                                   pkey);
        for (int q = 0; q < 2 && j + q < per_coord; ++q) {
          const int lane = (j + q) / dim_;
          const int comp = (j + q) % dim_;
          normals_[static_cast<std::size_t>(lane) * plane_ + base + comp] =
              q == 0 ? z.first : z.second;
        }
      }
      for (int comp = 0; comp < dim_; ++comp)
        increments_[base + comp] = sdt * normals_[base + comp];
    }
}

void NoiseSlab::clear() {
  std::fill(normals_.begin(), normals_.end(), 0.0);
  std::fill(increments_.begin(), increments_.end(), 0.0);
}

std::span<const double> NoiseSlab::lookup(int interaction, int m) const {
  check_window(m);
  return {increments_.data() + offset(slot_of(interaction), m),
          static_cast<std::size_t>(dim_)};
}

std::span<const double> NoiseSlab::standard(int interaction, int m, int lane) const {
  check_window(m);
  if (lane < 0 || lane >= lanes_) throw std::out_of_range("noise lane out of range");
  return {normals_.data() + static_cast<std::size_t>(lane) * plane_ +
              offset(slot_of(interaction), m),
          static_cast<std::size_t>(dim_)};
}

void NoiseSlab::set_increment(int interaction, int m, std::span<const double> value) {
  check_window(m);
  if (value.size() != static_cast<std::size_t>(dim_))
    throw StructuralError("increment has the wrong dimension");
  const std::size_t base = offset(slot_of(interaction), m);
  const double sdt = std::sqrt(dt_);
  for (int comp = 0; comp < dim_; ++comp) {
    increments_[base + comp] = value[static_cast<std::size_t>(comp)];
    normals_[base + comp] = value[static_cast<std::size_t>(comp)] / sdt;
  }
}

NoiseSlab sample_slab(const ModelSpec& spec, int shells, double dt,
                      const NoiseKey& key, int lanes) {
  NoiseSlab slab(spec, shells, dt, lanes);
  slab.fill(key);
  return slab;
}

// ---- GOY bridge -------------------------------------------------------------

namespace {

struct BridgeInputs {
  std::span<const double> w1;  // W_{1,n+2}
  std::span<const double> w2;  // W_{2,n-1}
  double a, lc, s;
};

BridgeInputs bridge_inputs(const NoiseSlab& slab, const GoyNoiseParams& p, int n) {
  if (slab.dim() != 2) throw StructuralError("GOY noise bridge needs a 2-dimensional slab");
  const double lc = p.c / p.lambda;
  return {slab.lookup(0, n + 2), slab.lookup(1, n - 1), p.a, lc,
          std::sqrt(p.a * p.a + lc * lc)};
}

}  // namespace

std::complex<double> goy_noise_bridge(const NoiseSlab& slab,
                                      const GoyNoiseParams& p, int n) {
  const auto in = bridge_inputs(slab, p, n);
  return {(in.a * in.w1[0] - in.lc * in.w2[0]) / in.s,
          -(in.a * in.w1[1] - in.lc * in.w2[1]) / in.s};
}

std::complex<double> goy_noise_complement(const NoiseSlab& slab,
                                          const GoyNoiseParams& p, int n) {
  const auto in = bridge_inputs(slab, p, n);
  return {(in.lc * in.w1[0] + in.a * in.w2[0]) / in.s,
          -(in.lc * in.w1[1] + in.a * in.w2[1]) / in.s};
}

std::pair<std::array<double, 2>, std::array<double, 2>> goy_noise_unbridge(
    std::complex<double> w, std::complex<double> w_complement,
    const GoyNoiseParams& p) {
  const double lc = p.c / p.lambda;
  const double s = std::sqrt(p.a * p.a + lc * lc);
  const std::array<double, 2> v{w.real(), -w.imag()};
  const std::array<double, 2> vt{w_complement.real(), -w_complement.imag()};
  std::array<double, 2> w1{}, w2{};
  for (int j = 0; j < 2; ++j) {
    w1[static_cast<std::size_t>(j)] = (p.a * v[static_cast<std::size_t>(j)] + lc * vt[static_cast<std::size_t>(j)]) / s;
    w2[static_cast<std::size_t>(j)] = (-lc * v[static_cast<std::size_t>(j)] + p.a * vt[static_cast<std::size_t>(j)]) / s;
  }
  return {w1, w2};
}

}  // namespace shellsde
