#include "shellsde/chain_sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "shellsde/errors.hpp"
#include "shellsde/moment_flow.hpp"

namespace shellsde {

// ---- AliasTable ---------------------------------------------------------------

AliasTable::AliasTable(std::span<const double> weights) {
  const int n = static_cast<int>(weights.size());
  if (n == 0) throw StructuralError("alias table needs at least one outcome");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw StructuralError("alias weights must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw StructuralError("alias weights sum to zero");
  prob_.assign(static_cast<std::size_t>(n), 0.0);
  alias_.assign(static_cast<std::size_t>(n), 0);
  std::vector<double> scaled(static_cast<std::size_t>(n));
  std::vector<int> small, large;
  for (int i = 0; i < n; ++i) {
    scaled[static_cast<std::size_t>(i)] = weights[static_cast<std::size_t>(i)] * n / total;
    (scaled[static_cast<std::size_t>(i)] < 1.0 ? small : large).push_back(i);
  }
  while (!small.empty() && !large.empty()) {
    const int s = small.back();
    small.pop_back();
    const int l = large.back();
    prob_[static_cast<std::size_t>(s)] = scaled[static_cast<std::size_t>(s)];
    alias_[static_cast<std::size_t>(s)] = l;
    scaled[static_cast<std::size_t>(l)] += scaled[static_cast<std::size_t>(s)] - 1.0;
    if (scaled[static_cast<std::size_t>(l)] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  for (int i : large) prob_[static_cast<std::size_t>(i)] = 1.0;
  for (int i : small) prob_[static_cast<std::size_t>(i)] = 1.0;  // roundoff leftovers
}

int AliasTable::sample(double u1, double u2) const {
  const int n = size();
  int k = static_cast<int>((1.0 - u1) * n);  // u1 in (0,1] -> k in [0, n-1]
  k = std::clamp(k, 0, n - 1);
  return u2 <= prob_[static_cast<std::size_t>(k)] ? k : alias_[static_cast<std::size_t>(k)];
}

// ---- JumpTable ----------------------------------------------------------------

JumpTable::JumpTable(const ModelSpec& spec) : spec_(spec) {
  // sigma = 0 is allowed here: every row then has zero rate and absorbs.
  ModelSpec probe = spec_;
  if (probe.sigma == 0.0) probe.sigma = 1.0;
  require_valid(probe);
  if (!has_identity_grams(spec_))
    throw ModelError(
        "the chain representation needs every L_i = B_i B_i^T to be the identity");
}

JumpTable::Row JumpTable::make_row(int n) const {
  Row row;
  std::map<int, double> by_target;
  const double s2 = spec_.sigma * spec_.sigma;
  for (int i = 0; i < spec_.size(); ++i) {
    if (!is_active(spec_, i, n)) continue;
    const double k = coefficient(spec_, i, n);
    const double w = s2 * k * k;
    if (w <= 0.0) continue;
    by_target[n + spec_.interactions[static_cast<std::size_t>(i)].r] += w;
    row.rate += w;
  }
  for (const auto& [m, w] : by_target) {
    row.targets.push_back(m);
    row.probs.push_back(w / row.rate);
  }
  if (!row.targets.empty()) row.alias = AliasTable(row.probs);
  return row;
}

void JumpTable::reserve(int max_level) {
  while (static_cast<int>(rows_.size()) < max_level)
    rows_.push_back(make_row(static_cast<int>(rows_.size()) + 1));
}

const JumpTable::Row& JumpTable::row(int n) {
  if (n < 1) throw StructuralError("chain shells start at 1");
  reserve(n);
  return rows_[static_cast<std::size_t>(n - 1)];
}

const JumpTable::Row& JumpTable::row(int n) const {
  if (n < 1 || n > static_cast<int>(rows_.size()))
    throw StructuralError("jump table row " + std::to_string(n) + " not built; call reserve()");
  return rows_[static_cast<std::size_t>(n - 1)];
}

int embedded_step(const JumpTable& table, int n, CounterRng& rng) {
  const auto& r = table.row(n);
  if (r.targets.empty()) throw ModelError("shell has no outgoing jumps");
  const double u1 = rng.uniform();
  const double u2 = rng.uniform();
  return r.targets[static_cast<std::size_t>(r.alias.sample(u1, u2))];
}

IncrementDistribution increment_distribution(const ModelSpec& spec) {
  require_valid(spec);
  IncrementDistribution d;
  double total = 0.0;
  for (const auto& in : spec.interactions) total += in.k * in.k;
  if (!(total > 0.0)) throw ModelError("all interaction coefficients vanish");
  for (const auto& in : spec.interactions) d.q[in.r] += in.k * in.k / total;
  for (const auto& [r, q] : d.q) d.drift += r * q;
  return d;
}

std::string to_string(ChainStatus s) {
  switch (s) {
    case ChainStatus::Alive: return "alive";
    case ChainStatus::Exploded: return "exploded";
    case ChainStatus::Absorbed: return "absorbed";
  }
  return "?";
}

int ChainTrajectory::position_at(double t) const {
  if (status != ChainStatus::Alive && t >= end_time) return 0;
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0;
  return positions[static_cast<std::size_t>(it - times.begin() - 1)];
}

int draw_start(std::span<const double> start_weights, CounterRng& rng) {
  double total = 0.0;
  for (double w : start_weights) {
    if (!(w >= 0.0)) throw StructuralError("start weights must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw StructuralError("start distribution is empty");
  const double target = (1.0 - rng.uniform()) * total;  // [0, total)
  double acc = 0.0;
  for (std::size_t j = 0; j < start_weights.size(); ++j) {
    acc += start_weights[j];
    if (target < acc && start_weights[j] > 0.0) return static_cast<int>(j) + 1;
  }
  for (std::size_t j = start_weights.size(); j-- > 0;)
    if (start_weights[j] > 0.0) return static_cast<int>(j) + 1;
  return 1;
}

ChainTrajectory simulate_chain(const JumpTable& table, std::span<const double> start_weights,
                               double horizon, const ChainCaps& caps, CounterRng& rng) {
  if (caps.max_level < 1 || caps.max_jumps < 1) throw StructuralError("chain caps must be >= 1");
  if (table.built() < caps.max_level)
    throw StructuralError("jump table must be reserved up to max_level");
  ChainTrajectory tr;
  int n = draw_start(start_weights, rng);
  double t = 0.0;
  tr.times.push_back(0.0);
  tr.positions.push_back(n);
  if (n > caps.max_level) {
    tr.status = ChainStatus::Exploded;
    tr.end_time = 0.0;
    return tr;
  }
  long jumps = 0;
  while (true) {
    const auto& row = table.row(n);
    if (!(row.rate > 0.0) || row.targets.empty()) {
      tr.status = ChainStatus::Absorbed;
      tr.end_time = t;
      return tr;
    }
    t += rng.exponential(row.rate);
    if (t > horizon) {
      tr.status = ChainStatus::Alive;
      tr.end_time = horizon;
      return tr;
    }
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    n = row.targets[static_cast<std::size_t>(row.alias.sample(u1, u2))];
    ++jumps;
    if (n > caps.max_level || jumps >= caps.max_jumps) {
      tr.status = ChainStatus::Exploded;
      tr.end_time = t;
      return tr;
    }
    tr.times.push_back(t);
    tr.positions.push_back(n);
  }
}

// ---- survival -------------------------------------------------------------------

namespace {

// Pool-adjacent-violators for a nonincreasing fit.
std::vector<double> isotonic_nonincreasing(const std::vector<double>& y) {
  std::vector<double> level;
  std::vector<int> width;
  for (double v : y) {
    level.push_back(v);
    width.push_back(1);
    while (level.size() > 1 && level[level.size() - 2] < level.back()) {
      const double w1 = width[width.size() - 2], w2 = width.back();
      const double merged = (level[level.size() - 2] * w1 + level.back() * w2) / (w1 + w2);
      level.pop_back();
      width.pop_back();
      level.back() = merged;
      width.back() += static_cast<int>(w2);
    }
  }
  std::vector<double> out;
  for (std::size_t b = 0; b < level.size(); ++b)
    out.insert(out.end(), static_cast<std::size_t>(width[b]), level[b]);
  return out;
}

double residual_bound(const JumpTable& table, int max_level) {
  // E[V_n | V_n > 0] has converged well inside a truncation this wide.
  const auto q = build_qmatrix(table.spec(), max_level + 20);
  const auto visits = expected_visits(q);
  double vmax = 0.0;
  for (int n = std::max(1, max_level / 2); n <= max_level; ++n)
    vmax = std::max(vmax, visits[static_cast<std::size_t>(n - 1)]);
  double tail = 0.0;
  for (int n = max_level + 1; n <= max_level + 400; ++n) {
    const double r = total_rate(table.spec(), n);
    if (!(r > 0.0) || !std::isfinite(r)) break;
    tail += 1.0 / r;
  }
  return vmax * tail;
}

}  // namespace

SurvivalCurve survival_curve(const JumpTable& table, std::span<const double> start_weights,
                             std::span<const double> times, int replicates,
                             const SurvivalOptions& options) {
  if (replicates < 1) throw StructuralError("need at least one replicate");
  if (times.empty()) throw StructuralError("survival grid is empty");
  for (std::size_t j = 1; j < times.size(); ++j)
    if (times[j] < times[j - 1]) throw StructuralError("survival grid must be nondecreasing");
  const double horizon = times.back();
  const int occ = options.occupancy_shells;
  const std::size_t nt = times.size();

  // Per-replicate outcomes; merged in replicate order afterwards.
  std::vector<std::vector<int>> where(static_cast<std::size_t>(replicates));
  std::vector<ChainStatus> status(static_cast<std::size_t>(replicates));
  std::atomic<int> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;
  auto worker = [&]() {
    try {
      for (int r = next++; r < replicates; r = next++) {
        CounterRng rng(options.seed, RngStream::Chain, static_cast<std::uint32_t>(r));
        const auto tr = simulate_chain(table, start_weights, horizon, options.caps, rng);
        auto& w = where[static_cast<std::size_t>(r)];
        w.resize(nt);
        for (std::size_t j = 0; j < nt; ++j) w[j] = tr.position_at(times[j]);
        status[static_cast<std::size_t>(r)] = tr.status;
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(fatal_mutex);
      if (!fatal) fatal = std::current_exception();
      next = replicates;
    }
  };
  const int threads = std::clamp(options.threads, 1, replicates);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  SurvivalCurve sc;
  sc.times.assign(times.begin(), times.end());
  sc.replicates = replicates;
  sc.survival.assign(nt, 0.0);
  sc.se.assign(nt, 0.0);
  sc.occupancy.assign(nt, std::vector<double>(static_cast<std::size_t>(std::max(occ, 0)), 0.0));
  sc.occupancy_se = sc.occupancy;
  std::vector<long> alive(nt, 0);
  std::vector<std::vector<long>> counts(nt, std::vector<long>(sc.occupancy[0].size(), 0));
  for (int r = 0; r < replicates; ++r) {
    const auto& w = where[static_cast<std::size_t>(r)];
    for (std::size_t j = 0; j < nt; ++j) {
      if (w[j] > 0) {
        ++alive[j];
        if (w[j] <= occ) ++counts[j][static_cast<std::size_t>(w[j] - 1)];
      }
    }
    if (status[static_cast<std::size_t>(r)] == ChainStatus::Exploded) ++sc.exploded;
    if (status[static_cast<std::size_t>(r)] == ChainStatus::Absorbed) ++sc.absorbed;
  }
  const double R = replicates;
  auto binom_se = [R](double p) { return std::sqrt(std::max(p * (1.0 - p), 0.0) / R); };
  for (std::size_t j = 0; j < nt; ++j) {
    sc.survival[j] = alive[j] / R;
    sc.se[j] = binom_se(sc.survival[j]);
    for (std::size_t n = 0; n < counts[j].size(); ++n) {
      sc.occupancy[j][n] = counts[j][n] / R;
      sc.occupancy_se[j][n] = binom_se(sc.occupancy[j][n]);
    }
  }
  sc.monotone = isotonic_nonincreasing(sc.survival);
  sc.residual_time_bound = residual_bound(table, options.caps.max_level);
  return sc;
}

VisitStatistics visit_statistics(const JumpTable& table, int start, int shells, int replicates,
                                 std::uint64_t seed) {
  if (start < 1 || start > shells) throw StructuralError("start shell outside 1..N");
  if (replicates < 2) throw StructuralError("need at least two replicates");
  if (table.built() < shells) throw StructuralError("jump table must be reserved up to N");
  const auto ns = static_cast<std::size_t>(shells);
  std::vector<double> sum(ns, 0.0), sum2(ns, 0.0);
  std::vector<int> reached(ns, 0);
  constexpr int kTrack = 4;
  std::vector<std::vector<int>> exceed(ns, std::vector<int>(kTrack + 1, 0));
  std::vector<int> v(ns);
  for (int r = 0; r < replicates; ++r) {
    CounterRng rng(seed, RngStream::Chain, static_cast<std::uint32_t>(r));
    std::fill(v.begin(), v.end(), 0);
    int n = start;
    for (long k = 0; k < 100'000'000L; ++k) {
      n = embedded_step(table, n, rng);
      if (n > shells) break;
      ++v[static_cast<std::size_t>(n - 1)];
    }
    for (std::size_t j = 0; j < ns; ++j) {
      if (v[j] == 0) continue;
      ++reached[j];
      sum[j] += v[j];
      sum2[j] += static_cast<double>(v[j]) * v[j];
      for (int k = 1; k <= kTrack; ++k)
        if (v[j] > k) ++exceed[j][static_cast<std::size_t>(k)];
    }
  }
  VisitStatistics vs;
  vs.mean.assign(ns, 0.0);
  vs.se.assign(ns, 0.0);
  vs.reached.assign(ns, 0.0);
  vs.reached_count = reached;
  vs.continuation.assign(ns, std::vector<double>(kTrack, 0.0));
  vs.continuation_trials.assign(ns, std::vector<int>(kTrack, 0));
  for (std::size_t j = 0; j < ns; ++j) {
    vs.reached[j] = static_cast<double>(reached[j]) / replicates;
    const double m = reached[j];
    if (m >= 1) vs.mean[j] = sum[j] / m;
    if (m >= 2) vs.se[j] = std::sqrt(std::max(sum2[j] / m - vs.mean[j] * vs.mean[j], 0.0) / (m - 1));
    // P(V > k+1 | V > k) for k = 0..3; trials are the replicates with V > k.
    for (int k = 0; k < kTrack; ++k) {
      const int trials = k == 0 ? reached[j] : exceed[j][static_cast<std::size_t>(k)];
      const int hits = exceed[j][static_cast<std::size_t>(k + 1)];
      vs.continuation_trials[j][static_cast<std::size_t>(k)] = trials;
      vs.continuation[j][static_cast<std::size_t>(k)] =
          trials > 0 ? static_cast<double>(hits) / trials : 0.0;
    }
  }
  return vs;
}

}  // namespace shellsde
