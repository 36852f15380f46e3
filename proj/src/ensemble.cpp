#include "shellsde/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "shellsde/errors.hpp"

namespace shellsde {

namespace {

constexpr int kChunk = 64;

// Running (count, mean, M2) per cell, merged with Chan's formula.
struct Moments {
  std::vector<double> count, mean, m2;

  explicit Moments(std::size_t cells = 0) : count(cells, 0.0), mean(cells, 0.0), m2(cells, 0.0) {}

  void push(std::size_t cell, double v) {
    count[cell] += 1.0;
    const double delta = v - mean[cell];
    mean[cell] += delta / count[cell];
    m2[cell] += delta * (v - mean[cell]);
  }

  void merge(const Moments& o) {
    for (std::size_t j = 0; j < count.size(); ++j) {
      const double na = count[j], nb = o.count[j];
      if (nb == 0.0) continue;
      if (na == 0.0) {
        count[j] = nb;
        mean[j] = o.mean[j];
        m2[j] = o.m2[j];
        continue;
      }
      const double n = na + nb;
      const double delta = o.mean[j] - mean[j];
      mean[j] += delta * nb / n;
      m2[j] += o.m2[j] + delta * delta * na * nb / n;
      count[j] = n;
    }
  }

  double se(std::size_t cell) const {
    const double n = count[cell];
    if (n < 2.0) return 0.0;
    return std::sqrt(std::max(m2[cell], 0.0) / (n - 1.0) / n);
  }
};

// Cell layout: per record r, shells 0..N-1 then energy.
struct ChunkResult {
  Moments plain;
  Moments weighted;
  Moments weight;
  std::vector<double> sum_w, sum_w2, qv_max;
  int completed = 0;
  std::vector<PathFailureRecord> failures;

  ChunkResult(std::size_t records, int shells, bool with_weights)
      : plain(records * static_cast<std::size_t>(shells + 1)),
        weighted(with_weights ? records * static_cast<std::size_t>(shells + 1) : 0),
        weight(with_weights ? records : 0),
        sum_w(with_weights ? records : 0, 0.0),
        sum_w2(with_weights ? records : 0, 0.0),
        qv_max(with_weights ? records : 0, 0.0) {}

  void merge(ChunkResult& o) {
    plain.merge(o.plain);
    weighted.merge(o.weighted);
    weight.merge(o.weight);
    for (std::size_t r = 0; r < sum_w.size(); ++r) {
      sum_w[r] += o.sum_w[r];
      sum_w2[r] += o.sum_w2[r];
      qv_max[r] = std::max(qv_max[r], o.qv_max[r]);
    }
    completed += o.completed;
    failures.insert(failures.end(), o.failures.begin(), o.failures.end());
  }
};

}  // namespace

int step_count(double horizon, double dt) {
  if (!(dt > 0.0)) throw StructuralError("dt must be > 0");
  if (!(horizon >= 0.0)) throw StructuralError("horizon must be >= 0");
  const double ratio = horizon / dt;
  const double steps = std::round(ratio);
  if (std::abs(ratio - steps) > 1e-9 * std::max(1.0, ratio))
    throw StructuralError("horizon is not a multiple of dt");
  if (steps > 2e9) throw StructuralError("too many steps");
  return static_cast<int>(steps);
}

void simulate_path(Integrator& integrator, NoiseSlab& slab, const TruncatedState& x0,
                   std::uint64_t seed, std::uint32_t path, int steps, WeightDirection weights,
                   const PathObserver& observer) {
  TruncatedState state = x0;
  PathWeight weight;
  if (observer) observer(0, state, weight);
  for (int s = 0; s < steps; ++s) {
    slab.fill({seed, path, static_cast<std::uint32_t>(s)});
    integrator.advance(state, slab, weights == WeightDirection::None ? nullptr : &weight, weights);
    if (observer) observer(s + 1, state, weight);
  }
}

EnsembleStats run_ensemble(const TruncatedModel& model, std::span<const double> x0,
                           const EnsembleConfig& config) {
  if (config.paths < 1) throw StructuralError("ensemble needs at least one path");
  const int steps = step_count(config.horizon, config.dt);
  const int shells = model.shells();
  const auto start = TruncatedState::from_values(shells, model.dim(), x0);

  std::vector<double> times = config.record_times;
  if (times.empty()) times.push_back(config.horizon);
  std::vector<int> record_step;
  for (double t : times) {
    if (t < 0.0 || t > config.horizon * (1.0 + 1e-12))
      throw StructuralError("record time outside [0, horizon]");
    record_step.push_back(step_count(t, config.dt));
  }
  // step -> list of record indices
  std::vector<std::vector<std::size_t>> at_step(static_cast<std::size_t>(steps) + 1);
  for (std::size_t r = 0; r < record_step.size(); ++r)
    at_step[static_cast<std::size_t>(record_step[r])].push_back(r);

  const bool with_weights = config.weights != WeightDirection::None;
  const std::size_t records = times.size();
  const std::size_t stride = static_cast<std::size_t>(shells) + 1;
  const int chunks = (config.paths + kChunk - 1) / kChunk;

  // Validate the scheme/model combination once, before spawning workers.
  { Integrator probe(model, config.dt, config.system, config.scheme); }

  std::vector<ChunkResult> results;
  results.reserve(static_cast<std::size_t>(chunks));
  for (int c = 0; c < chunks; ++c) results.emplace_back(records, shells, with_weights);

  std::atomic<int> next_chunk{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  auto worker = [&]() {
    try {
      Integrator integrator(model, config.dt, config.system, config.scheme);
      NoiseSlab slab(model.spec(), shells, config.dt, integrator.lanes_required());
      std::vector<double> values(records * stride);
      std::vector<PathWeight> wrec(records);
      for (int c = next_chunk++; c < chunks; c = next_chunk++) {
        auto& res = results[static_cast<std::size_t>(c)];
        const int first = c * kChunk;
        const int last = std::min(config.paths, first + kChunk);
        for (int p = first; p < last; ++p) {
          auto observer = [&](int step, const TruncatedState& state, const PathWeight& w) {
            for (std::size_t r : at_step[static_cast<std::size_t>(step)]) {
              double energy = 0.0;
              for (int n = 1; n <= shells; ++n) {
                const double e = state.shell_energy(n);
                values[r * stride + static_cast<std::size_t>(n - 1)] = e;
                energy += e;
              }
              values[r * stride + static_cast<std::size_t>(shells)] = energy;
              wrec[r] = w;
            }
          };
          try {
            simulate_path(integrator, slab, start, config.seed, static_cast<std::uint32_t>(p),
                          steps, config.weights, observer);
          } catch (const PathFailure& e) {
            res.failures.push_back({static_cast<std::uint32_t>(p), e.time(), e.what()});
            continue;
          }
          ++res.completed;
          for (std::size_t j = 0; j < values.size(); ++j) res.plain.push(j, values[j]);
          if (with_weights) {
            for (std::size_t r = 0; r < records; ++r) {
              const double w = wrec[r].density();
              res.weight.push(r, w);
              res.sum_w[r] += w;
              res.sum_w2[r] += w * w;
              res.qv_max[r] = std::max(res.qv_max[r], wrec[r].qv);
              for (std::size_t j = 0; j < stride; ++j)
                res.weighted.push(r * stride + j, w * values[r * stride + j]);
            }
          }
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(fatal_mutex);
      if (!fatal) fatal = std::current_exception();
      next_chunk = chunks;
    }
  };

  const int threads = std::clamp(config.threads, 1, std::max(1, chunks));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  // Pairwise reduction in chunk order.
  for (std::size_t width = 1; width < results.size(); width *= 2)
    for (std::size_t i = 0; i + width < results.size(); i += 2 * width)
      results[i].merge(results[i + width]);
  const auto& total = results.front();

  EnsembleStats out;
  out.times = times;
  out.shells = shells;
  out.paths_requested = config.paths;
  out.paths_completed = total.completed;
  out.failures = total.failures;
  out.mean_sq = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(records), shells);
  out.se = out.mean_sq;
  out.energy_mean.assign(records, 0.0);
  out.energy_se.assign(records, 0.0);
  for (std::size_t r = 0; r < records; ++r) {
    for (int n = 0; n < shells; ++n) {
      const std::size_t cell = r * stride + static_cast<std::size_t>(n);
      out.mean_sq(static_cast<Eigen::Index>(r), n) = total.plain.mean[cell];
      out.se(static_cast<Eigen::Index>(r), n) = total.plain.se(cell);
    }
    const std::size_t cell = r * stride + static_cast<std::size_t>(shells);
    out.energy_mean[r] = total.plain.mean[cell];
    out.energy_se[r] = total.plain.se(cell);
  }
  if (with_weights) {
    out.weighted = true;
    out.weight_mean.assign(records, 0.0);
    out.weight_se.assign(records, 0.0);
    out.ess.assign(records, 0.0);
    out.qv_max = total.qv_max;
    out.weighted_mean_sq = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(records), shells);
    out.weighted_se = out.weighted_mean_sq;
    out.weighted_energy_mean.assign(records, 0.0);
    out.weighted_energy_se.assign(records, 0.0);
    for (std::size_t r = 0; r < records; ++r) {
      out.weight_mean[r] = total.weight.mean[r];
      out.weight_se[r] = total.weight.se(r);
      out.ess[r] = total.sum_w2[r] > 0.0 ? total.sum_w[r] * total.sum_w[r] / total.sum_w2[r] : 0.0;
      for (int n = 0; n < shells; ++n) {
        const std::size_t cell = r * stride + static_cast<std::size_t>(n);
        out.weighted_mean_sq(static_cast<Eigen::Index>(r), n) = total.weighted.mean[cell];
        out.weighted_se(static_cast<Eigen::Index>(r), n) = total.weighted.se(cell);
      }
      const std::size_t cell = r * stride + static_cast<std::size_t>(shells);
      out.weighted_energy_mean[r] = total.weighted.mean[cell];
      out.weighted_energy_se[r] = total.weighted.se(cell);
    }
  }
  return out;
}

}  // namespace shellsde
