#include "shellsde/sde_engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "shellsde/errors.hpp"

namespace shellsde {

std::string to_string(System s) { return s == System::Nonlinear ? "nonlinear" : "linear"; }

std::string to_string(Boundary b) {
  return b == Boundary::Conservative ? "conservative" : "absorbing";
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::EulerMaruyama: return "em";
    case Scheme::Conservative: return "conservative";
    case Scheme::Exponential: return "exponential";
  }
  return "?";
}

double phi1(double z) {
  if (std::abs(z) < 1e-8) return 1.0 - 0.5 * z;
  return -std::expm1(-z) / z;
}

// ---- TruncatedState ---------------------------------------------------------

TruncatedState TruncatedState::zeros(int shells, int dim) {
  if (shells < 1 || dim < 1) throw StructuralError("state needs shells >= 1 and dim >= 1");
  TruncatedState s;
  s.shells = shells;
  s.dim = dim;
  s.x.assign(static_cast<std::size_t>(shells) * dim, 0.0);
  return s;
}

TruncatedState TruncatedState::from_values(int shells, int dim, std::span<const double> values) {
  auto s = zeros(shells, dim);
  if (values.size() > s.x.size())
    throw StructuralError("initial condition has " + std::to_string(values.size()) +
                          " components but the truncation holds " +
                          std::to_string(s.x.size()));
  std::copy(values.begin(), values.end(), s.x.begin());
  return s;
}

double TruncatedState::shell_energy(int n) const {
  double e = 0.0;
  for (double v : shell(n)) e += v * v;
  return e;
}

double TruncatedState::energy() const {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

// ---- TruncatedModel ---------------------------------------------------------

TruncatedModel::TruncatedModel(ModelSpec spec, int shells, Boundary boundary)
    : spec_(std::move(spec)), shells_(shells), boundary_(boundary) {
  if (shells < 1) throw StructuralError("truncation level must be >= 1");
  if (shells > kMaxShells)
    throw StructuralError("noise window overflow: truncation level " + std::to_string(shells) +
                          " exceeds " + std::to_string(kMaxShells));
  require_valid(spec_);

  const int d = spec_.dim;
  std::map<std::pair<int, int>, int> coord_index;
  for (int n = 1; n <= shells_; ++n) {
    for (int i = 0; i < spec_.size(); ++i) {
      if (!is_active(spec_, i, n)) continue;
      const auto& in = spec_.interactions[static_cast<std::size_t>(i)];
      const int p = n + in.r;
      if (p > shells_) continue;
      Term t{i, n, p, n + in.h, spec_.istar_slot(i), -1, coefficient(spec_, i, n)};
      const auto key = std::make_pair(t.slot, t.noise_index);
      const int term_id = static_cast<int>(terms_.size());
      auto it = coord_index.find(key);
      if (it == coord_index.end()) {
        coord_index.emplace(key, static_cast<int>(coords_.size()));
        t.coordinate = static_cast<int>(coords_.size());
        coords_.push_back({t.slot, t.noise_index, term_id, -1});
      } else {
        auto& c = coords_[static_cast<std::size_t>(it->second)];
        if (c.term_b >= 0)
          throw ModelError("noise coordinate drives more than two terms");
        c.term_b = term_id;
        t.coordinate = it->second;
      }
      terms_.push_back(t);
    }
  }
  for (const auto& c : coords_)
    if (c.term_b < 0) throw ModelError("noise coordinate drives an unpaired term");

  corrections_.reserve(static_cast<std::size_t>(shells_));
  rates_.reserve(static_cast<std::size_t>(shells_));
  const double s2 = spec_.sigma * spec_.sigma;
  for (int n = 1; n <= shells_; ++n) {
    Eigen::MatrixXd corr = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < spec_.size(); ++i) {
      if (!is_active(spec_, i, n)) continue;
      const auto& in = spec_.interactions[static_cast<std::size_t>(i)];
      if (boundary_ == Boundary::Conservative && n + in.r > shells_) continue;
      const double k = coefficient(spec_, i, n);
      corr -= 0.5 * s2 * k * k * in.b.gram();
    }
    const double rate = -corr.trace() / d;
    const double off = (corr + rate * Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff();
    if (off > 1e-12 * std::max(1.0, std::abs(rate))) isotropic_ = false;
    corrections_.push_back(std::move(corr));
    rates_.push_back(rate);
    stiffest_ = std::max(stiffest_, total_rate(spec_, n));
  }
}

// ---- vector fields ----------------------------------------------------------

namespace {

void check_state(const TruncatedModel& model, const TruncatedState& state) {
  if (state.shells != model.shells() || state.dim != model.dim() ||
      state.x.size() != static_cast<std::size_t>(model.shells()) * model.dim())
    throw StructuralError("state shape does not match the truncated model");
}

void check_slab_covers(const TruncatedModel& model, const NoiseSlab& slab, int lanes) {
  if (slab.dim() != model.dim()) throw StructuralError("noise slab dimension mismatch");
  if (slab.lanes() < lanes)
    throw StructuralError("noise slab carries " + std::to_string(slab.lanes()) +
                          " lanes, scheme needs " + std::to_string(lanes));
  for (const auto& c : model.noise_coordinates())
    if (!slab.contains(c.m))
      throw StructuralError("noise slab window [" + std::to_string(slab.window_lo()) + ", " +
                            std::to_string(slab.window_hi()) + "] misses noise index " +
                            std::to_string(c.m));
}

void add_correction(const TruncatedModel& model, const TruncatedState& state, double scale,
                    std::vector<double>& out) {
  const int d = model.dim();
  for (int n = 1; n <= model.shells(); ++n) {
    const auto& corr = model.correction(n);
    const auto xn = state.shell(n);
    for (int a = 0; a < d; ++a) {
      double acc = 0.0;
      for (int b = 0; b < d; ++b) acc += corr(a, b) * xn[static_cast<std::size_t>(b)];
      out[static_cast<std::size_t>((n - 1) * d + a)] += scale * acc;
    }
  }
}

std::span<double> shell_of(std::vector<double>& v, int n, int d) {
  return {v.data() + static_cast<std::size_t>(n - 1) * d, static_cast<std::size_t>(d)};
}

}  // namespace

std::vector<double> bilinear_drift(const TruncatedModel& model, const TruncatedState& state) {
  check_state(model, state);
  const int d = model.dim();
  std::vector<double> out(state.x.size(), 0.0);
  for (const auto& t : model.terms()) {
    if (t.noise_index < 1 || t.noise_index > model.shells()) continue;
    model.spec().interactions[static_cast<std::size_t>(t.interaction)].b.apply_add(
        state.shell(t.partner), state.shell(t.noise_index), t.k, shell_of(out, t.shell, d));
  }
  return out;
}

std::vector<double> drift_linear(const TruncatedModel& model, const TruncatedState& state) {
  check_state(model, state);
  std::vector<double> out(state.x.size(), 0.0);
  add_correction(model, state, 1.0, out);
  return out;
}

std::vector<double> drift_nonlinear(const TruncatedModel& model, const TruncatedState& state) {
  auto out = bilinear_drift(model, state);
  add_correction(model, state, 1.0, out);
  return out;
}

std::vector<double> diffusion_apply(const TruncatedModel& model, const TruncatedState& state,
                                    const NoiseSlab& slab) {
  check_state(model, state);
  check_slab_covers(model, slab, 1);
  const int d = model.dim();
  std::vector<double> out(state.x.size(), 0.0);
  for (const auto& t : model.terms()) {
    std::span<const double> dw{slab.increment_by_slot(t.slot, t.noise_index),
                               static_cast<std::size_t>(d)};
    model.spec().interactions[static_cast<std::size_t>(t.interaction)].b.apply_add(
        state.shell(t.partner), dw, model.sigma() * t.k, shell_of(out, t.shell, d));
  }
  return out;
}

// ---- weights ----------------------------------------------------------------

double PathWeight::density() const { return std::exp(z - 0.5 * qv); }

void accumulate_weight(PathWeight& weight, const TruncatedModel& model,
                       const TruncatedState& state, const NoiseSlab& slab,
                       WeightDirection direction) {
  if (direction == WeightDirection::None) return;
  const int d = model.dim();
  const double inv_sigma = 1.0 / model.sigma();
  const double dt = slab.dt();
  double dz = 0.0, dqv = 0.0;
  for (const auto& c : model.noise_coordinates()) {
    if (c.m < 1 || c.m > model.shells()) continue;
    const auto xm = state.shell(c.m);
    const double* dw = slab.increment_by_slot(c.slot, c.m);
    for (int a = 0; a < d; ++a) {
      const double v = xm[static_cast<std::size_t>(a)] * inv_sigma;
      dz += v * dw[a];
      dqv += v * v * dt;
    }
  }
  weight.z += direction == WeightDirection::QtoP ? dz : -dz;
  weight.qv += dqv;
}

// ---- Integrator -------------------------------------------------------------

Integrator::Integrator(const TruncatedModel& model, double dt, System system, Scheme scheme)
    : model_(&model), dt_(dt), system_(system), scheme_(scheme) {
  if (!(dt > 0.0 && std::isfinite(dt))) throw StructuralError("time step must be finite and > 0");
  if (scheme == Scheme::Conservative && model.boundary() != Boundary::Conservative)
    throw ModelError(
        "the conservative projection scheme needs the conservative boundary; the absorbing "
        "truncation does not conserve energy");
  next_.resize(static_cast<std::size_t>(model.shells()) * model.dim());
  buffer_.resize(static_cast<std::size_t>(model.dim()));
  ga_.resize(static_cast<std::size_t>(model.dim()));
  gb_.resize(static_cast<std::size_t>(model.dim()));
  if (scheme == Scheme::Exponential) {
    if (!model.isotropic())
      throw ModelError("the exponential scheme needs Ito corrections proportional to the identity");
    for (int n = 1; n <= model.shells(); ++n) decay_.push_back(std::exp(-model.decay_rate(n) * dt));
    const auto e = [dt](double rate) { return dt * phi1(rate * dt); };
    const double sdt = std::sqrt(dt);
    for (const auto& c : model.noise_coordinates()) {
      const auto& ta = model.terms()[static_cast<std::size_t>(c.term_a)];
      const auto& tb = model.terms()[static_cast<std::size_t>(c.term_b)];
      const double al = model.decay_rate(ta.shell);
      const double be = model.decay_rate(tb.shell);
      CoordinateFactor f{};
      f.mean_a = e(al);
      f.mean_b = e(be);
      f.l10 = f.mean_a / sdt;
      f.l11 = std::sqrt(std::max(e(2 * al) - f.l10 * f.l10, 0.0));
      f.l20 = f.mean_b / sdt;
      f.l21 = f.l11 > 1e-300 * sdt ? (e(al + be) - f.l20 * f.l10) / f.l11 : 0.0;
      f.l22 = std::sqrt(std::max(e(2 * be) - f.l20 * f.l20 - f.l21 * f.l21, 0.0));
      factors_.push_back(f);
    }
  }
}

void Integrator::check_slab(const NoiseSlab& slab) const {
  check_slab_covers(*model_, slab, lanes_required());
  if (std::abs(slab.dt() - dt_) > 1e-12 * dt_)
    throw StructuralError("noise slab dt does not match the integrator");
}

void Integrator::apply_term(const TruncatedModel::Term& term, const TruncatedState& state,
                            const double* noise, double noise_scale, double drift_weight,
                            std::span<double> out) {
  const int d = model_->dim();
  const bool has_drift = system_ == System::Nonlinear && term.noise_index >= 1 &&
                         term.noise_index <= model_->shells();
  for (int a = 0; a < d; ++a) {
    double v = noise_scale * noise[a];
    if (has_drift) v += drift_weight * state.shell(term.noise_index)[static_cast<std::size_t>(a)];
    buffer_[static_cast<std::size_t>(a)] = v;
  }
  model_->spec().interactions[static_cast<std::size_t>(term.interaction)].b.apply_add(
      state.shell(term.partner), buffer_, term.k, out);
}

void Integrator::step_em(TruncatedState& state, const NoiseSlab& slab) {
  const int d = model_->dim();
  std::copy(state.x.begin(), state.x.end(), next_.begin());
  add_correction(*model_, state, dt_, next_);
  const double sigma = model_->sigma();
  for (const auto& t : model_->terms())
    apply_term(t, state, slab.increment_by_slot(t.slot, t.noise_index), sigma, dt_,
               shell_of(next_, t.shell, d));
}

void Integrator::step_exponential(TruncatedState& state, const NoiseSlab& slab) {
  const int d = model_->dim();
  for (int n = 1; n <= model_->shells(); ++n) {
    const double f = decay_[static_cast<std::size_t>(n - 1)];
    for (int a = 0; a < d; ++a) {
      const auto j = static_cast<std::size_t>((n - 1) * d + a);
      next_[j] = f * state.x[j];
    }
  }
  const double sigma = model_->sigma();
  auto& ga = ga_;
  auto& gb = gb_;
  const auto coords = model_->noise_coordinates();
  for (std::size_t ci = 0; ci < coords.size(); ++ci) {
    const auto& c = coords[ci];
    const auto& f = factors_[ci];
    const double* xi0 = slab.standard_by_slot(c.slot, c.m, 0);
    const double* xi1 = slab.standard_by_slot(c.slot, c.m, 1);
    const double* xi2 = slab.standard_by_slot(c.slot, c.m, 2);
    for (int a = 0; a < d; ++a) {
      ga[static_cast<std::size_t>(a)] = f.l10 * xi0[a] + f.l11 * xi1[a];
      gb[static_cast<std::size_t>(a)] = f.l20 * xi0[a] + f.l21 * xi1[a] + f.l22 * xi2[a];
    }
    const auto& ta = model_->terms()[static_cast<std::size_t>(c.term_a)];
    const auto& tb = model_->terms()[static_cast<std::size_t>(c.term_b)];
    apply_term(ta, state, ga.data(), sigma, f.mean_a, shell_of(next_, ta.shell, d));
    apply_term(tb, state, gb.data(), sigma, f.mean_b, shell_of(next_, tb.shell, d));
  }
}

void Integrator::advance(TruncatedState& state, const NoiseSlab& slab, PathWeight* weight,
                         WeightDirection direction) {
  check_state(*model_, state);
  check_slab(slab);
  if (weight) accumulate_weight(*weight, *model_, state, slab, direction);

  if (scheme_ == Scheme::Exponential) {
    step_exponential(state, slab);
  } else {
    step_em(state, slab);
  }
  double e_new = 0.0;
  for (double v : next_) e_new += v * v;
  if (!std::isfinite(e_new) || e_new > 1e300) {
    std::ostringstream os;
    os << "path became non-finite at t = " << state.t + dt_;
    throw PathFailure(os.str(), state.t + dt_);
  }
  if (scheme_ == Scheme::Conservative) {
    const double e_old = state.energy();
    if (e_new > 0.0) {
      const double scale = std::sqrt(e_old / e_new);
      for (double& v : next_) v *= scale;
    }
  }
  std::swap(state.x, next_);
  state.t += dt_;
}

TruncatedState step_em(const TruncatedModel& model, const TruncatedState& state,
                       const NoiseSlab& slab, System system) {
  Integrator it(model, slab.dt(), system, Scheme::EulerMaruyama);
  auto next = state;
  it.advance(next, slab);
  return next;
}

TruncatedState step_conservative(const TruncatedModel& model, const TruncatedState& state,
                                 const NoiseSlab& slab, System system) {
  Integrator it(model, slab.dt(), system, Scheme::Conservative);
  auto next = state;
  it.advance(next, slab);
  return next;
}

TruncatedState step_exponential(const TruncatedModel& model, const TruncatedState& state,
                                const NoiseSlab& slab, System system) {
  Integrator it(model, slab.dt(), system, Scheme::Exponential);
  auto next = state;
  it.advance(next, slab);
  return next;
}

}  // namespace shellsde
