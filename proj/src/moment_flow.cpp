#include "shellsde/moment_flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "shellsde/errors.hpp"

namespace shellsde {

namespace {

void require_identity_closure(const ModelSpec& spec) {
  ModelSpec probe = spec;
  if (probe.sigma == 0.0) probe.sigma = 1.0;
  require_valid(probe);
  if (!has_identity_grams(spec))
    throw ModelError(
        "the second-moment closure needs every L_i = B_i B_i^T to be the identity; "
        "this model has a non-identity L_i");
}

}  // namespace

QMatrix build_qmatrix(const ModelSpec& spec, int shells) {
  if (shells < 1) throw StructuralError("truncation level must be >= 1");
  if (!(spec.sigma >= 0.0)) throw ModelError("sigma must be >= 0");
  require_identity_closure(spec);

  const double s2 = spec.sigma * spec.sigma;
  QMatrix q;
  q.shells = shells;
  q.sigma = spec.sigma;
  q.pi = Eigen::MatrixXd::Zero(shells, shells);
  q.rate.assign(static_cast<std::size_t>(shells), 0.0);
  q.escape.assign(static_cast<std::size_t>(shells), 0.0);
  q.interior.assign(static_cast<std::size_t>(shells), true);

  // Row by row, straight from the definition.
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(shells, shells);
  for (int n = 1; n <= shells; ++n) {
    for (int i = 0; i < spec.size(); ++i) {
      if (!is_active(spec, i, n)) continue;
      const double k = coefficient(spec, i, n);
      const double w = s2 * k * k;
      const int m = n + spec.interactions[static_cast<std::size_t>(i)].r;
      q.rate[static_cast<std::size_t>(n - 1)] += w;
      if (m > shells) {
        q.escape[static_cast<std::size_t>(n - 1)] += w;
        q.interior[static_cast<std::size_t>(n - 1)] = false;
      } else {
        raw(n - 1, m - 1) += w;
      }
    }
  }
  for (int n = 0; n < shells; ++n)
    for (int m = n + 1; m < shells; ++m) {
      const double big = std::max(raw(n, m), raw(m, n));
      if (big > 0.0)
        q.raw_asymmetry = std::max(q.raw_asymmetry, std::abs(raw(n, m) - raw(m, n)) / big);
    }
  if (q.raw_asymmetry > 1e-12) {
    std::ostringstream os;
    os << "q-matrix is not symmetric (relative asymmetry " << q.raw_asymmetry << ")";
    throw NumericalError(os.str());
  }

  // Assembly through the pairing: the term of i at n and the term of its
  // partner at n + r_i carry the same k^2, so both entries get one product.
  for (int n = 1; n <= shells; ++n)
    for (int i = 0; i < spec.size(); ++i) {
      const int r = spec.interactions[static_cast<std::size_t>(i)].r;
      const int m = n + r;
      if (r < 0 || m > shells || !is_active(spec, i, n)) continue;
      const double k = coefficient(spec, i, n);
      q.pi(n - 1, m - 1) += s2 * k * k;
      q.pi(m - 1, n - 1) += s2 * k * k;
    }
  for (int n = 1; n <= shells; ++n) q.pi(n - 1, n - 1) = -q.rate[static_cast<std::size_t>(n - 1)];
  return q;
}

std::string to_string(ForwardMode m) {
  switch (m) {
    case ForwardMode::Auto: return "auto";
    case ForwardMode::Spectral: return "spectral";
    case ForwardMode::Expm: return "expm";
    case ForwardMode::Implicit: return "implicit";
  }
  return "?";
}

std::vector<double> geometric_grid(double t_min, double t_max, int count) {
  if (!(t_min > 0.0 && t_max >= t_min) || count < 1)
    throw StructuralError("geometric grid needs 0 < t_min <= t_max and count >= 1");
  std::vector<double> g{0.0};
  if (count == 1) {
    g.push_back(t_max);
    return g;
  }
  const double ratio = std::log(t_max / t_min) / (count - 1);
  for (int k = 0; k < count; ++k) g.push_back(k == count - 1 ? t_max : t_min * std::exp(ratio * k));
  return g;
}

namespace {

// Two-stage L-stable SDIRK with gamma = 1 - 1/sqrt(2).
class Sdirk2 {
 public:
  explicit Sdirk2(const Eigen::MatrixXd& a) : a_(a) {}

  void advance(Eigen::VectorXd& y, double h) {
    auto it = lu_.find(h);
    if (it == lu_.end()) {
      const Eigen::MatrixXd m =
          Eigen::MatrixXd::Identity(a_.rows(), a_.cols()) - kGamma * h * a_;
      it = lu_.emplace(h, Eigen::PartialPivLU<Eigen::MatrixXd>(m)).first;
    }
    const auto& lu = it->second;
    const Eigen::VectorXd k1 = lu.solve(a_ * y);
    const Eigen::VectorXd k2 = lu.solve(a_ * (y + h * (1.0 - kGamma) * k1));
    y += h * ((1.0 - kGamma) * k1 + kGamma * k2);
  }

 private:
  static constexpr double kGamma = 1.0 - 0.70710678118654752440;
  const Eigen::MatrixXd& a_;
  std::map<double, Eigen::PartialPivLU<Eigen::MatrixXd>> lu_;
};

}  // namespace

namespace {

// The negated generator M = -Pi is a symmetric diagonally dominant
// M-matrix, fixed by its off-diagonal entries and its row sums (the escape
// rates). Eliminating in that parametrization never subtracts, so the
// factors M = L D L^T are accurate entrywise even when pi_N / pi_1 ~ 1e12.
// One-sided Jacobi on G = L D^{1/2} then gives eigenpairs with relative
// accuracy: G is graded by rows and the rotations act from the right.
struct Spectrum {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  bool full_rank = true;
};

Spectrum generator_spectrum(const QMatrix& q) {
  const int n = q.shells;
  Eigen::MatrixXd off = q.pi;
  off.diagonal().setZero();
  std::vector<double> s = q.escape;
  std::vector<bool> done(static_cast<std::size_t>(n), false);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    // Pivot on the largest remaining diagonal.
    int p = -1;
    double dp = -1.0;
    for (int i = 0; i < n; ++i) {
      if (done[static_cast<std::size_t>(i)]) continue;
      double d = s[static_cast<std::size_t>(i)];
      for (int j = 0; j < n; ++j)
        if (j != i && !done[static_cast<std::size_t>(j)]) d += off(i, j);
      if (d > dp) {
        dp = d;
        p = i;
      }
    }
    done[static_cast<std::size_t>(p)] = true;
    if (dp <= 0.0) continue;  // decoupled, rate-free state
    const double root = std::sqrt(dp);
    g(p, k) = root;
    for (int i = 0; i < n; ++i) {
      if (done[static_cast<std::size_t>(i)] || off(i, p) == 0.0) continue;
      g(i, k) = -off(i, p) / root;
      s[static_cast<std::size_t>(i)] += off(i, p) * s[static_cast<std::size_t>(p)] / dp;
      for (int j = 0; j < n; ++j)
        if (j != i && !done[static_cast<std::size_t>(j)]) off(i, j) += off(i, p) * off(p, j) / dp;
    }
  }

  constexpr double tol = 4.0 * std::numeric_limits<double>::epsilon();
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (int a = 0; a < n - 1; ++a)
      for (int b = a + 1; b < n; ++b) {
        const double alpha = g.col(a).squaredNorm();
        const double beta = g.col(b).squaredNorm();
        const double gamma = g.col(a).dot(g.col(b));
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::hypot(1.0, t);
        const Eigen::VectorXd ga = g.col(a);
        g.col(a) = c * ga - c * t * g.col(b);
        g.col(b) = c * t * ga + c * g.col(b);
      }
    if (!rotated) break;
    if (sweep == 59) throw NumericalError("spectral forward solve did not converge");
  }

  Spectrum sp;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < n; ++k)
    if (g.col(k).squaredNorm() > 0.0) keep.push_back(k);
  sp.full_rank = static_cast<int>(keep.size()) == n;
  sp.values.resize(static_cast<Eigen::Index>(keep.size()));
  sp.vectors.resize(n, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const double norm = g.col(keep[j]).norm();
    sp.values(static_cast<Eigen::Index>(j)) = norm * norm;
    sp.vectors.col(static_cast<Eigen::Index>(j)) = g.col(keep[j]) / norm;
  }
  return sp;
}

}  // namespace

ForwardSolution solve_forward(const QMatrix& q, std::span<const double> u0,
                              std::span<const double> times, const ForwardOptions& options) {
  const int n = q.shells;
  if (u0.size() > static_cast<std::size_t>(n))
    throw StructuralError("initial moments exceed the truncation");
  Eigen::VectorXd y0 = Eigen::VectorXd::Zero(n);
  for (std::size_t j = 0; j < u0.size(); ++j) {
    if (!(u0[j] >= 0.0)) throw StructuralError("initial moments must be >= 0");
    y0(static_cast<Eigen::Index>(j)) = u0[j];
  }
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (!(times[j] >= 0.0)) throw StructuralError("times must be >= 0");
    if (j > 0 && times[j] < times[j - 1]) throw StructuralError("times must be nondecreasing");
  }

  ForwardSolution sol;
  sol.mode = options.mode;
  if (sol.mode == ForwardMode::Auto) sol.mode = ForwardMode::Spectral;
  if (sol.mode == ForwardMode::Expm && n > options.expm_max_shells)
    throw StructuralError("expm mode is limited to " + std::to_string(options.expm_max_shells) +
                          " shells; use spectral or implicit");
  sol.times.assign(times.begin(), times.end());
  sol.u = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(times.size()), n);
  sol.mass.assign(times.size(), 0.0);

  // Pi is symmetric, so the row-vector equation u' = u Pi reads y' = Pi y.
  const double scale = std::max(1.0, y0.sum());
  auto store = [&](std::size_t row, Eigen::VectorXd y) {
    for (Eigen::Index k = 0; k < n; ++k) {
      if (y(k) < 0.0) {
        if (y(k) < -1e-9 * scale) {
          std::ostringstream os;
          os << "forward solve produced a negative moment " << y(k) << " at t = " << times[row]
             << "; reduce the truncation level, shrink the implicit step or use expm mode";
          throw NumericalError(os.str());
        }
        y(k) = 0.0;
      }
      if (!std::isfinite(y(k))) throw NumericalError("forward solve produced non-finite values");
    }
    sol.u.row(static_cast<Eigen::Index>(row)) = y.transpose();
    sol.mass[row] = y.sum();
  };

  if (sol.mode == ForwardMode::Spectral) {
    const auto sp = generator_spectrum(q);
    const Eigen::VectorXd c = sp.vectors.transpose() * y0;
    for (std::size_t j = 0; j < times.size(); ++j) {
      Eigen::VectorXd y;
      if (times[j] == 0.0) {
        y = y0;
      } else if (sp.full_rank) {
        y = sp.vectors * (c.array() * (-sp.values.array() * times[j]).exp()).matrix();
      } else {
        // Directions outside the computed eigenvectors do not move.
        Eigen::VectorXd f(c.size());
        for (Eigen::Index k = 0; k < c.size(); ++k) f(k) = std::expm1(-sp.values(k) * times[j]);
        y = y0 + sp.vectors * (c.array() * f.array()).matrix();
      }
      store(j, y);
    }
  } else if (sol.mode == ForwardMode::Expm) {
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (times[j] == 0.0) {
        store(j, y0);
        continue;
      }
      const Eigen::MatrixXd e = (q.pi * times[j]).exp();
      store(j, e * y0);
    }
  } else {
    if (!(options.implicit_max_step > 0.0)) throw StructuralError("implicit step must be > 0");
    Sdirk2 stepper(q.pi);
    Eigen::VectorXd y = y0;
    double t = 0.0;
    for (std::size_t j = 0; j < times.size(); ++j) {
      const double span = times[j] - t;
      if (span > 0.0) {
        const int sub = static_cast<int>(std::ceil(span / options.implicit_max_step));
        const double h = span / sub;
        for (int s = 0; s < sub; ++s) stepper.advance(y, h);
        t = times[j];
      }
      store(j, y);
    }
  }
  return sol;
}

// ---- decay constants ----------------------------------------------------------

std::vector<double> expected_visits(const QMatrix& q) {
  const int n = q.shells;
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    const double r = q.rate[static_cast<std::size_t>(i)];
    if (!(r > 0.0)) throw ModelError("embedded chain needs pi_n > 0 on every shell");
    for (int j = 0; j < n; ++j)
      if (i != j) a(i, j) -= q.pi(i, j) / r;
  }
  // Column k of F = (I - P)^{-1} gives F_kk.
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  const Eigen::MatrixXd f = lu.inverse();
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    v[static_cast<std::size_t>(k)] = f(k, k);
    if (!(std::isfinite(f(k, k)) && f(k, k) >= 1.0 - 1e-9))
      throw NumericalError("fundamental matrix is ill-conditioned");
  }
  return v;
}

namespace {

double nu_sum(const ModelSpec& spec, int shells, std::vector<double>* visits,
              std::vector<double>* nu_n) {
  const auto q = build_qmatrix(spec, shells);
  auto v = expected_visits(q);
  std::vector<double> nus(v.size());
  double nu = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    nus[k] = v[k] / q.rate[k];
    nu += nus[k];
  }
  if (visits) *visits = std::move(v);
  if (nu_n) *nu_n = std::move(nus);
  return nu;
}

}  // namespace

DecayConstants decay_constants(const ModelSpec& spec, double x_norm_sq, int shells) {
  if (!(x_norm_sq >= 0.0)) throw StructuralError("initial energy must be >= 0");
  if (!(spec.sigma > 0.0)) throw ModelError("decay constants need sigma > 0");
  DecayConstants dc;
  dc.shells = shells;
  dc.sigma = spec.sigma;
  dc.x_norm_sq = x_norm_sq;
  dc.interactions = spec.size();
  dc.nu = nu_sum(spec, shells, &dc.visits, &dc.nu_n);

  dc.Lambda = 0.0;
  for (double v : dc.nu_n) dc.Lambda -= v * std::log(v);
  const double s2 = spec.sigma * spec.sigma;
  dc.mu = s2 * dc.nu;
  dc.C = x_norm_sq * dc.nu * std::exp(dc.Lambda / dc.nu);
  dc.rho = std::sqrt(dc.mu * dc.interactions) * std::sqrt(x_norm_sq) / (2.0 * s2);
  dc.theta_max = x_norm_sq > 0.0 ? s2 / (dc.mu * x_norm_sq) : INFINITY;
  dc.rho_threshold = 2.0 * s2 / std::sqrt(dc.mu * dc.interactions);

  const double nu_more = nu_sum(spec, shells + 5, nullptr, nullptr);
  dc.convergence_change = std::abs(nu_more - dc.nu) / nu_more;
  dc.converged = dc.convergence_change <= kVisitConvergenceTolerance;
  if (!dc.converged) {
    std::ostringstream os;
    os << "expected visits not converged: nu changes by " << dc.convergence_change
       << " (relative) from N=" << shells << " to N=" << shells + 5
       << "; increase the truncation level";
    dc.warnings.push_back(os.str());
  }

  // Least-squares slope of -log nu_n over the stabilized interior, away from
  // the killing boundary.
  const int lo = stabilization_index(spec) + 1;
  const int hi = shells - 6;
  if (hi - lo >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int cnt = 0;
    for (int n = lo; n <= hi; ++n) {
      const double y = -std::log(dc.nu_n[static_cast<std::size_t>(n - 1)]);
      sx += n;
      sy += y;
      sxx += static_cast<double>(n) * n;
      sxy += n * y;
      ++cnt;
    }
    dc.tail_exponent = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
  }
  return dc;
}

std::optional<double> smallness_threshold_goy_sabra(double a, double c, double lambda,
                                                    double sigma) {
  const double radicand = a * a - c * c / (lambda * lambda);
  if (!(radicand > 0.0)) return std::nullopt;
  return std::sqrt(2.0) * (lambda - 1.0 / lambda) * std::sqrt(radicand) * sigma * sigma;
}

}  // namespace shellsde
