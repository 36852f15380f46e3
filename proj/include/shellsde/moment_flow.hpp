#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shellsde/model_spec.hpp"

namespace shellsde {

/// Truncated q-matrix on shells 1..N with absorbing escape above N.
struct QMatrix {
  int shells = 0;
  double sigma = 0.0;
  Eigen::MatrixXd pi;           // off-diagonal pi_{n,m}, diagonal -pi_n
  std::vector<double> rate;     // pi_n (full row rate, escape included)
  std::vector<double> escape;   // pi_n - sum_{m<=N, m!=n} pi_{n,m}
  std::vector<bool> interior;   // no interaction reaches past N from this row
  /// Largest |pi_{n,m} - pi_{m,n}| / max(pi_{n,m}, pi_{m,n}) among the entries
  /// computed independently row by row, before the pairing-based assembly.
  double raw_asymmetry = 0.0;

  double offdiag(int n, int m) const { return pi(n - 1, m - 1); }
  double total_rate(int n) const { return rate[static_cast<std::size_t>(n - 1)]; }
};

/// Refuses (ModelError) unless every L_i is the identity; sigma may be zero.
QMatrix build_qmatrix(const ModelSpec& spec, int shells);

/// Spectral: eigenpairs of the generator computed to high relative accuracy
/// (cancellation-free elimination followed by one-sided Jacobi). Expm: Pade
/// scaling and squaring; loses digits once pi_N dwarfs the slow rates.
/// Implicit: SDIRK2 time stepping. Auto picks Spectral.
enum class ForwardMode { Auto, Spectral, Expm, Implicit };
std::string to_string(ForwardMode m);

struct ForwardOptions {
  ForwardMode mode = ForwardMode::Auto;
  int expm_max_shells = 25;  ///< Expm refuses larger truncations
  double implicit_max_step = 1e-3;
};

struct ForwardSolution {
  ForwardMode mode = ForwardMode::Expm;
  std::vector<double> times;
  Eigen::MatrixXd u;          // rows: times, columns: shells
  std::vector<double> mass;   // sum_n u_n(t)
};

/// Solves u' = u Pi from u(0) = u0 (entrywise >= 0) at the given times.
ForwardSolution solve_forward(const QMatrix& q, std::span<const double> u0,
                              std::span<const double> times, const ForwardOptions& options = {});

/// {0} followed by `count` points geometrically spaced from t_min to t_max.
std::vector<double> geometric_grid(double t_min, double t_max, int count);

struct DecayConstants {
  int shells = 0;
  double sigma = 0.0;
  double x_norm_sq = 0.0;
  int interactions = 0;
  std::vector<double> visits;  // E[V_n | V_n > 0]
  std::vector<double> nu_n;
  double nu = 0.0;
  double Lambda = 0.0;
  double mu = 0.0;
  double C = 0.0;
  double rho = 0.0;
  double theta_max = 0.0;
  /// ||x|| below which rho < 1, i.e. 2 sigma^2 / sqrt(mu |I|).
  double rho_threshold = 0.0;
  /// Fitted slope of -log nu_n against n over the stable interior.
  double tail_exponent = 0.0;
  /// Relative change of nu when the truncation grows by five shells.
  double convergence_change = 0.0;
  bool converged = true;
  std::vector<std::string> warnings;
};

/// Relative change of nu (N -> N+5) above which a warning is raised.
inline constexpr double kVisitConvergenceTolerance = 1e-3;

/// Constants of the exponential energy bound, from the fundamental matrix of
/// the embedded chain killed above N.
DecayConstants decay_constants(const ModelSpec& spec, double x_norm_sq, int shells = 40);

/// Expected visits E[V_n | V_n > 0] = (I - P)^{-1}_{nn} of the embedded chain
/// restricted to 1..N.
std::vector<double> expected_visits(const QMatrix& q);

/// sqrt(2) (lambda - 1/lambda) sqrt(a^2 - c^2/lambda^2) sigma^2, or nullopt
/// when the radicand is not positive.
std::optional<double> smallness_threshold_goy_sabra(double a, double c, double lambda,
                                                    double sigma);

}  // namespace shellsde
