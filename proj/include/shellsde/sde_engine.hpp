#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shellsde/model_spec.hpp"
#include "shellsde/noise_field.hpp"

namespace shellsde {

enum class System { Nonlinear, Linear };

/// How the Galerkin truncation treats interactions whose partner shell lies
/// above N.
///  - Conservative: those interactions drop out of the Ito correction as
///    well, which is the Ito form of the truncated Stratonovich system; the
///    energy is conserved exactly.
///  - Absorbing: the full Ito correction is kept; energy leaks out through
///    the top shells at the rate of the q-matrix escape terms.
enum class Boundary { Conservative, Absorbing };

/// EulerMaruyama: plain explicit scheme on the Ito form.
/// Conservative: Euler-Maruyama followed by projection onto the energy
///   sphere of the pre-step state.
/// Exponential: diagonal Ito correction integrated exactly, stochastic and
///   bilinear terms through exponentially weighted increments. Stable for
///   any dt; needs isotropic corrections and three noise lanes.
enum class Scheme { EulerMaruyama, Conservative, Exponential };

std::string to_string(System s);
std::string to_string(Boundary b);
std::string to_string(Scheme s);

/// Shells X_1..X_N (each a d-vector, stored contiguously) at time t.
struct TruncatedState {
  int shells = 0;
  int dim = 1;
  double t = 0.0;
  std::vector<double> x;

  static TruncatedState zeros(int shells, int dim);
  static TruncatedState from_values(int shells, int dim, std::span<const double> values);

  std::span<const double> shell(int n) const {
    return {x.data() + static_cast<std::size_t>(n - 1) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<double> shell(int n) {
    return {x.data() + static_cast<std::size_t>(n - 1) * dim, static_cast<std::size_t>(dim)};
  }
  double shell_energy(int n) const;
  double energy() const;
};

/// A validated model together with its truncation at N shells: the list of
/// non-vanishing interaction terms, the noise coordinates they read, and
/// the per-shell Ito corrections. Immutable and shareable across threads.
class TruncatedModel {
 public:
  /// One non-vanishing term k_{i,n} B_i(X_partner, . ) of shell n.
  struct Term {
    int interaction;
    int shell;
    int partner;      // n + r_i, always inside 1..N
    int noise_index;  // m = n + h_i
    int slot;         // I* slot of the driving noise
    int coordinate;   // index into noise_coordinates()
    double k;         // k_{i,n}
  };
  /// An independent noise W_{slot,m}; each drives exactly two terms that
  /// cancel each other in the energy balance.
  struct NoiseCoordinate {
    int slot;
    int m;
    int term_a;
    int term_b;
  };

  TruncatedModel(ModelSpec spec, int shells, Boundary boundary);

  const ModelSpec& spec() const noexcept { return spec_; }
  int shells() const noexcept { return shells_; }
  int dim() const noexcept { return spec_.dim; }
  double sigma() const noexcept { return spec_.sigma; }
  Boundary boundary() const noexcept { return boundary_; }

  std::span<const Term> terms() const noexcept { return terms_; }
  std::span<const NoiseCoordinate> noise_coordinates() const noexcept { return coords_; }

  /// Ito correction matrix of shell n under this boundary treatment.
  const Eigen::MatrixXd& correction(int n) const {
    return corrections_[static_cast<std::size_t>(n - 1)];
  }
  /// True when every correction is a multiple of the identity.
  bool isotropic() const noexcept { return isotropic_; }
  /// a_n with correction(n) = -a_n Id (only meaningful when isotropic()).
  double decay_rate(int n) const { return rates_[static_cast<std::size_t>(n - 1)]; }
  /// max_n pi_n over the truncation; explicit schemes want dt * this <= 0.1.
  double stiffest_rate() const noexcept { return stiffest_; }

 private:
  ModelSpec spec_;
  int shells_;
  Boundary boundary_;
  std::vector<Term> terms_;
  std::vector<NoiseCoordinate> coords_;
  std::vector<Eigen::MatrixXd> corrections_;
  std::vector<double> rates_;
  bool isotropic_ = true;
  double stiffest_ = 0.0;
};

// ---- vector fields ----------------------------------------------------------

/// sum_i k_{i,n} B_i(X_{n+r_i}, X_{n+h_i}) + correction(n) X_n, shell by shell.
std::vector<double> drift_nonlinear(const TruncatedModel& model, const TruncatedState& state);
/// Only the bilinear transport part of drift_nonlinear.
std::vector<double> bilinear_drift(const TruncatedModel& model, const TruncatedState& state);
/// correction(n) X_n, shell by shell.
std::vector<double> drift_linear(const TruncatedModel& model, const TruncatedState& state);
/// sum_i sigma k_{i,n} B_i(X_{n+r_i}, dW_{i,n+h_i}). Throws StructuralError
/// when the slab does not cover the noise indices the model reads.
std::vector<double> diffusion_apply(const TruncatedModel& model, const TruncatedState& state,
                                    const NoiseSlab& slab);

// ---- Girsanov ledger --------------------------------------------------------

enum class WeightDirection {
  None,
  PtoQ,  ///< along a nonlinear path: dQ/dP = exp(z - qv/2), z = -int <X/sigma, dW>
  QtoP,  ///< along a linear path: dP/dQ = exp(z - qv/2), z = int <X/sigma, dY>
};

struct PathWeight {
  double z = 0.0;
  double qv = 0.0;
  double density() const;
};

/// Adds one left-point step to the weight, summing over the independent
/// noise coordinates (I* representatives) that drive the truncated system.
void accumulate_weight(PathWeight& weight, const TruncatedModel& model,
                       const TruncatedState& state, const NoiseSlab& slab,
                       WeightDirection direction);

// ---- steppers ---------------------------------------------------------------

/// Reusable integrator for one (model, dt, system, scheme) combination.
class Integrator {
 public:
  Integrator(const TruncatedModel& model, double dt, System system, Scheme scheme);

  /// Noise lanes the slab must carry for this scheme.
  int lanes_required() const noexcept { return scheme_ == Scheme::Exponential ? 3 : 1; }
  double dt() const noexcept { return dt_; }
  const TruncatedModel& model() const noexcept { return *model_; }

  /// Advances `state` by one step in place. When `weight` is non-null the
  /// Girsanov ledger is updated first, at the left point. Throws
  /// PathFailure if the new state is not finite.
  void advance(TruncatedState& state, const NoiseSlab& slab, PathWeight* weight = nullptr,
               WeightDirection direction = WeightDirection::None);

 private:
  struct CoordinateFactor {
    double l10, l11, l20, l21, l22;  // Cholesky rows for (G_a, G_b) given xi
    double mean_a, mean_b;           // int_0^dt e^{-a(dt-s)} ds for each term
  };

  void step_em(TruncatedState& state, const NoiseSlab& slab);
  void step_exponential(TruncatedState& state, const NoiseSlab& slab);
  void apply_term(const TruncatedModel::Term& term, const TruncatedState& state,
                  const double* noise, double noise_scale, double drift_weight,
                  std::span<double> out);
  void check_slab(const NoiseSlab& slab) const;

  const TruncatedModel* model_;
  double dt_;
  System system_;
  Scheme scheme_;
  std::vector<double> next_;
  std::vector<double> buffer_;
  std::vector<double> ga_, gb_;
  std::vector<double> decay_;  // e^{-a_n dt}
  std::vector<CoordinateFactor> factors_;
};

/// One Euler-Maruyama step, returning the new state.
TruncatedState step_em(const TruncatedModel& model, const TruncatedState& state,
                       const NoiseSlab& slab, System system);
/// Euler-Maruyama followed by rescaling to the pre-step energy. Requires the
/// conservative boundary; the zero state stays zero.
TruncatedState step_conservative(const TruncatedModel& model, const TruncatedState& state,
                                 const NoiseSlab& slab, System system);
/// One step of the exponential scheme; the slab needs three lanes.
TruncatedState step_exponential(const TruncatedModel& model, const TruncatedState& state,
                                const NoiseSlab& slab, System system);

/// phi(z) = (1 - e^{-z}) / z with phi(0) = 1.
double phi1(double z);

}  // namespace shellsde
