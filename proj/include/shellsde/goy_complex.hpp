#pragma once

#include <complex>
#include <vector>

#include "shellsde/noise_field.hpp"
#include "shellsde/sde_engine.hpp"

namespace shellsde {

/// How the complex GOY equation handles the lowest shells.
///  - Literal: dw_n contains W_{2,n-1} for every n, so dw_1 reads W_{2,0},
///    and the Ito correction is sigma_tilde^2 (lambda_n^2 + lambda_{n-1}^2).
///  - Filtered: interactions with n + h_i <= 0 are dropped exactly as in the
///    general model, which removes W_{2,0} from dw_1 and the matching
///    c-terms from the corrections of shells 1 and 2.
/// The two coincide when c = 0.
enum class GoyLowBoundary { Literal, Filtered };

struct GoyParams {
  double a = 1.0;
  double b = -1.5;
  double c = 0.5;
  double lambda = 2.0;
  double sigma_tilde = 1.0;
};

/// Euler-Maruyama integrator of the complex GOY equation truncated at N
/// shells, driven by the same real noise slab as the general model built
/// with build_goy (through goy_noise_bridge).
class GoyComplexStepper {
 public:
  GoyComplexStepper(const GoyParams& params, int shells, Boundary top, GoyLowBoundary low);

  int shells() const noexcept { return shells_; }
  /// Rate kappa_n of the term -kappa_n u_n dt.
  double correction_rate(int n) const { return kappa_[static_cast<std::size_t>(n - 1)]; }

  /// dw_n as used by this stepper (W_{2,0} removed under Filtered).
  std::complex<double> increment(const NoiseSlab& slab, int n) const;

  /// One step; u holds u_1..u_N.
  std::vector<std::complex<double>> step(const std::vector<std::complex<double>>& u,
                                         const NoiseSlab& slab, System system) const;

 private:
  std::complex<double> at(const std::vector<std::complex<double>>& u, int n) const {
    return n >= 1 && n <= shells_ ? u[static_cast<std::size_t>(n - 1)] : 0.0;
  }
  double lam(int n) const;

  GoyParams p_;
  int shells_;
  GoyLowBoundary low_;
  std::vector<double> kappa_;
};

}  // namespace shellsde
