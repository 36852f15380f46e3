#include "shellsde/goy_complex.hpp"

#include <cmath>

#include "shellsde/errors.hpp"

namespace shellsde {

GoyComplexStepper::GoyComplexStepper(const GoyParams& params, int shells, Boundary top,
                                     GoyLowBoundary low)
    : p_(params), shells_(shells), low_(low) {
  if (shells < 1) throw StructuralError("truncation level must be >= 1");
  const double lc2 = p_.c * p_.c / (p_.lambda * p_.lambda);
  const double s2 = p_.a * p_.a + lc2;
  if (s2 == 0.0) throw ModelError("a and c both vanish");
  const double sigma2 = p_.sigma_tilde * p_.sigma_tilde / s2;
  const bool filtered = low_ == GoyLowBoundary::Filtered;
  for (int n = 1; n <= shells_; ++n) {
    const double l2n = std::pow(p_.lambda, 2 * n);
    // Upward channel (partner n+1): a^2 and c^2/lambda^2 parts of lambda_n^2 s^2.
    double up = p_.a * p_.a + ((filtered && n < 2) ? 0.0 : lc2);
    if (top == Boundary::Conservative && n + 1 > shells_) up = 0.0;
    // Downward channel (partner n-1): lambda_{n-1}^2 s^2.
    double down = 0.0;
    if (n >= 2) down = (p_.a * p_.a + ((filtered && n < 3) ? 0.0 : lc2)) / (p_.lambda * p_.lambda);
    kappa_.push_back(sigma2 * l2n * (up + down));
  }
}

double GoyComplexStepper::lam(int n) const { return n >= 1 ? std::pow(p_.lambda, n) : 0.0; }

std::complex<double> GoyComplexStepper::increment(const NoiseSlab& slab, int n) const {
  const GoyNoiseParams gp{p_.a, p_.c, p_.lambda};
  if (low_ == GoyLowBoundary::Filtered && n - 1 < 1) {
    // Only the W_{1,n+2} part survives.
    const auto w1 = slab.lookup(0, n + 2);
    const double lc = p_.c / p_.lambda;
    const double s = std::sqrt(p_.a * p_.a + lc * lc);
    return {p_.a * w1[0] / s, -p_.a * w1[1] / s};
  }
  return goy_noise_bridge(slab, gp, n);
}

std::vector<std::complex<double>> GoyComplexStepper::step(
    const std::vector<std::complex<double>>& u, const NoiseSlab& slab, System system) const {
  if (u.size() != static_cast<std::size_t>(shells_))
    throw StructuralError("complex state length does not match the truncation");
  const std::complex<double> I(0.0, 1.0);
  const double dt = slab.dt();
  const double st = p_.sigma_tilde;
  std::vector<std::complex<double>> dw(static_cast<std::size_t>(shells_) + 1);
  for (int n = 1; n <= shells_; ++n) dw[static_cast<std::size_t>(n)] = increment(slab, n);

  std::vector<std::complex<double>> out(u.size());
  for (int n = 1; n <= shells_; ++n) {
    std::complex<double> du = -correction_rate(n) * at(u, n) * dt;
    if (system == System::Nonlinear) {
      du += I * p_.a * lam(n) * std::conj(at(u, n + 1)) * std::conj(at(u, n + 2)) * dt;
      du += I * p_.b * lam(n - 1) * std::conj(at(u, n - 1)) * std::conj(at(u, n + 1)) * dt;
      du += I * p_.c * lam(n - 2) * std::conj(at(u, n - 1)) * std::conj(at(u, n - 2)) * dt;
    }
    du += I * st * lam(n) * std::conj(at(u, n + 1)) * dw[static_cast<std::size_t>(n)];
    if (n >= 2)
      du -= I * st * lam(n - 1) * std::conj(at(u, n - 1)) * dw[static_cast<std::size_t>(n - 1)];
    out[static_cast<std::size_t>(n - 1)] = at(u, n) + du;
  }
  return out;
}

}  // namespace shellsde
