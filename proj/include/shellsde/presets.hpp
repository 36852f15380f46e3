#pragma once

#include <complex>
#include <span>
#include <vector>

#include "shellsde/model_spec.hpp"

namespace shellsde {

/// Stochastic GOY model in the general formalism (d = 2). Requires
/// a + b + c = 0, lambda > 1, sigma_tilde > 0 and (a, c) != (0, 0); the
/// general-model noise amplitude is sigma_tilde / sqrt(a^2 + c^2/lambda^2).
ModelSpec build_goy(double a, double b, double c, double lambda,
                    double sigma_tilde);

/// Stochastic Sabra model (d = 2). The two complex noise amplitudes must
/// satisfy sigma1_tilde / sigma2_tilde = lambda a / c.
ModelSpec build_sabra(double a, double b, double c, double lambda,
                      double sigma1_tilde, double sigma2_tilde);

/// Stochastic inviscid Novikov (dyadic) model, d = 1.
ModelSpec build_novikov(double lambda, double sigma);

/// Bilinear map representing (v, z) -> i conj(v) conj(z) / sqrt(2).
BilinearMap goy_bilinear();

/// Sabra maps: (v,z) -> i conj(v) z, -i v z, i v conj(z), each divided by sqrt(2).
BilinearMap sabra_bilinear_conj_first();
BilinearMap sabra_bilinear_plain();
BilinearMap sabra_bilinear_conj_second();

/// phi: C -> R^2, u -> (Re u, Im u), applied shell by shell.
std::vector<double> embed_complex(std::span<const std::complex<double>> u);
/// Inverse of embed_complex. Throws StructuralError on odd length.
std::vector<std::complex<double>> lift_real(std::span<const double> x);

}  // namespace shellsde
