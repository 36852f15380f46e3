#include "shellsde/presets.hpp"

#include <cmath>
#include <sstream>

#include "shellsde/errors.hpp"

namespace shellsde {

namespace {

const double kInvSqrt2 = 1.0 / std::sqrt(2.0);

// Shared GOY/Sabra coefficient table; pairing (1 3)(2 4), I* = {1, 2}.
ModelSpec goy_like_table(double a, double c, double lambda, double sigma,
                         const BilinearMap& b1, const BilinearMap& b2,
                         const BilinearMap& b3, const BilinearMap& b4) {
  const double s2 = std::sqrt(2.0);
  ModelSpec spec;
  spec.dim = 2;
  spec.lambda = lambda;
  spec.sigma = sigma;
  spec.interactions = {
      {"1", 1, 2, s2 * a, b1},
      {"2", -1, -2, s2 * c / (lambda * lambda), b2},
      {"3", -1, 1, -s2 * a / lambda, b3},
      {"4", 1, -1, -s2 * c / lambda, b4},
  };
  spec.pairing = {2, 3, 0, 1};
  spec.istar = {0, 1};
  return spec;
}

void require_closure(double a, double b, double c) {
  const double scale = std::max({1.0, std::abs(a), std::abs(b), std::abs(c)});
  if (std::abs(a + b + c) > 1e-12 * scale) {
    std::ostringstream os;
    os << "coefficients must satisfy a + b + c = 0 (got " << a + b + c << ")";
    throw ModelError(os.str());
  }
}

void require_lambda(double lambda) {
  if (!(std::isfinite(lambda) && lambda > 1.0))
    throw ModelError("lambda must be finite and > 1");
}

// Builds a 2x2x2 map with zero entries where alpha+beta+gamma is odd and
// +1/sqrt(2) on the even positions except `negative` (1-based indices).
BilinearMap sabra_map(int na, int nb, int nc) {
  BilinearMap b(2);
  for (int a = 1; a <= 2; ++a)
    for (int bb = 1; bb <= 2; ++bb)
      for (int c = 1; c <= 2; ++c) {
        if ((a + bb + c) % 2 != 0) continue;
        const bool neg = a == na && bb == nb && c == nc;
        b.at(a - 1, bb - 1, c - 1) = neg ? -kInvSqrt2 : kInvSqrt2;
      }
  return b;
}

}  // namespace

BilinearMap goy_bilinear() {
  BilinearMap b(2);
  for (int a = 1; a <= 2; ++a)
    for (int bb = 1; bb <= 2; ++bb)
      for (int c = 1; c <= 2; ++c) {
        const int s = a + bb + c;
        if (s == 4) b.at(a - 1, bb - 1, c - 1) = kInvSqrt2;
        if (s == 6) b.at(a - 1, bb - 1, c - 1) = -kInvSqrt2;
      }
  return b;
}

BilinearMap sabra_bilinear_conj_first() { return sabra_map(1, 1, 2); }
BilinearMap sabra_bilinear_plain() { return sabra_map(2, 1, 1); }
BilinearMap sabra_bilinear_conj_second() { return sabra_map(1, 2, 1); }

ModelSpec build_goy(double a, double b, double c, double lambda,
                    double sigma_tilde) {
  require_closure(a, b, c);
  require_lambda(lambda);
  if (!(sigma_tilde > 0.0)) throw ModelError("sigma_tilde must be > 0");
  const double norm2 = a * a + c * c / (lambda * lambda);
  if (norm2 == 0.0)
    throw ModelError("a and c both vanish: noise normalization sqrt(a^2 + c^2/lambda^2) is zero");
  const auto bm = goy_bilinear();
  ModelSpec spec = goy_like_table(a, c, lambda, sigma_tilde / std::sqrt(norm2),
                                  bm, bm, bm, bm);
  spec.origin = {"goy", {{"a", a}, {"b", b}, {"c", c}, {"lambda", lambda},
                         {"sigma_tilde", sigma_tilde}}};
  return spec;
}

ModelSpec build_sabra(double a, double b, double c, double lambda,
                      double sigma1_tilde, double sigma2_tilde) {
  require_closure(a, b, c);
  require_lambda(lambda);
  if (a == 0.0 || c == 0.0) throw ModelError("Sabra noise needs a != 0 and c != 0");
  if (!(sigma1_tilde > 0.0 && sigma2_tilde > 0.0))
    throw ModelError("Sabra noise amplitudes must be > 0");
  const double lhs = sigma1_tilde * c;
  const double rhs = sigma2_tilde * lambda * a;
  if (std::abs(lhs - rhs) > 1e-12 * std::max(std::abs(lhs), std::abs(rhs))) {
    std::ostringstream os;
    os << "Sabra noise amplitudes must satisfy sigma1/sigma2 = lambda*a/c = "
       << lambda * a / c << " (got " << sigma1_tilde / sigma2_tilde << ")";
    throw ModelError(os.str());
  }
  const double sigma = sigma1_tilde / a;
  if (!(sigma > 0.0)) throw ModelError("Sabra requires a > 0 so that sigma = sigma1/a > 0");
  const auto b13 = sabra_bilinear_conj_first();
  ModelSpec spec = goy_like_table(a, c, lambda, sigma, b13,
                                  sabra_bilinear_plain(), b13,
                                  sabra_bilinear_conj_second());
  spec.origin = {"sabra", {{"a", a}, {"b", b}, {"c", c}, {"lambda", lambda},
                           {"sigma1_tilde", sigma1_tilde},
                           {"sigma2_tilde", sigma2_tilde}}};
  return spec;
}

ModelSpec build_novikov(double lambda, double sigma) {
  require_lambda(lambda);
  if (!(sigma > 0.0)) throw ModelError("sigma must be > 0");
  const BilinearMap product(1, {1.0});
  ModelSpec spec;
  spec.dim = 1;
  spec.lambda = lambda;
  spec.sigma = sigma;
  spec.interactions = {{"1", -1, -1, 1.0 / lambda, product},
                       {"2", 1, 0, -1.0, product}};
  spec.pairing = {1, 0};
  spec.istar = {0};
  spec.origin = {"novikov", {{"lambda", lambda}, {"sigma", sigma}}};
  return spec;
}

std::vector<double> embed_complex(std::span<const std::complex<double>> u) {
  std::vector<double> x;
  x.reserve(2 * u.size());
  for (const auto& z : u) {
    x.push_back(z.real());
    x.push_back(z.imag());
  }
  return x;
}

std::vector<std::complex<double>> lift_real(std::span<const double> x) {
  if (x.size() % 2 != 0)
    throw StructuralError("lift_real needs an even number of components");
  std::vector<std::complex<double>> u;
  u.reserve(x.size() / 2);
  for (std::size_t j = 0; j < x.size(); j += 2) u.emplace_back(x[j], x[j + 1]);
  return u;
}

}  // namespace shellsde
