#include "shellsde/model_spec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "shellsde/errors.hpp"

namespace shellsde {

BilinearMap::BilinearMap(int dim) : dim_(dim) {
  if (dim < 1) throw StructuralError("bilinear map dimension must be >= 1");
  entries_.assign(static_cast<std::size_t>(dim) * dim * dim, 0.0);
}

BilinearMap::BilinearMap(int dim, std::vector<double> entries)
    : dim_(dim), entries_(std::move(entries)) {
  if (dim < 1) throw StructuralError("bilinear map dimension must be >= 1");
  const auto expected = static_cast<std::size_t>(dim) * dim * dim;
  if (entries_.size() != expected) {
    std::ostringstream os;
    os << "bilinear map of dimension " << dim << " needs " << expected
       << " entries, got " << entries_.size();
    throw StructuralError(os.str());
  }
}

void BilinearMap::apply_add(std::span<const double> u,
                            std::span<const double> v, double scale,
                            std::span<double> out) const {
  const int d = dim_;
  const double* e = entries_.data();
  for (int a = 0; a < d; ++a) {
    double acc = 0.0;
    for (int b = 0; b < d; ++b) {
      const double ub = u[b];
      if (ub == 0.0) {
        e += d;
        continue;
      }
      double inner = 0.0;
      for (int c = 0; c < d; ++c) inner += e[c] * v[c];
      acc += ub * inner;
      e += d;
    }
    out[a] += scale * acc;
  }
}

std::vector<double> BilinearMap::apply(std::span<const double> u,
                                       std::span<const double> v) const {
  std::vector<double> out(dim_, 0.0);
  apply_add(u, v, 1.0, out);
  return out;
}

Eigen::MatrixXd BilinearMap::gram() const {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(dim_, dim_);
  for (int a = 0; a < dim_; ++a)
    for (int b = 0; b < dim_; ++b) {
      double s = 0.0;
      for (int c = 0; c < dim_; ++c)
        for (int e = 0; e < dim_; ++e) s += (*this)(a, c, e) * (*this)(b, c, e);
      l(a, b) = s;
    }
  return l;
}

bool BilinearMap::is_identity_gram(double tol) const {
  const Eigen::MatrixXd l = gram();
  return (l - Eigen::MatrixXd::Identity(dim_, dim_)).cwiseAbs().maxCoeff() <=
         tol;
}

int ModelSpec::noise_representative(int i) const {
  if (std::find(istar.begin(), istar.end(), i) != istar.end()) return i;
  return pairing.at(static_cast<std::size_t>(i));
}

int ModelSpec::istar_slot(int i) const {
  const int rep = noise_representative(i);
  const auto it = std::find(istar.begin(), istar.end(), rep);
  if (it == istar.end())
    throw StructuralError("interaction has no representative in I*");
  return static_cast<int>(it - istar.begin());
}

bool is_active(const ModelSpec& spec, int i, int n) {
  const auto& in = spec.interactions[static_cast<std::size_t>(i)];
  return n + in.r >= 1 && n + in.h >= 1;
}

double coefficient(const ModelSpec& spec, int i, int n) {
  if (!is_active(spec, i, n)) return 0.0;
  return std::pow(spec.lambda, n) * spec.interactions[static_cast<std::size_t>(i)].k;
}

int stabilization_index(const ModelSpec& spec) {
  int lowest = 0;
  for (const auto& in : spec.interactions) lowest = std::min({lowest, in.r, in.h});
  return 1 - lowest;
}

double total_rate(const ModelSpec& spec, int n) {
  double s = 0.0;
  for (int i = 0; i < spec.size(); ++i) {
    const double k = coefficient(spec, i, n);
    s += k * k;
  }
  return spec.sigma * spec.sigma * s;
}

Eigen::MatrixXd ito_correction(const ModelSpec& spec, int n) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(spec.dim, spec.dim);
  for (int i = 0; i < spec.size(); ++i) {
    const double k = coefficient(spec, i, n);
    if (k == 0.0) continue;
    m += k * k * spec.interactions[static_cast<std::size_t>(i)].b.gram();
  }
  return -0.5 * spec.sigma * spec.sigma * m;
}

bool has_identity_grams(const ModelSpec& spec, double tol) {
  return std::all_of(spec.interactions.begin(), spec.interactions.end(),
                     [tol](const Interaction& in) { return in.b.is_identity_gram(tol); });
}

// ---- validation -------------------------------------------------------------

bool ValidationReport::accepted() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const ValidationCheck& c) { return c.passed; });
}

const ValidationCheck* ValidationReport::find(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

std::vector<std::string> ValidationReport::failed_checks() const {
  std::vector<std::string> out;
  for (const auto& c : checks)
    if (!c.passed) out.push_back(c.name);
  return out;
}

namespace {

bool close_rel(double a, double b, double tol) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return std::abs(a - b) <= tol * scale;
}

void check_structure(const ModelSpec& spec) {
  if (spec.dim < 1) throw StructuralError("model dimension must be >= 1");
  const auto n = spec.interactions.size();
  for (const auto& in : spec.interactions)
    if (in.b.dim() != spec.dim)
      throw StructuralError("interaction '" + in.id +
                            "' has a bilinear map of the wrong dimension");
  if (spec.pairing.size() != n)
    throw StructuralError("pairing must list one partner per interaction");
  for (int p : spec.pairing)
    if (p < 0 || static_cast<std::size_t>(p) >= n)
      throw StructuralError("pairing refers to an unknown interaction");
  std::vector<int> seen;
  for (int s : spec.istar) {
    if (s < 0 || static_cast<std::size_t>(s) >= n)
      throw StructuralError("I* refers to an unknown interaction");
    if (std::find(seen.begin(), seen.end(), s) != seen.end())
      throw StructuralError("I* lists an interaction twice");
    seen.push_back(s);
  }
}

}  // namespace

ValidationReport validate_model(const ModelSpec& spec, double tol) {
  check_structure(spec);
  ValidationReport report;
  const int n = spec.size();
  auto label = [&](int i) { return spec.interactions[static_cast<std::size_t>(i)].id; };
  auto add = [&](std::string name, std::string req) -> ValidationCheck& {
    report.checks.push_back({std::move(name), std::move(req), true, {}, {}});
    return report.checks.back();
  };

  {
    auto& c = add("finite_range", "i. finite range");
    if (n == 0) {
      c.passed = false;
      c.detail = "interaction set is empty";
    }
    for (int i = 0; i < n; ++i) {
      const auto& in = spec.interactions[static_cast<std::size_t>(i)];
      const bool finite =
          std::isfinite(in.k) &&
          std::all_of(in.b.entries().begin(), in.b.entries().end(),
                      [](double v) { return std::isfinite(v); });
      if (!finite) {
        c.passed = false;
        c.offenders.push_back(label(i));
      }
    }
    if (!c.offenders.empty()) c.detail = "non-finite coefficient or bilinear entry";
  }
  {
    auto& c = add("no_self_interactions", "ii. no self interactions (r_i != 0)");
    for (int i = 0; i < n; ++i)
      if (spec.interactions[static_cast<std::size_t>(i)].r == 0) {
        c.passed = false;
        c.offenders.push_back(label(i));
      }
  }
  {
    auto& c = add("exponential_coefficients",
                  "iii. exponential coefficients (lambda > 1, sigma > 0)");
    if (!(std::isfinite(spec.lambda) && spec.lambda > 1.0)) {
      c.passed = false;
      c.detail = "lambda must be finite and > 1";
    }
    if (!(std::isfinite(spec.sigma) && spec.sigma > 0.0)) {
      c.passed = false;
      c.detail += c.detail.empty() ? "" : "; ";
      c.detail += "sigma must be finite and > 0";
    }
  }
  {
    auto& c = add("even_size", "iv. |I| is even");
    if (n % 2 != 0) {
      c.passed = false;
      c.detail = "interaction count is odd";
    }
  }
  {
    auto& c = add("pairing_involution", "iv. pairing is an involution without fixed points");
    for (int i = 0; i < n; ++i) {
      const int p = spec.pairing[static_cast<std::size_t>(i)];
      if (p == i || spec.pairing[static_cast<std::size_t>(p)] != i) {
        c.passed = false;
        c.offenders.push_back(label(i));
      }
    }
  }
  {
    auto& c = add("istar_partition", "iv. I is the disjoint union of I* and its image");
    std::vector<int> covered(static_cast<std::size_t>(n), 0);
    for (int s : spec.istar) {
      ++covered[static_cast<std::size_t>(s)];
      ++covered[static_cast<std::size_t>(spec.pairing[static_cast<std::size_t>(s)])];
    }
    for (int i = 0; i < n; ++i)
      if (covered[static_cast<std::size_t>(i)] != 1) {
        c.passed = false;
        c.offenders.push_back(label(i));
      }
  }
  {
    auto& c = add("coefficient_cancellation", "iv. k_pair = -k_i lambda^(-r_i)");
    for (int i = 0; i < n; ++i) {
      const auto& in = spec.interactions[static_cast<std::size_t>(i)];
      const auto& pa = spec.interactions[static_cast<std::size_t>(spec.pairing[static_cast<std::size_t>(i)])];
      if (!close_rel(pa.k, -in.k * std::pow(spec.lambda, -in.r), tol)) {
        c.passed = false;
        c.offenders.push_back(label(i));
      }
    }
  }
  {
    auto& c = add("bilinear_alias", "iv. <u,B_pair(v,w)> = <v,B_i(u,w)>");
    for (int i = 0; i < n; ++i) {
      const auto& bi = spec.interactions[static_cast<std::size_t>(i)].b;
      const auto& bp =
          spec.interactions[static_cast<std::size_t>(spec.pairing[static_cast<std::size_t>(i)])].b;
      double scale = 0.0;
      for (double v : bi.entries()) scale = std::max(scale, std::abs(v));
      for (double v : bp.entries()) scale = std::max(scale, std::abs(v));
      bool ok = true;
      // On basis vectors e_a, e_b, e_c the identity reads B_pair^{a,b,c} = B_i^{b,a,c}.
      for (int a = 0; a < spec.dim && ok; ++a)
        for (int b = 0; b < spec.dim && ok; ++b)
          for (int cc = 0; cc < spec.dim && ok; ++cc)
            ok = std::abs(bp(a, b, cc) - bi(b, a, cc)) <= tol * scale;
      if (!ok) {
        c.passed = false;
        c.offenders.push_back(label(i));
      }
    }
  }
  {
    auto& c = add("offset_reversal", "iv. r_pair = -r_i");
    for (int i = 0; i < n; ++i) {
      const auto& in = spec.interactions[static_cast<std::size_t>(i)];
      const auto& pa = spec.interactions[static_cast<std::size_t>(spec.pairing[static_cast<std::size_t>(i)])];
      if (pa.r != -in.r) {
        c.passed = false;
        c.offenders.push_back(label(i));
      }
    }
  }
  {
    auto& c = add("noise_offset_shift", "iv. h_pair = h_i - r_i");
    for (int i = 0; i < n; ++i) {
      const auto& in = spec.interactions[static_cast<std::size_t>(i)];
      const auto& pa = spec.interactions[static_cast<std::size_t>(spec.pairing[static_cast<std::size_t>(i)])];
      if (pa.h != in.h - in.r) {
        c.passed = false;
        c.offenders.push_back(label(i));
      }
    }
  }
  {
    auto& c = add("noise_reach", "max_i h_i >= 0");
    int hmax = std::numeric_limits<int>::min();
    for (const auto& in : spec.interactions) hmax = std::max(hmax, in.h);
    if (n > 0 && hmax < 0) {
      c.passed = false;
      c.detail = "all noise offsets are negative";
    }
  }
  return report;
}

void require_valid(const ModelSpec& spec) {
  const auto report = validate_model(spec);
  if (report.accepted()) return;
  std::string msg = "model rejected:";
  for (const auto& c : report.checks)
    if (!c.passed) msg += " [" + c.requirement + "]";
  throw ModelError(msg);
}

}  // namespace shellsde
