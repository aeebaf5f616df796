#include "cbmat/copula.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cbmat {

namespace {

constexpr double kIndepTheta = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_independent(const CopulaSpec& spec) {
  return spec.family != CopulaFamily::Gaussian ? std::abs(spec.theta) < kIndepTheta
                                               : spec.theta == 0.0;
}

struct FrankTerms {
  double A, a, b, G, eu, ev;  // A=e^{-t}-1, a=e^{-tu}-1, b=e^{-tv}-1, G=A+ab
};

FrankTerms frank_terms(double theta, double u, double v) {
  FrankTerms t;
  t.A = std::expm1(-theta);
  t.a = std::expm1(-theta * u);
  t.b = std::expm1(-theta * v);
  t.G = t.A + t.a * t.b;
  t.eu = std::exp(-theta * u);
  t.ev = std::exp(-theta * v);
  return t;
}

// log(u^{-t} + v^{-t} - 1) computed stably for small t.
double clayton_logT(double theta, double u, double v) {
  const double tm1 = std::expm1(-theta * std::log(u)) + std::expm1(-theta * std::log(v));
  return std::log1p(tm1);
}

double frank_debye1(double theta) {
  // D1(t) = (1/t) * integral_0^t s/(e^s - 1) ds, t > 0.
  const int kSegPoints = 24;
  static thread_local std::vector<double> nodes, weights;
  if (nodes.empty()) {
    nodes.resize(kSegPoints);
    weights.resize(kSegPoints);
    const int n = kSegPoints;
    for (int i = 1; i <= (n + 1) / 2; ++i) {
      double z = std::cos(M_PI * (i - 0.25) / (n + 0.5));
      double pp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p1 = 1.0, p2 = 0.0;
        for (int j = 1; j <= n; ++j) {
          const double p3 = p2;
          p2 = p1;
          p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
        }
        pp = n * (z * p1 - p2) / (z * z - 1.0);
        const double z1 = z;
        z = z1 - p1 / pp;
        if (std::abs(z - z1) < 1e-15) break;
      }
      nodes[i - 1] = 0.5 * (1.0 - z);
      nodes[n - i] = 0.5 * (1.0 + z);
      weights[i - 1] = 1.0 / ((1.0 - z * z) * pp * pp);
      weights[n - i] = weights[i - 1];
    }
  }
  const int nseg = std::max(1, static_cast<int>(std::ceil(theta / 4.0)));
  const double h = theta / nseg;
  double total = 0.0;
  for (int s = 0; s < nseg; ++s) {
    const double lo = s * h;
    for (int i = 0; i < kSegPoints; ++i) {
      const double t = lo + h * nodes[i];
      const double f = (t < 1e-8) ? 1.0 - t / 2.0 : t / std::expm1(t);
      total += h * weights[i] * f;
    }
  }
  return total / theta;
}

double frank_tau(double theta) {
  if (std::abs(theta) < 1e-8) return theta / 9.0;  // series limit
  const double at = std::abs(theta);
  const double tau = 1.0 + 4.0 * (frank_debye1(at) - 1.0) / at;
  return theta > 0.0 ? tau : -tau;
}

[[noreturn]] void bad_theta(const CopulaSpec& spec) {
  throw std::domain_error("copula: theta " + std::to_string(spec.theta) +
                          " outside the " + to_string(spec.family) + " parameter domain");
}

}  // namespace

std::string to_string(CopulaFamily family) {
  switch (family) {
    case CopulaFamily::Gaussian: return "gaussian";
    case CopulaFamily::Frank: return "frank";
    case CopulaFamily::Clayton: return "clayton";
  }
  return "?";
}

CopulaFamily copula_family_from_string(const std::string& name) {
  if (name == "gaussian" || name == "normal") return CopulaFamily::Gaussian;
  if (name == "frank") return CopulaFamily::Frank;
  if (name == "clayton") return CopulaFamily::Clayton;
  throw std::invalid_argument("unknown copula family: " + name);
}

void validate(const CopulaSpec& spec) {
  switch (spec.family) {
    case CopulaFamily::Gaussian:
      if (!(spec.theta > -1.0 && spec.theta < 1.0)) bad_theta(spec);
      return;
    case CopulaFamily::Frank:
      if (!std::isfinite(spec.theta)) bad_theta(spec);
      return;
    case CopulaFamily::Clayton:
      if (!(spec.theta > 0.0) || !std::isfinite(spec.theta)) bad_theta(spec);
      return;
  }
  bad_theta(spec);
}

double copula_cdf(const CopulaSpec& spec, double u, double v) {
  validate(spec);
  if (!(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0))
    throw std::domain_error("copula_cdf: u,v outside [0,1]");
  if (u == 0.0 || v == 0.0) return 0.0;
  if (u == 1.0) return v;
  if (v == 1.0) return u;
  if (is_independent(spec)) return u * v;
  switch (spec.family) {
    case CopulaFamily::Gaussian:
      return bvn_cdf(norm_quantile(u), norm_quantile(v), spec.theta);
    case CopulaFamily::Frank: {
      const auto t = frank_terms(spec.theta, u, v);
      return -std::log1p(t.a * t.b / t.A) / spec.theta;
    }
    case CopulaFamily::Clayton:
      return std::exp(-clayton_logT(spec.theta, u, v) / spec.theta);
  }
  return 0.0;
}

double copula_logdensity(const CopulaSpec& spec, double u, double v) {
  validate(spec);
  u = clamp_unit(u);
  v = clamp_unit(v);
  if (is_independent(spec)) return 0.0;
  switch (spec.family) {
    case CopulaFamily::Gaussian: {
      const double th = spec.theta;
      const double x = norm_quantile(u), y = norm_quantile(v);
      const double s2 = 1.0 - th * th;
      return -0.5 * std::log(s2) - (th * th * (x * x + y * y) - 2.0 * th * x * y) / (2.0 * s2);
    }
    case CopulaFamily::Frank: {
      const double th = spec.theta;
      const auto t = frank_terms(th, u, v);
      return std::log(-th * t.A) - th * (u + v) - 2.0 * std::log(std::abs(t.G));
    }
    case CopulaFamily::Clayton: {
      const double th = spec.theta;
      return std::log1p(th) - (th + 1.0) * (std::log(u) + std::log(v)) -
             (2.0 + 1.0 / th) * clayton_logT(th, u, v);
    }
  }
  return -kInf;
}

double copula_density(const CopulaSpec& spec, double u, double v) {
  return std::exp(copula_logdensity(spec, u, v));
}

double copula_dv(const CopulaSpec& spec, double u, double v) {
  validate(spec);
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  v = clamp_unit(v);
  if (is_independent(spec)) return u;
  switch (spec.family) {
    case CopulaFamily::Gaussian: {
      const double x = norm_quantile(u), y = norm_quantile(v);
      return norm_cdf((x - spec.theta * y) / std::sqrt(1.0 - spec.theta * spec.theta));
    }
    case CopulaFamily::Frank: {
      const auto t = frank_terms(spec.theta, u, v);
      return t.ev * t.a / t.G;
    }
    case CopulaFamily::Clayton: {
      const double th = spec.theta;
      const double logT = clayton_logT(th, u, v);
      return std::exp(-(th + 1.0) * std::log(v) - (1.0 + 1.0 / th) * logT);
    }
  }
  return 0.0;
}

double copula_dlogdensity_du(const CopulaSpec& spec, double u, double v) {
  validate(spec);
  u = clamp_unit(u);
  v = clamp_unit(v);
  if (is_independent(spec)) return 0.0;
  switch (spec.family) {
    case CopulaFamily::Gaussian: {
      const double th = spec.theta;
      const double x = norm_quantile(u), y = norm_quantile(v);
      return th * (y - th * x) / ((1.0 - th * th) * norm_pdf(x));
    }
    case CopulaFamily::Frank: {
      const double th = spec.theta;
      const auto t = frank_terms(th, u, v);
      return -th + 2.0 * th * t.eu * t.b / t.G;
    }
    case CopulaFamily::Clayton: {
      const double th = spec.theta;
      const double T = std::exp(clayton_logT(th, u, v));
      return -(th + 1.0) / u + (2.0 * th + 1.0) * std::pow(u, -th - 1.0) / T;
    }
  }
  return 0.0;
}

double copula_dlogdensity_dv(const CopulaSpec& spec, double u, double v) {
  return copula_dlogdensity_du(spec, v, u);  // all three families are exchangeable
}

double copula_dv_dv(const CopulaSpec& spec, double u, double v) {
  validate(spec);
  u = clamp_unit(u);
  v = clamp_unit(v);
  if (is_independent(spec)) return 0.0;
  switch (spec.family) {
    case CopulaFamily::Gaussian: {
      const double th = spec.theta;
      const double s = std::sqrt(1.0 - th * th);
      const double x = norm_quantile(u), y = norm_quantile(v);
      return -th / s * norm_pdf((x - th * y) / s) / norm_pdf(y);
    }
    case CopulaFamily::Frank: {
      const double th = spec.theta;
      const auto t = frank_terms(th, u, v);
      return -th * t.a * t.ev * (t.G - t.a * t.ev) / (t.G * t.G);
    }
    case CopulaFamily::Clayton: {
      const double th = spec.theta;
      const double logT = clayton_logT(th, u, v);
      const double um = std::expm1(-th * std::log(u));  // u^{-th} - 1
      return -(th + 1.0) * um *
             std::exp(-(th + 2.0) * std::log(v) - (2.0 + 1.0 / th) * logT);
    }
  }
  return 0.0;
}

double copula_dv_inverse(const CopulaSpec& spec, double w, double v) {
  validate(spec);
  w = clamp_unit(w);
  v = clamp_unit(v);
  if (is_independent(spec)) return w;
  double u = std::numeric_limits<double>::quiet_NaN();
  switch (spec.family) {
    case CopulaFamily::Gaussian: {
      const double th = spec.theta;
      u = norm_cdf(th * norm_quantile(v) + std::sqrt(1.0 - th * th) * norm_quantile(w));
      break;
    }
    case CopulaFamily::Frank: {
      const double th = spec.theta;
      const auto t = frank_terms(th, 0.5, v);  // only A, b, ev needed
      const double a = w * t.A / (t.ev - w * t.b);
      u = -std::log1p(a) / th;
      break;
    }
    case CopulaFamily::Clayton: {
      const double th = spec.theta;
      const double logv = std::log(v);
      const double A = -th / (th + 1.0) * (std::log(w) + (th + 1.0) * logv);
      const double arg = std::expm1(A) - std::expm1(-th * logv);
      u = std::exp(-std::log1p(arg) / th);
      break;
    }
  }
  if (!(u > 0.0 && u < 1.0)) {
    // Bisection fallback on the monotone conditional CDF.
    double lo = 1e-14, hi = 1.0 - 1e-14;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (copula_dv(spec, mid, v) < w)
        lo = mid;
      else
        hi = mid;
    }
    u = 0.5 * (lo + hi);
  }
  return u;
}

double theta_to_tau(CopulaFamily family, double theta) {
  switch (family) {
    case CopulaFamily::Gaussian:
      if (!(theta > -1.0 && theta < 1.0)) throw std::domain_error("theta_to_tau: gaussian");
      return 2.0 / M_PI * std::asin(theta);
    case CopulaFamily::Clayton:
      if (!(theta >= 0.0)) throw std::domain_error("theta_to_tau: clayton");
      return theta / (theta + 2.0);
    case CopulaFamily::Frank:
      return frank_tau(theta);
  }
  return 0.0;
}

double tau_to_theta(CopulaFamily family, double tau) {
  switch (family) {
    case CopulaFamily::Gaussian:
      if (!(tau > -1.0 && tau < 1.0)) throw std::domain_error("tau_to_theta: |tau| >= 1");
      return std::sin(M_PI * tau / 2.0);
    case CopulaFamily::Clayton:
      if (!(tau > 0.0 && tau < 1.0)) throw std::domain_error("tau_to_theta: clayton needs tau in (0,1)");
      return 2.0 * tau / (1.0 - tau);
    case CopulaFamily::Frank: {
      if (std::abs(tau) < 1e-10) return 0.0;
      const double at = std::abs(tau);
      double lo = 1e-10, hi = 100.0;
      if (frank_tau(hi) < at)
        throw std::domain_error("tau_to_theta: frank tau outside the bracket |theta| <= 100");
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (frank_tau(mid) < at)
          lo = mid;
        else
          hi = mid;
        if (hi - lo < 1e-10 * (1.0 + hi)) break;
      }
      const double theta = 0.5 * (lo + hi);
      return tau > 0.0 ? theta : -theta;
    }
  }
  return 0.0;
}

std::vector<std::pair<double, double>> sample_copula(const CopulaSpec& spec, std::size_t n,
                                                     Rng& rng) {
  validate(spec);
  if (n == 0) throw std::invalid_argument("sample_copula: n must be >= 1");
  std::vector<std::pair<double, double>> out;
  out.reserve(n);
  if (spec.family == CopulaFamily::Gaussian) {
    const double th = spec.theta;
    const double s = std::sqrt(1.0 - th * th);
    for (std::size_t i = 0; i < n; ++i) {
      const double z1 = rng.normal();
      const double z2 = th * z1 + s * rng.normal();
      out.emplace_back(norm_cdf(z1), norm_cdf(z2));
    }
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double v = rng.uniform();
    const double w = rng.uniform();
    out.emplace_back(copula_dv_inverse(spec, w, v), v);
  }
  return out;
}

}  // namespace cbmat
