#include "cbmat/special.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cbmat {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kTwoPi = 6.283185307179586;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(kTwoPi); }

double norm_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

double norm_quantile(double p) {
  if (p <= 0.0) {
    if (p == 0.0) return -kInf;
    throw std::domain_error("norm_quantile: p outside [0,1]");
  }
  if (p >= 1.0) {
    if (p == 1.0) return kInf;
    throw std::domain_error("norm_quantile: p outside [0,1]");
  }
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) *
                    r +
                4.5921953931549871457e4) *
                   r +
               1.3731693765509461125e4) *
                  r +
              1.9715909503065514427e3) *
                 r +
             1.3314166789178437745e2) *
                r +
            3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) *
                    r +
                2.1213794301586595867e4) *
                   r +
               5.3941960214247511077e3) *
                  r +
              6.8718700749205790830e2) *
                 r +
             4.2313330701600911252e1) *
                r +
            1.0);
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) *
                   r +
               1.27045825245236838258e0) *
                  r +
              3.64784832476320460504e0) *
                 r +
             5.76949722146069140550e0) *
                r +
            4.63033784615654529590e0) *
               r +
           1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) *
                   r +
               1.48103976427480074590e-1) *
                  r +
              6.89767334985100004550e-1) *
                 r +
             1.67638483018380384940e0) *
                r +
            2.05319162663775882187e0) *
               r +
           1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) *
                   r +
               2.65321895265761230930e-2) *
                  r +
              2.96560571828504891230e-1) *
                 r +
             1.78482653991729133580e0) *
                r +
            5.46378491116411436990e0) *
               r +
           6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) *
                   r +
               7.86869131145613259100e-4) *
                  r +
              1.48753612908506148525e-2) *
                 r +
             1.36929880922735805310e-1) *
                r +
            5.99832206555887937690e-1) *
               r +
           1.0);
  }
  return (q < 0.0) ? -val : val;
}

namespace {

// Lower incomplete gamma by series, valid for x < a + 1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 500; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper incomplete gamma by Lentz continued fraction, valid for x >= a + 1.
double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double gamma_p(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw std::domain_error("gamma_p: bad arguments");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_cf(a, x);
}

double gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw std::domain_error("gamma_q: bad arguments");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_cf(a, x);
}

double gamma_p_inv(double a, double p) {
  if (!(a > 0.0) || p < 0.0 || p > 1.0) throw std::domain_error("gamma_p_inv: bad arguments");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return kInf;
  // Wilson-Hilferty start, then safeguarded Newton.
  double x;
  {
    const double z = norm_quantile(p);
    const double t = 1.0 - 1.0 / (9.0 * a) + z / (3.0 * std::sqrt(a));
    x = a * t * t * t;
    if (!(x > 0.0)) x = std::max(1e-8, a * 1e-3);
  }
  double lo = 0.0, hi = kInf;
  const double lg = std::lgamma(a);
  for (int it = 0; it < 200; ++it) {
    const double f = gamma_p(a, x) - p;
    if (f > 0.0)
      hi = x;
    else
      lo = x;
    const double logpdf = -x + (a - 1.0) * std::log(x) - lg;
    double step = f / std::exp(logpdf);
    double xn = x - step;
    if (!(xn > lo && (hi == kInf || xn < hi)))
      xn = (hi == kInf) ? (x * 2.0 + lo) * 0.5 + lo * 0.5 : 0.5 * (lo + hi);
    if (hi == kInf && xn <= lo) xn = x * 2.0;
    if (std::abs(xn - x) < 1e-14 * (1.0 + std::abs(x))) return xn;
    x = xn;
  }
  return x;
}

namespace {

double beta_cf(double a, double b, double x) {
  const double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 500; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return h;
}

}  // namespace

double inc_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0) || x < 0.0 || x > 1.0)
    throw std::domain_error("inc_beta: bad arguments");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double lbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  const double front = std::exp(a * std::log(x) + b * std::log1p(-x) - lbeta);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double inc_beta_inv(double a, double b, double p) {
  if (p < 0.0 || p > 1.0) throw std::domain_error("inc_beta_inv: bad p");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  double lo = 0.0, hi = 1.0, x = 0.5;
  const double lbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  for (int it = 0; it < 300; ++it) {
    const double f = inc_beta(a, b, x) - p;
    if (f > 0.0)
      hi = x;
    else
      lo = x;
    const double logpdf = (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - lbeta;
    double xn = x - f / std::exp(logpdf);
    if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
    if (std::abs(xn - x) < 1e-15 * (1.0 + std::abs(x))) return xn;
    x = xn;
  }
  return x;
}

double student_t_pdf(double x, double nu) {
  // the normalizing constant is loop-invariant across a fitting pass
  thread_local double cached_nu = -1.0, cached_lc = 0.0;
  if (nu != cached_nu) {
    cached_lc =
        std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * M_PI);
    cached_nu = nu;
  }
  return std::exp(cached_lc - 0.5 * (nu + 1.0) * std::log1p(x * x / nu));
}

double student_t_cdf(double x, double nu) {
  if (x == 0.0) return 0.5;
  const double x2 = x * x;
  if (x2 < nu) {
    // central regime: form the small beta argument directly
    const double half_ib = 0.5 * inc_beta(0.5, 0.5 * nu, x2 / (nu + x2));
    return (x > 0.0) ? 0.5 + half_ib : 0.5 - half_ib;
  }
  const double ib = inc_beta(0.5 * nu, 0.5, nu / (nu + x2));
  return (x > 0.0) ? 1.0 - 0.5 * ib : 0.5 * ib;
}

double student_t_quantile(double p, double nu) {
  if (p <= 0.0 || p >= 1.0) {
    if (p == 0.0) return -kInf;
    if (p == 1.0) return kInf;
    throw std::domain_error("student_t_quantile: bad p");
  }
  if (p == 0.5) return 0.0;
  const double center = 2.0 * std::abs(p - 0.5);
  if (center < 0.5) {
    const double zc = inc_beta_inv(0.5, 0.5 * nu, center);
    const double t = std::sqrt(nu * zc / (1.0 - zc));
    return (p < 0.5) ? -t : t;
  }
  const double tail = (p < 0.5) ? 2.0 * p : 2.0 * (1.0 - p);
  const double xb = inc_beta_inv(0.5 * nu, 0.5, tail);
  const double t = std::sqrt(nu * (1.0 - xb) / xb);
  return (p < 0.5) ? -t : t;
}

double chi2_survival(double x, double df) {
  if (x <= 0.0) return 1.0;
  return gamma_q(0.5 * df, 0.5 * x);
}

namespace {

// 20-point Gauss-Legendre nodes/weights on (0, 1), computed once.
struct GaussLegendre20 {
  std::array<double, 20> x{};
  std::array<double, 20> w{};
  GaussLegendre20() {
    const int n = 20;
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
      x[i - 1] = 0.5 * (1.0 - z);
      x[n - i] = 0.5 * (1.0 + z);
      w[i - 1] = 1.0 / ((1.0 - z * z) * pp * pp);
      w[n - i] = w[i - 1];
    }
  }
};
const GaussLegendre20 kGl20;

// P(X > dh, Y > dk) for standard bivariate normal, Genz-style.
double bvn_upper(double dh, double dk, double r) {
  if (std::isinf(dh) || std::isinf(dk)) {
    if (dh == kInf || dk == kInf) return 0.0;
    if (dh == -kInf) return (dk == -kInf) ? 1.0 : norm_cdf(-dk);
    return norm_cdf(-dh);
  }
  const double h = dh, k = dk;
  double hk = h * k;
  double bvn = 0.0;
  if (std::abs(r) < 0.925) {
    if (std::abs(r) > 0.0) {
      const double hs = 0.5 * (h * h + k * k);
      const double asr = std::asin(r);
      for (int i = 0; i < 20; ++i) {
        // Map (0,1) nodes to (0, asr).
        const double sn = std::sin(asr * kGl20.x[i]);
        bvn += kGl20.w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
      bvn = bvn * asr / kTwoPi;
    }
    return bvn + norm_cdf(-h) * norm_cdf(-k);
  }
  double kk = k;
  if (r < 0.0) {
    kk = -kk;
    hk = -hk;
  }
  if (std::abs(r) < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (h - kk) * (h - kk);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 16.0;
    double asr = -(bs / as + hk) / 2.0;
    if (asr > -100.0)
      bvn = a * std::exp(asr) *
            (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
    if (-hk < 100.0) {
      const double b = std::sqrt(bs);
      const double sp = std::sqrt(kTwoPi) * norm_cdf(-b / a);
      bvn -= std::exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a /= 2.0;
    for (int i = 0; i < 20; ++i) {
      const double xi = 2.0 * a * kGl20.x[i];  // (0, a) doubled via full node set
      const double xs = xi * xi;
      const double rs = std::sqrt(1.0 - xs);
      asr = -(bs / xs + hk) / 2.0;
      if (asr > -100.0) {
        const double sp = 1.0 + c * xs * (1.0 + d * xs);
        const double ep = std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs;
        bvn += 2.0 * a * kGl20.w[i] * std::exp(asr) * (ep - sp);
      }
    }
    bvn = -bvn / kTwoPi;
  }
  if (r > 0.0) return bvn + norm_cdf(-std::max(h, kk));
  bvn = -bvn;
  return bvn + std::max(0.0, norm_cdf(-h) - norm_cdf(-kk));
}

}  // namespace

double bvn_cdf(double x, double y, double rho) {
  if (!(rho > -1.0 && rho < 1.0)) {
    if (rho == 1.0) return norm_cdf(std::min(x, y));
    if (rho == -1.0) return std::max(0.0, norm_cdf(x) + norm_cdf(y) - 1.0);
    throw std::domain_error("bvn_cdf: |rho| > 1");
  }
  const double p = bvn_upper(-x, -y, rho);
  return std::min(1.0, std::max(0.0, p));
}

double ncx2_survival(double x, double df, double delta) {
  if (x <= 0.0) return 1.0;
  if (delta <= 0.0) return chi2_survival(x, df);
  const double half = 0.5 * delta;
  const long kmid = static_cast<long>(half);
  // Sum Poisson-weighted central chi-square tails outward from the mode.
  double total = 0.0;
  double logw_mid = -half + kmid * std::log(half) - std::lgamma(kmid + 1.0);
  double logw = logw_mid;
  for (long k = kmid; k >= 0; --k) {
    const double term = std::exp(logw) * chi2_survival(x, df + 2.0 * k);
    total += term;
    if (term < 1e-17 && k < kmid) break;
    logw += std::log((k) / half);  // w_{k-1} = w_k * k/half
  }
  logw = logw_mid;
  for (long k = kmid + 1; k < kmid + 10000; ++k) {
    logw += std::log(half / k);
    const double term = std::exp(logw) * chi2_survival(x, df + 2.0 * k);
    total += term;
    if (term < 1e-17) break;
  }
  return std::min(1.0, std::max(0.0, total));
}

namespace {

// Merge-sort counting of discordant pairs.
long long merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                      std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = (lo + hi) / 2;
  long long cnt = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      cnt += static_cast<long long>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + lo, buf.begin() + hi, v.begin() + lo);
  return cnt;
}

long long tie_pairs(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  long long t = 0;
  std::size_t i = 0;
  while (i < v.size()) {
    std::size_t j = i;
    while (j < v.size() && v[j] == v[i]) ++j;
    const long long run = static_cast<long long>(j - i);
    t += run * (run - 1) / 2;
    i = j;
  }
  return t;
}

}  // namespace

double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) throw std::invalid_argument("kendall_tau: bad sizes");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];

  // Joint ties (same x and y).
  long long txy = 0;
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j < n && x[idx[j]] == x[idx[i]] && ys[j] == ys[i]) ++j;
      const long long run = static_cast<long long>(j - i);
      txy += run * (run - 1) / 2;
      i = j;
    }
  }
  const long long tx = tie_pairs(x);
  const long long ty = tie_pairs(y);

  std::vector<double> work = ys, buf(n);
  const long long swaps = merge_count(work, buf, 0, n);
  const long long n0 = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;
  // swaps counts discordant pairs plus y-ties within distinct-x groups; with
  // the secondary sort on y, pairs tied in y (x distinct) are never swapped,
  // so swaps = discordant count.
  const long long concordant_minus_discordant = n0 - tx - ty + txy - 2 * swaps;
  const double denom = std::sqrt(static_cast<double>(n0 - tx)) *
                       std::sqrt(static_cast<double>(n0 - ty));
  return static_cast<double>(concordant_minus_discordant) / denom;
}

BinomialCi clopper_pearson(long successes, long trials, double level) {
  if (trials <= 0 || successes < 0 || successes > trials)
    throw std::invalid_argument("clopper_pearson: bad counts");
  const double alpha = 1.0 - level;
  BinomialCi ci;
  const double k = static_cast<double>(successes);
  const double n = static_cast<double>(trials);
  ci.lower = (successes == 0) ? 0.0 : inc_beta_inv(k, n - k + 1.0, alpha / 2.0);
  ci.upper = (successes == trials) ? 1.0 : inc_beta_inv(k + 1.0, n - k, 1.0 - alpha / 2.0);
  return ci;
}

double ks_pvalue(double d, long n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::min(1.0, std::max(0.0, sum));
}

}  // namespace cbmat
