#include "cbmat/qform.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cbmat/special.hpp"

namespace cbmat {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLn2Over8 = 0.08664339756999316;

// State for one inversion; a straight restructuring of Davies' AS 155
// routine with the setjmp control flow replaced by an exception.
struct DaviesState {
  const std::vector<double>& lb;
  const std::vector<double>& nc;
  const std::vector<int>& n;
  int r;
  double sigsq;
  double c;
  int lim;
  int count = 0;
  double intl = 0.0;
  double ersm = 0.0;
  double lmax = 0.0, lmin = 0.0, mean = 0.0;
  bool ndtsrt = true;
  bool fail = false;
  std::vector<int> th;

  struct Overrun {};

  void counter() {
    if (++count > lim) throw Overrun{};
  }

  static double exp1(double x) { return x < -50.0 ? 0.0 : std::exp(x); }
  static double square(double x) { return x * x; }
  static double cube(double x) { return x * x * x; }

  static double log1(double x, bool first) {
    if (std::abs(x) > 0.1) return first ? std::log(1.0 + x) : (std::log(1.0 + x) - x);
    double y = x / (2.0 + x);
    double term = 2.0 * cube(y);
    double k = 3.0;
    double s = (first ? 2.0 : -x) * y;
    y = square(y);
    for (double s1 = s + term / k; s1 != s; s1 = s + term / k) {
      k += 2.0;
      term *= y;
      s = s1;
    }
    return s;
  }

  void order() {
    th.resize(r);
    std::iota(th.begin(), th.end(), 0);
    std::sort(th.begin(), th.end(),
              [&](int a, int b) { return std::abs(lb[a]) > std::abs(lb[b]); });
    ndtsrt = false;
  }

  double errbd(double u, double* cx) {
    counter();
    double xconst = u * sigsq;
    double sum1 = u * xconst;
    u *= 2.0;
    for (int j = r - 1; j >= 0; --j) {
      const double lj = lb[j], ncj = nc[j];
      const int nj = n[j];
      const double x = u * lj;
      const double y = 1.0 - x;
      xconst += lj * (ncj / y + nj) / y;
      sum1 += ncj * square(x / y) + nj * (square(x) / y + log1(-x, false));
    }
    *cx = xconst;
    return exp1(-0.5 * sum1);
  }

  double ctff(double accx, double* upn) {
    double u2 = *upn, u1 = 0.0, c1 = mean, c2 = 0.0, xconst = 0.0;
    const double rb = 2.0 * ((u2 > 0.0) ? lmax : lmin);
    double u = u2 / (1.0 + u2 * rb);
    while (errbd(u, &c2) > accx) {
      u1 = u2;
      c1 = c2;
      u2 *= 2.0;
      u = u2 / (1.0 + u2 * rb);
    }
    for (u = (c1 - mean) / (c2 - mean); u < 0.9; u = (c1 - mean) / (c2 - mean)) {
      u = 0.5 * (u1 + u2);
      if (errbd(u / (1.0 + u * rb), &xconst) > accx) {
        u1 = u;
        c1 = xconst;
      } else {
        u2 = u;
        c2 = xconst;
      }
    }
    *upn = u2;
    return c2;
  }

  double truncation(double u, double tausq) {
    counter();
    double sum1 = 0.0, prod2 = 0.0, prod3 = 0.0;
    int s = 0;
    double sum2 = (sigsq + tausq) * square(u);
    double prod1 = 2.0 * sum2;
    u *= 2.0;
    for (int j = 0; j < r; ++j) {
      const double lj = lb[j], ncj = nc[j];
      const int nj = n[j];
      const double x = square(u * lj);
      sum1 += ncj * x / (1.0 + x);
      if (x > 1.0) {
        prod2 += nj * std::log(x);
        prod3 += nj * log1(x, true);
        s += nj;
      } else {
        prod1 += nj * log1(x, true);
      }
    }
    sum1 *= 0.5;
    prod2 += prod1;
    prod3 += prod1;
    const double x = exp1(-sum1 - 0.25 * prod2) / kPi;
    const double y = exp1(-sum1 - 0.25 * prod3) / kPi;
    double err1 = (s == 0) ? 1.0 : x * 2.0 / s;
    const double err2a = (prod3 > 1.0) ? 2.5 * y : 1.0;
    if (err2a < err1) err1 = err2a;
    const double xx = 0.5 * sum2;
    const double err2 = (xx <= y) ? 1.0 : y / xx;
    return std::min(err1, err2);
  }

  void findu(double* utx, double accx) {
    static const double divis[] = {2.0, 1.4, 1.2, 1.1};
    double ut = *utx;
    double u = ut / 4.0;
    if (truncation(u, 0.0) > accx) {
      for (u = ut; truncation(u, 0.0) > accx; u = ut) ut *= 4.0;
    } else {
      ut = u;
      for (u /= 4.0; truncation(u, 0.0) <= accx; u /= 4.0) ut = u;
    }
    for (double d : divis) {
      u = ut / d;
      if (truncation(u, 0.0) <= accx) ut = u;
    }
    *utx = ut;
  }

  void integrate(int nterm, double interv, double tausq, bool mainx) {
    const double inpi = interv / kPi;
    for (int k = nterm; k >= 0; --k) {
      const double u = (k + 0.5) * interv;
      double sum1 = -2.0 * u * c;
      double sum2 = std::abs(sum1);
      double sum3 = -0.5 * sigsq * square(u);
      for (int j = r - 1; j >= 0; --j) {
        const int nj = n[j];
        const double x = 2.0 * lb[j] * u;
        double y = square(x);
        sum3 -= 0.25 * nj * log1(y, true);
        y = nc[j] * x / (1.0 + y);
        const double z = nj * std::atan(x) + y;
        sum1 += z;
        sum2 += std::abs(z);
        sum3 -= 0.5 * x * y;
      }
      double x = inpi * exp1(sum3) / u;
      if (!mainx) x *= (1.0 - exp1(-0.5 * tausq * square(u)));
      intl += std::sin(0.5 * sum1) * x;
      ersm += 0.5 * sum2 * x;
    }
  }

  double cfe(double x) {
    counter();
    if (ndtsrt) order();
    double axl = std::abs(x);
    const double sxl = (x > 0.0) ? 1.0 : -1.0;
    double sum1 = 0.0;
    for (int j = r - 1; j >= 0; --j) {
      const int t = th[j];
      if (lb[t] * sxl > 0.0) {
        const double lj = std::abs(lb[t]);
        const double axl1 = axl - lj * (n[t] + nc[t]);
        const double axl2 = lj / kLn2Over8;
        if (axl1 > axl2) {
          axl = axl1;
        } else {
          if (axl > axl2) axl = axl2;
          sum1 = (axl - axl1) / lj;
          for (int k = j - 1; k >= 0; --k) sum1 += n[th[k]] + nc[th[k]];
          break;
        }
      }
    }
    if (sum1 > 100.0) {
      fail = true;
      return 1.0;
    }
    return std::pow(2.0, sum1 / 4.0) / (kPi * square(axl));
  }
};

}  // namespace

DaviesResult davies_cdf(const std::vector<double>& lambda, const std::vector<double>& nc,
                        const std::vector<int>& df, double sigma, double q, int lim,
                        double acc) {
  DaviesResult out;
  const int r = static_cast<int>(lambda.size());
  if (static_cast<int>(nc.size()) != r || static_cast<int>(df.size()) != r) {
    out.fault = 3;
    return out;
  }
  DaviesState st{lambda, nc, df, r, sigma * sigma, q, lim, 0, 0.0, 0.0, 0.0, 0.0,
                 0.0,    true, false, {}};
  try {
    double acc1 = acc;
    double sd = st.sigsq;
    for (int j = 0; j < r; ++j) {
      if (df[j] < 0 || nc[j] < 0.0) {
        out.fault = 3;
        return out;
      }
      sd += lambda[j] * lambda[j] * (2.0 * df[j] + 4.0 * nc[j]);
      st.mean += lambda[j] * (df[j] + nc[j]);
      if (st.lmax < lambda[j])
        st.lmax = lambda[j];
      else if (st.lmin > lambda[j])
        st.lmin = lambda[j];
    }
    if (sd == 0.0) {
      out.cdf = (q > 0.0) ? 1.0 : 0.0;
      return out;
    }
    if (st.lmin == 0.0 && st.lmax == 0.0 && sigma == 0.0) {
      out.fault = 3;
      return out;
    }
    sd = std::sqrt(sd);
    const double almx = std::max(st.lmax, -st.lmin);

    double utx = 16.0 / sd, up = 4.5 / sd, un = -up;
    st.findu(&utx, 0.5 * acc1);
    if (q != 0.0 && almx > 0.07 * sd) {
      const double tausq = 0.25 * acc1 / st.cfe(q);
      if (st.fail) {
        st.fail = false;
      } else if (st.truncation(utx, tausq) < 0.2 * acc1) {
        st.sigsq += tausq;
        st.findu(&utx, 0.25 * acc1);
      }
    }
    acc1 *= 0.5;

    double xlim = static_cast<double>(lim);
    double qfval;
    for (;;) {
      const double d1 = st.ctff(acc1, &up) - q;
      if (d1 < 0.0) {
        out.cdf = 1.0;
        return out;
      }
      const double d2 = q - st.ctff(acc1, &un);
      if (d2 < 0.0) {
        out.cdf = 0.0;
        return out;
      }
      const double intv = 2.0 * kPi / std::max(d1, d2);
      const double xnt = utx / intv;
      const double xntm = 3.0 / std::sqrt(acc1);
      if (xnt > xntm * 1.5) {
        if (xntm > xlim) {
          out.fault = 1;
          return out;
        }
        const int ntm = static_cast<int>(std::floor(xntm + 0.5));
        const double intv1 = utx / ntm;
        const double x = 2.0 * kPi / intv1;
        if (x <= std::abs(q)) {
          // main integration
          if (xnt > xlim) {
            out.fault = 1;
            return out;
          }
          const int nt = static_cast<int>(std::floor(xnt + 0.5));
          st.integrate(nt, intv, 0.0, true);
          qfval = 0.5 - st.intl;
          break;
        }
        const double tausq = 0.33 * acc1 / (1.1 * (st.cfe(q - x) + st.cfe(q + x)));
        if (st.fail) {
          if (xnt > xlim) {
            out.fault = 1;
            return out;
          }
          const int nt = static_cast<int>(std::floor(xnt + 0.5));
          st.integrate(nt, intv, 0.0, true);
          qfval = 0.5 - st.intl;
          break;
        }
        acc1 *= 0.67;
        st.integrate(ntm, intv1, tausq, false);
        xlim -= xntm;
        st.sigsq += tausq;
        st.findu(&utx, 0.25 * acc1);
        acc1 *= 0.75;
        continue;
      }
      if (xnt > xlim) {
        out.fault = 1;
        return out;
      }
      const int nt = static_cast<int>(std::floor(xnt + 0.5));
      st.integrate(nt, intv, 0.0, true);
      qfval = 0.5 - st.intl;
      break;
    }

    out.cdf = qfval;
    out.abs_error = st.ersm;
    // round-off significance check (radix 2..16)
    const double up2 = st.ersm;
    const double x = up2 + acc / 10.0;
    for (int rat : {1, 2, 4, 8}) {
      if (rat * x == rat * up2) out.fault = 2;
    }
    return out;
  } catch (const DaviesState::Overrun&) {
    out.fault = 4;
    return out;
  }
}

double moment_match_survival(const std::vector<double>& lambda, double q) {
  // Liu-Tang-Zhang style four-cumulant match to a noncentral chi-square.
  double c1 = 0.0, c2 = 0.0, c3 = 0.0, c4 = 0.0;
  for (double l : lambda) {
    c1 += l;
    c2 += l * l;
    c3 += l * l * l;
    c4 += l * l * l * l;
  }
  if (c2 <= 0.0) return q > c1 ? 0.0 : 1.0;
  const double s1 = c3 / std::pow(c2, 1.5);
  const double s2 = c4 / (c2 * c2);
  double df, delta;
  if (s1 * s1 > s2) {
    const double a = 1.0 / (s1 - std::sqrt(s1 * s1 - s2));
    delta = s1 * a * a * a - a * a;
    df = a * a - 2.0 * delta;
  } else {
    delta = 0.0;
    df = 1.0 / (s1 * s1);
  }
  const double mu_q = c1, sigma_q = std::sqrt(2.0 * c2);
  const double mu_x = df + delta, sigma_x = std::sqrt(2.0 * (df + 2.0 * delta));
  const double t = (q - mu_q) / sigma_q * sigma_x + mu_x;
  return ncx2_survival(t, df, delta);
}

QformPvalue qform_survival(const std::vector<double>& lambda, double q) {
  QformPvalue out;
  std::vector<double> lb;
  lb.reserve(lambda.size());
  double lmax = 0.0;
  for (double l : lambda) {
    if (l < -1e-10) throw std::domain_error("qform_survival: negative eigenvalue");
    lmax = std::max(lmax, l);
  }
  if (lmax <= 0.0) throw std::domain_error("qform_survival: all eigenvalues are zero");
  for (double l : lambda)
    if (l > 1e-14 * lmax) lb.push_back(l);
  if (q < 0.0) throw std::domain_error("qform_survival: negative statistic");
  if (q == 0.0) return out;  // P(Q > 0) = 1

  const std::vector<double> nc(lb.size(), 0.0);
  const std::vector<int> df(lb.size(), 1);
  const DaviesResult dav = davies_cdf(lb, nc, df, 0.0, q);
  if ((dav.fault == 0 || dav.fault == 2) && dav.cdf >= -1e-9 && dav.cdf <= 1.0 + 1e-9) {
    out.p = std::min(1.0, std::max(0.0, 1.0 - dav.cdf));
    // Guard against inversion noise at extreme tails.
    if (out.p > 1e-13 || dav.abs_error < 1e-10) return out;
  }
  out.davies_ok = false;
  out.p = moment_match_survival(lb, q);
  return out;
}

}  // namespace cbmat
