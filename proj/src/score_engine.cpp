#include "cbmat/score_engine.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cbmat/mvn.hpp"
#include "cbmat/rng.hpp"
#include "cbmat/special.hpp"

namespace cbmat {

namespace {

constexpr double kFdStep = 6.0554544523933429e-06;

[[noreturn]] void stage_error(const std::string& stage, const std::string& what) {
  if (what.rfind("cbmat[", 0) == 0) throw std::runtime_error(what);  // already labeled
  throw std::runtime_error("cbmat[" + stage + "]: " + what);
}

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const double lmax = std::max(es.eigenvalues().maxCoeff(), 0.0);
  const double clip = 1e-10 * lmax;
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = ev[i] > clip ? std::sqrt(ev[i]) : 0.0;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Adds a ridge when the smallest eigenvalue falls below 1e-10 * largest.
Eigen::MatrixXd ensure_spd(const Eigen::MatrixXd& m, bool* ridged) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  const double floor = 1e-10 * std::max(lmax, 1e-300);
  if (lmin >= floor) return m;
  if (ridged) *ridged = true;
  return m + (floor - lmin) * Eigen::MatrixXd::Identity(m.rows(), m.cols());
}

Eigen::MatrixXd sigma_rho_kron(double rho, const Eigen::VectorXd& w) {
  const Eigen::Index r = w.size();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 * r, 2 * r);
  out.topLeftCorner(r, r).diagonal() = w;
  out.bottomRightCorner(r, r).diagonal() = w;
  out.topRightCorner(r, r).diagonal() = rho * w;
  out.bottomLeftCorner(r, r).diagonal() = rho * w;
  return out;
}

struct ScorePair {
  Eigen::VectorXd s1, s2;
};

ScorePair subject_scores(const NullFit& fit, const Eigen::VectorXd& y1,
                         const Eigen::VectorXd& y2, const Eigen::MatrixXd& X) {
  const Eigen::Index n = y1.size();
  const Eigen::VectorXd lp1 = X * fit.margin1.gamma;
  const Eigen::VectorXd lp2 = X * fit.margin2.gamma;
  ScorePair out{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const LpScore s = joint_score_lp(fit.copula, fit.margin1, fit.margin2, fit.mixed, y1[i],
                                     y2[i], lp1[i], lp2[i]);
    if (!std::isfinite(s.d1) || !std::isfinite(s.d2))
      stage_error("score", "non-finite score component at subject " + std::to_string(i));
    out.s1[i] = s.d1;
    out.s2[i] = s.d2;
  }
  return out;
}

}  // namespace

const std::vector<double>& KernelConfig::default_rho_grid() {
  static const std::vector<double> grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5,
                                        0.6, 0.7, 0.8, 0.9, 1.0};
  return grid;
}

KernelConfig KernelConfig::uniform(Eigen::Index r, std::vector<double> grid) {
  KernelConfig k;
  k.weights = Eigen::VectorXd::Ones(r);
  k.rho_grid = std::move(grid);
  k.scheme = WeightScheme::Uniform;
  k.check(r);
  return k;
}

KernelConfig KernelConfig::beta_maf(const Eigen::VectorXd& maf, std::vector<double> grid) {
  KernelConfig k;
  k.weights.resize(maf.size());
  for (Eigen::Index j = 0; j < maf.size(); ++j) {
    if (!(maf[j] > 0.0 && maf[j] < 1.0))
      throw std::invalid_argument("beta_maf weights need MAF in (0,1)");
    k.weights[j] = 25.0 * std::pow(1.0 - maf[j], 24.0);
  }
  k.rho_grid = std::move(grid);
  k.scheme = WeightScheme::BetaMaf;
  k.check(maf.size());
  return k;
}

void KernelConfig::check(Eigen::Index r) const {
  if (weights.size() != r) throw std::invalid_argument("kernel: weight length != r");
  if ((weights.array() <= 0.0).any()) throw std::invalid_argument("kernel: weights must be > 0");
  if (rho_grid.empty()) throw std::invalid_argument("kernel: empty rho grid");
  for (std::size_t j = 0; j < rho_grid.size(); ++j) {
    if (rho_grid[j] < 0.0 || rho_grid[j] > 1.0)
      throw std::invalid_argument("kernel: rho outside [0,1]");
    if (j > 0 && rho_grid[j] <= rho_grid[j - 1])
      throw std::invalid_argument("kernel: rho grid must be strictly increasing");
  }
}

Eigen::VectorXd compute_L(const NullFit& fit, const Eigen::VectorXd& y1,
                          const Eigen::VectorXd& y2, const Eigen::MatrixXd& X) {
  const ScorePair s = subject_scores(fit, y1, y2, X);
  Eigen::VectorXd L(2 * y1.size());
  L.head(y1.size()) = s.s1;
  L.tail(y1.size()) = s.s2;
  return L;
}

ScoreDiagonals compute_D(const NullFit& fit, const Eigen::VectorXd& y1,
                         const Eigen::VectorXd& y2, const Eigen::MatrixXd& X) {
  const Eigen::Index n = y1.size();
  const Eigen::VectorXd lp1 = X * fit.margin1.gamma;
  const Eigen::VectorXd lp2 = X * fit.margin2.gamma;
  ScoreDiagonals d;
  d.a11.resize(n);
  d.a12.resize(n);
  d.a21.resize(n);
  d.a22.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h1 = kFdStep * (1.0 + std::abs(lp1[i]));
    const double h2 = kFdStep * (1.0 + std::abs(lp2[i]));
    const auto at = [&](double a, double b) {
      return joint_score_lp(fit.copula, fit.margin1, fit.margin2, fit.mixed, y1[i], y2[i], a,
                            b);
    };
    const LpScore p1 = at(lp1[i] + h1, lp2[i]);
    const LpScore m1 = at(lp1[i] - h1, lp2[i]);
    const LpScore p2 = at(lp1[i], lp2[i] + h2);
    const LpScore m2 = at(lp1[i], lp2[i] - h2);
    d.a11[i] = (p1.d1 - m1.d1) / (2.0 * h1);
    d.a21[i] = (p1.d2 - m1.d2) / (2.0 * h1);
    d.a12[i] = (p2.d1 - m2.d1) / (2.0 * h2);
    d.a22[i] = (p2.d2 - m2.d2) / (2.0 * h2);
  }
  return d;
}

Eigen::VectorXd beta_score(const NullFit& fit, const Eigen::VectorXd& y1,
                           const Eigen::VectorXd& y2, const Eigen::MatrixXd& X,
                           const Eigen::MatrixXd& G) {
  const ScorePair s = subject_scores(fit, y1, y2, X);
  Eigen::VectorXd out(2 * G.cols());
  out.head(G.cols()) = G.transpose() * s.s1;
  out.tail(G.cols()) = G.transpose() * s.s2;
  return out;
}

Eigen::MatrixXd score_information(const ScoreDiagonals& d, const Eigen::MatrixXd& G) {
  const Eigen::Index r = G.cols();
  // Off-diagonal blocks share the symmetrized mixed partial.
  const Eigen::VectorXd off = 0.5 * (d.a12 + d.a21);
  Eigen::MatrixXd B(2 * r, 2 * r);
  B.topLeftCorner(r, r) = -G.transpose() * d.a11.asDiagonal() * G;
  B.bottomRightCorner(r, r) = -G.transpose() * d.a22.asDiagonal() * G;
  B.topRightCorner(r, r) = -G.transpose() * off.asDiagonal() * G;
  B.bottomLeftCorner(r, r) = B.topRightCorner(r, r).transpose();
  return 0.5 * (B + B.transpose()).eval();
}

CorrectedB corrected_B(const NullFit& fit, const ScoreDiagonals& d,
                       const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                       const Eigen::MatrixXd& X, const Eigen::MatrixXd& G) {
  CorrectedB out;
  out.B = score_information(d, G);
  const Eigen::Index two_r = out.B.rows();

  if (fit.xi_info.size() == 0)
    stage_error("correction", "null fit lacks the xi information block");
  const Eigen::VectorXd xi = fit.xi;
  const Eigen::Index q = xi.size();

  // I_{beta,xi} by central differences of the region score in xi.
  Eigen::MatrixXd i_bx(two_r, q);
  Eigen::VectorXd xp = xi;
  const Eigen::Index p1 = fit.margin1.gamma.size();
  const Eigen::Index p2 = fit.margin2.gamma.size();
  for (Eigen::Index j = 0; j < q; ++j) {
    double h = kFdStep * (1.0 + std::abs(xi[j]));
    const bool positive = (j == 0 && fit.copula.family == CopulaFamily::Clayton) ||
                          j >= 1 + p1 + p2;
    if (positive) h = std::min(h, 0.49 * std::abs(xi[j]) + 1e-12);
    if (j == 0 && fit.copula.family == CopulaFamily::Gaussian)
      h = std::min(h, 0.49 * (1.0 - std::abs(xi[j])) + 1e-12);
    xp[j] = xi[j] + h;
    const Eigen::VectorXd sp = beta_score(with_xi(fit, xp), y1, y2, X, G);
    xp[j] = xi[j] - h;
    const Eigen::VectorXd sm = beta_score(with_xi(fit, xp), y1, y2, X, G);
    xp[j] = xi[j];
    i_bx.col(j) = -(sp - sm) / (2.0 * h);
  }

  const Eigen::MatrixXd B_spd = ensure_spd(out.B, &out.ridged);
  const Eigen::LDLT<Eigen::MatrixXd> bldlt(B_spd);
  const Eigen::MatrixXd c = bldlt.solve(i_bx);  // B^{-1} I_bx, 2r x q

  Eigen::MatrixXd z = fit.xi_info - i_bx.transpose() * c;
  z = 0.5 * (z + z.transpose()).eval();
  z = ensure_spd(z, &out.ridged);

  const Eigen::MatrixXd zinv_ct = z.ldlt().solve(c.transpose());  // Z^{-1} C', q x 2r
  Eigen::MatrixXd i_bb_inv = bldlt.solve(Eigen::MatrixXd::Identity(two_r, two_r));
  i_bb_inv = 0.5 * (i_bb_inv + i_bb_inv.transpose()).eval();
  Eigen::MatrixXd i_upper = i_bb_inv + c * zinv_ct;
  i_upper = 0.5 * (i_upper + i_upper.transpose()).eval();

  Eigen::MatrixXd b_tilde = i_upper.ldlt().solve(Eigen::MatrixXd::Identity(two_r, two_r));
  b_tilde = 0.5 * (b_tilde + b_tilde.transpose()).eval();
  // PSD clip.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b_tilde);
  const double lmax = std::max(es.eigenvalues().maxCoeff(), 0.0);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  if (es.eigenvalues().minCoeff() < -1e-10 * lmax)
    b_tilde = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  out.B_tilde = b_tilde;
  return out;
}

std::vector<RhoStat> q_statistics(const Eigen::VectorXd& L, const Eigen::MatrixXd& G,
                                  const Eigen::MatrixXd& B_tilde,
                                  const KernelConfig& kernel) {
  const Eigen::Index n = G.rows();
  const Eigen::Index r = G.cols();
  if (L.size() != 2 * n) throw std::invalid_argument("q_statistics: L must have length 2n");
  if (B_tilde.rows() != 2 * r || B_tilde.cols() != 2 * r)
    throw std::invalid_argument("q_statistics: B_tilde must be 2r x 2r");
  kernel.check(r);

  const Eigen::VectorXd s1 = G.transpose() * L.head(n);
  const Eigen::VectorXd s2 = G.transpose() * L.tail(n);
  const Eigen::ArrayXd w = kernel.weights.array();
  const double q_same = (w * s1.array().square()).sum() + (w * s2.array().square()).sum();
  const double q_cross = 2.0 * (w * s1.array() * s2.array()).sum();

  const Eigen::MatrixXd s = symmetric_sqrt(B_tilde);
  std::vector<RhoStat> stats;
  stats.reserve(kernel.rho_grid.size());
  for (double rho : kernel.rho_grid) {
    RhoStat st;
    st.rho = rho;
    st.Q = std::max(0.0, q_same + rho * q_cross);
    st.kernel = s * sigma_rho_kron(rho, kernel.weights) * s;
    st.kernel = 0.5 * (st.kernel + st.kernel.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(st.kernel, Eigen::EigenvaluesOnly);
    st.eigenvalues = es.eigenvalues().cwiseMax(0.0);
    if (es.eigenvalues().minCoeff() < -1e-10 * std::max(es.eigenvalues().maxCoeff(), 0.0) -
                                          1e-12)
      throw std::runtime_error("q_statistics: kernel has a significantly negative eigenvalue");
    stats.push_back(std::move(st));
  }
  return stats;
}

Eigen::MatrixXd gamma_correlation(const std::vector<RhoStat>& stats) {
  const Eigen::Index b = static_cast<Eigen::Index>(stats.size());
  if (b < 1) throw std::invalid_argument("gamma_correlation: empty grid");
  Eigen::VectorXd self(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    self[j] = stats[j].kernel.squaredNorm();  // tr(K_j^2)
    if (!(self[j] > 0.0))
      throw std::runtime_error("gamma_correlation: degenerate (zero-trace) kernel");
  }
  Eigen::MatrixXd gamma(b, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    gamma(j, j) = 1.0;
    for (Eigen::Index l = j + 1; l < b; ++l) {
      const double tr = stats[j].kernel.cwiseProduct(stats[l].kernel).sum();
      gamma(j, l) = gamma(l, j) = tr / std::sqrt(self[j] * self[l]);
    }
  }
  return gamma;
}

namespace {

// Gaussian-copula combination of a min-p with correlation gamma.
MinpResult combine_minp(double p_min, const Eigen::MatrixXd& gamma, std::uint64_t seed) {
  MinpResult out;
  const Eigen::Index b = gamma.rows();
  if (b == 1) {
    out.p = p_min;
    return out;
  }
  const double bonferroni = std::min(1.0, b * p_min);
  const Eigen::MatrixXd corr = nearest_correlation(gamma, &out.gamma_repaired);
  if (p_min <= 0.0) {
    out.p = 0.0;
    return out;
  }
  if (p_min >= 1.0) {
    out.p = 1.0;
    return out;
  }
  const double z = norm_quantile(1.0 - p_min);
  if (bonferroni < 1e-3) {
    // Deep tail: second-order inclusion-exclusion on the equicoordinate
    // exceedances is sharper than QMC at this scale.
    double s2 = 0.0;
    for (Eigen::Index j = 0; j < b; ++j)
      for (Eigen::Index l = j + 1; l < b; ++l)
        s2 += 1.0 - 2.0 * (1.0 - p_min) + bvn_cdf(z, z, corr(j, l));
    out.p = std::min(bonferroni, std::max(p_min, bonferroni - s2));
    return out;
  }
  // 1e-4 where decisions live; looser deep in the body where error has no
  // effect on any rejection decision
  const double tol = std::max(1e-4, 0.01 * p_min);
  const MvnResult mv = mvn_cdf_equicoordinate(z, corr, tol, seed);
  out.p = 1.0 - mv.prob;
  out.p = std::min(bonferroni, std::max(p_min, out.p));
  return out;
}

}  // namespace

MinpResult minp_pvalue(const std::vector<double>& pvalues, const Eigen::MatrixXd& gamma,
                       std::uint64_t seed) {
  if (pvalues.empty()) throw std::invalid_argument("minp_pvalue: no p-values");
  if (gamma.rows() != static_cast<Eigen::Index>(pvalues.size()))
    throw std::invalid_argument("minp_pvalue: Gamma size mismatch");
  double p_min = 1.0;
  for (double p : pvalues) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("minp_pvalue: p outside [0,1]");
    p_min = std::min(p_min, p);
  }
  return combine_minp(p_min, gamma, seed);
}

double resampling_minp(const std::vector<RhoStat>& stats, int replicates,
                       std::uint64_t seed) {
  if (replicates < 500) throw std::invalid_argument("resampling_minp: needs R >= 500");
  const Eigen::Index b = static_cast<Eigen::Index>(stats.size());
  const Eigen::Index dim = stats.front().kernel.rows();

  double p_min = 1.0;
  for (const RhoStat& st : stats) {
    std::vector<double> ev(st.eigenvalues.data(), st.eigenvalues.data() + st.eigenvalues.size());
    p_min = std::min(p_min, qform_survival(ev, st.Q).p);
  }
  if (b == 1) return p_min;

  Rng rng(seed, 7701);
  std::vector<std::vector<double>> draws(b, std::vector<double>(replicates));
  Eigen::VectorXd z(dim);
  for (int rep = 0; rep < replicates; ++rep) {
    for (Eigen::Index i = 0; i < dim; ++i) z[i] = rng.normal();
    for (Eigen::Index j = 0; j < b; ++j) draws[j][rep] = z.dot(stats[j].kernel * z);
  }
  Eigen::MatrixXd gamma(b, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    gamma(j, j) = 1.0;
    for (Eigen::Index l = j + 1; l < b; ++l) {
      const double tau = kendall_tau(draws[j], draws[l]);
      // Greiner's relation maps the rank correlation to the Gaussian-copula
      // parameter.
      gamma(j, l) = gamma(l, j) = std::sin(0.5 * M_PI * std::min(std::max(tau, -1.0), 1.0));
    }
  }
  return combine_minp(p_min, gamma, seed).p;
}

TestResult run_cbmat(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                     const Eigen::MatrixXd& X, const Eigen::MatrixXd& G,
                     const KernelConfig& kernel, const ModelOptions& options) {
  const Eigen::Index n = y1.size();
  if (y2.size() != n || X.rows() != n || G.rows() != n)
    stage_error("input", "inconsistent row counts across y1, y2, X, G");
  if (G.cols() < 1) stage_error("input", "genotype matrix has no variants");
  if (!G.allFinite() || (G.array() < 0.0).any() || (G.array() > 2.0).any())
    stage_error("input", "genotype dosages must lie in [0,2]");
  kernel.check(G.cols());
  {
    const double v1 = (y1.array() - y1.mean()).square().sum();
    const double v2 = (y2.array() - y2.mean()).square().sum();
    if (v1 <= 0.0 || v2 <= 0.0) stage_error("input", "degenerate (constant) trait");
  }

  TestResult res;

  try {
    if (options.margin1_candidates.empty() || options.margin2_candidates.empty() ||
        options.copula_candidates.empty())
      throw std::invalid_argument("empty candidate set");
    res.fit = select_model(y1, y2, X, options.margin1_candidates, options.margin2_candidates,
                           options.copula_candidates, options.mixed, &res.selection,
                           options.fit);
  } catch (const std::exception& e) {
    stage_error("null_fit", e.what());
  }
  if (!res.fit.converged) stage_error("null_fit", "joint null fit did not converge");

  Eigen::VectorXd L;
  ScoreDiagonals d;
  try {
    L = compute_L(res.fit, y1, y2, X);
    d = compute_D(res.fit, y1, y2, X);
  } catch (const std::exception& e) {
    stage_error("score", e.what());
  }

  CorrectedB corr;
  try {
    corr = corrected_B(res.fit, d, y1, y2, X, G);
  } catch (const std::exception& e) {
    stage_error("correction", e.what());
  }

  try {
    res.per_rho = q_statistics(L, G, corr.B_tilde, kernel);
    res.p_values.reserve(res.per_rho.size());
    for (const RhoStat& st : res.per_rho) {
      std::vector<double> ev(st.eigenvalues.data(),
                             st.eigenvalues.data() + st.eigenvalues.size());
      const QformPvalue qp = qform_survival(ev, st.Q);
      res.p_values.push_back(qp.p);
      res.davies_ok = res.davies_ok && qp.davies_ok;
    }
  } catch (const std::exception& e) {
    stage_error("qform", e.what());
  }

  try {
    res.gamma = gamma_correlation(res.per_rho);
    const MinpResult mp = minp_pvalue(res.p_values, res.gamma, options.seed);
    res.p_combined = mp.p;
    res.gamma_repaired = mp.gamma_repaired;
  } catch (const std::exception& e) {
    stage_error("minp", e.what());
  }

  res.p_min = 1.0;
  std::size_t arg = 0;
  for (std::size_t j = 0; j < res.p_values.size(); ++j) {
    if (res.p_values[j] < res.p_min) {
      res.p_min = res.p_values[j];
      arg = j;
    }
  }
  res.rho_optimal = res.per_rho[arg].rho;
  for (std::size_t j = 0; j < res.p_values.size(); ++j) {
    if (j != arg && std::abs(res.p_values[j] - res.p_min) <= 1e-12 * std::max(1.0, res.p_min))
      res.rho_tie = true;
  }

  if (options.resampling_replicates > 0) {
    try {
      res.resampling_p =
          resampling_minp(res.per_rho, options.resampling_replicates, options.seed);
    } catch (const std::exception& e) {
      stage_error("resampling", e.what());
    }
  }
  return res;
}

}  // namespace cbmat
