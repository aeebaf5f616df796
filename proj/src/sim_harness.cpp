#include "cbmat/sim_harness.hpp"

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace cbmat {

ScenarioSpec ScenarioSpec::reference_defaults() {
  ScenarioSpec s;
  s.gamma1.resize(3);
  s.gamma1 << -0.20, 0.33, 0.78;
  s.gamma2.resize(3);
  s.gamma2 << 1.52, 1.25, 1.86;
  return s;
}

double phi_star(const Eigen::VectorXd& gamma, double phi) {
  if (gamma.size() != 3) throw std::invalid_argument("phi_star expects the 3-column design");
  // Var[X] = diag(0, 1/4, 1) for (intercept, Bernoulli(0.5), N(0,1)).
  return 0.25 * gamma[1] * gamma[1] + gamma[2] * gamma[2] + phi;
}

double eta_from_h2(double h2, double phi_star_value, const Eigen::VectorXd& weights,
                   const Eigen::VectorXd& maf) {
  if (!(h2 >= 0.0 && h2 < 1.0)) throw std::domain_error("eta_from_h2: h2 outside [0,1)");
  if (h2 == 0.0) return 0.0;
  if (weights.size() != maf.size()) throw std::invalid_argument("eta_from_h2: length mismatch");
  const double denom =
      2.0 * (1.0 - h2) * (weights.array() * maf.array() * (maf.array() + 1.0)).sum();
  if (!(denom > 0.0))
    throw std::domain_error("eta_from_h2: no causal weight with positive h2");
  return phi_star_value * h2 / denom;
}

namespace {

Eigen::MatrixXd beta_covariance_sqrt(double eta, double pleiotropy,
                                     const Eigen::VectorXd& w) {
  const Eigen::Index r = w.size();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(2 * r, 2 * r);
  cov.topLeftCorner(r, r).diagonal() = eta * w;
  cov.bottomRightCorner(r, r).diagonal() = eta * w;
  cov.topRightCorner(r, r).diagonal() = eta * pleiotropy * w;
  cov.bottomLeftCorner(r, r).diagonal() = eta * pleiotropy * w;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  // rho = 1 makes the covariance singular; fall back to the eigen square root
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  return es.eigenvectors() *
         es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

double draw_trait(const MarginSpec& spec, double u, double lp) {
  if (spec.family == MarginFamily::BinaryProbitLatent) {
    // Y = I(Y* > 0) with Y* = lp + Phi^{-1}(U): exceeds 0 iff U > 1 - mu.
    return u > norm_cdf(-lp) ? 1.0 : 0.0;
  }
  return margin_quantile(spec, u, lp);
}

}  // namespace

SimulatedDataset simulate_dataset(const ScenarioSpec& spec, Rng& rng) {
  if (spec.gamma1.size() != 3 || spec.gamma2.size() != 3)
    throw std::invalid_argument("simulate_dataset: gamma vectors must have length 3");
  const Eigen::Index n = spec.n, r = spec.r;
  SimulatedDataset ds;

  ds.maf = spec.maf;
  if (ds.maf.size() == 0 || spec.resample_mafs) {
    ds.maf.resize(r);
    for (Eigen::Index j = 0; j < r; ++j) ds.maf[j] = rng.uniform(0.005, 0.5);
  }
  if (ds.maf.size() != r) throw std::invalid_argument("simulate_dataset: MAF length != r");

  ds.G.resize(n, r);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < r; ++j) ds.G(i, j) = rng.binomial2(ds.maf[j]);

  ds.X.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    ds.X(i, 0) = 1.0;
    ds.X(i, 1) = rng.uniform() < 0.5 ? 0.0 : 1.0;
    ds.X(i, 2) = rng.normal();
  }

  // Region effect: eta from heritability with causal-indicator weights.
  Eigen::VectorXd w = Eigen::VectorXd::Zero(r);
  ds.beta_true = Eigen::VectorXd::Zero(2 * r);
  ds.eta_true = 0.0;
  if (spec.h2 > 0.0 && spec.causal_fraction > 0.0) {
    const int n_causal =
        std::min<int>(static_cast<int>(r), static_cast<int>(
            std::ceil(spec.causal_fraction * static_cast<double>(r))));
    std::vector<int> order(r);
    for (Eigen::Index j = 0; j < r; ++j) order[j] = static_cast<int>(j);
    for (Eigen::Index j = 0; j < r - 1; ++j) {
      const Eigen::Index k = j + static_cast<Eigen::Index>(rng.below(r - j));
      std::swap(order[j], order[k]);
    }
    for (int c = 0; c < n_causal; ++c) {
      w[order[c]] = 1.0;
      ds.causal.push_back(order[c]);
    }
    const double ps =
        0.5 * (phi_star(spec.gamma1, spec.phi1) + phi_star(spec.gamma2, spec.phi2));
    ds.eta_true = eta_from_h2(spec.h2, ps, w, ds.maf);
    const Eigen::MatrixXd root = beta_covariance_sqrt(ds.eta_true, spec.pleiotropy, w);
    Eigen::VectorXd z(2 * r);
    for (Eigen::Index i = 0; i < 2 * r; ++i) z[i] = rng.normal();
    ds.beta_true = root * z;
  }

  MarginSpec m1{spec.margin1, spec.gamma1, spec.phi1, spec.df1};
  MarginSpec m2{spec.margin2, spec.gamma2, spec.phi2, spec.df2};
  const CopulaSpec cop{spec.copula, spec.tau == 0.0 && spec.copula == CopulaFamily::Gaussian
                                        ? 0.0
                                        : tau_to_theta(spec.copula, spec.tau)};

  const Eigen::VectorXd lp1 = ds.X * spec.gamma1 + ds.G * ds.beta_true.head(r);
  const Eigen::VectorXd lp2 = ds.X * spec.gamma2 + ds.G * ds.beta_true.tail(r);
  ds.y1.resize(n);
  ds.y2.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double u, v;
    if (cop.family == CopulaFamily::Gaussian) {
      const double z1 = rng.normal();
      const double z2 = cop.theta * z1 + std::sqrt(1.0 - cop.theta * cop.theta) * rng.normal();
      u = norm_cdf(z1);
      v = norm_cdf(z2);
    } else {
      v = rng.uniform();
      u = copula_dv_inverse(cop, rng.uniform(), v);
    }
    ds.y1[i] = draw_trait(m1, u, lp1[i]);
    ds.y2[i] = draw_trait(m2, v, lp2[i]);
  }
  return ds;
}

ReplicateRunner cbmat_runner(const ModelOptions& options, const KernelConfig* kernel) {
  const std::optional<KernelConfig> fixed =
      kernel ? std::optional<KernelConfig>(*kernel) : std::nullopt;
  return [options, fixed](const SimulatedDataset& ds, Rng&) -> double {
    const KernelConfig k =
        fixed ? *fixed : KernelConfig::uniform(ds.G.cols());
    const TestResult res = run_cbmat(ds.y1, ds.y2, ds.X, ds.G, k, options);
    return res.p_combined;
  };
}

ExperimentSummary run_experiment(const ScenarioSpec& spec, const ReplicateRunner& runner,
                                 int threads) {
  if (spec.replicates < 100)
    throw std::invalid_argument("run_experiment: needs at least 100 replicates");
  const int reps = spec.replicates;

  // A fixed region (unless resample_mafs) drawn once from the master seed.
  ScenarioSpec scen = spec;
  if (scen.maf.size() == 0 && !scen.resample_mafs) {
    Rng rng(spec.seed, 0);
    scen.maf.resize(scen.r);
    for (Eigen::Index j = 0; j < scen.r; ++j) scen.maf[j] = rng.uniform(0.005, 0.5);
  }

  std::vector<double> pvals(reps, std::numeric_limits<double>::quiet_NaN());
  std::atomic<int> next{0};
  int nthreads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  if (nthreads < 1) nthreads = 1;
  nthreads = std::min(nthreads, reps);

  const auto worker = [&]() {
    for (;;) {
      const int rep = next.fetch_add(1);
      if (rep >= reps) return;
      Rng rng(scen.seed, static_cast<std::uint64_t>(rep) + 1);
      try {
        const SimulatedDataset ds = simulate_dataset(scen, rng);
        pvals[rep] = runner(ds, rng);
      } catch (const std::exception&) {
        // counted below as a replicate failure
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  ExperimentSummary sum;
  sum.replicates = reps;
  sum.alpha = spec.alpha;
  sum.p_values = pvals;  // one entry per replicate; NaN marks a failure
  for (double p : pvals) {
    if (std::isnan(p)) {
      ++sum.failures;
      continue;
    }
    ++sum.valid;
    if (p <= spec.alpha) ++sum.rejections;
  }
  if (sum.failures * 100 >= reps)
    throw std::runtime_error("run_experiment: more than 1% of replicates failed (" +
                             std::to_string(sum.failures) + "/" + std::to_string(reps) + ")");
  sum.rate = sum.valid > 0 ? static_cast<double>(sum.rejections) / sum.valid : 0.0;
  sum.ci = clopper_pearson(sum.rejections, sum.valid);
  return sum;
}

}  // namespace cbmat
