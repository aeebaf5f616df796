#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "cbmat/joint_null.hpp"
#include "cbmat/rng.hpp"
#include "cbmat/special.hpp"
#include "oracles.hpp"

using namespace cbmat;

namespace {

MarginSpec make_spec(MarginFamily fam, std::initializer_list<double> gamma, double phi = 1.0,
                     int df = 0) {
  MarginSpec s;
  s.family = fam;
  s.gamma = Eigen::VectorXd::Map(gamma.begin(), static_cast<Eigen::Index>(gamma.size()));
  s.phi = phi;
  s.df = df;
  return s;
}

Eigen::MatrixXd standard_design(Eigen::Index n, Rng& rng) {
  Eigen::MatrixXd X(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.uniform() < 0.5 ? 0.0 : 1.0;
    X(i, 2) = rng.normal();
  }
  return X;
}

struct BiSample {
  Eigen::VectorXd y1, y2;
};

BiSample sample_joint(const CopulaSpec& cop, const MarginSpec& m1, const MarginSpec& m2,
                      const Eigen::MatrixXd& X, Rng& rng) {
  const Eigen::Index n = X.rows();
  BiSample out{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  const Eigen::VectorXd lp1 = X * m1.gamma;
  const Eigen::VectorXd lp2 = X * m2.gamma;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto uv = sample_copula(cop, 1, rng).front();
    if (m1.family == MarginFamily::BinaryProbitLatent)
      out.y1[i] = uv.first > norm_cdf(-lp1[i]) ? 1.0 : 0.0;
    else
      out.y1[i] = margin_quantile(m1, uv.first, lp1[i]);
    out.y2[i] = margin_quantile(m2, uv.second, lp2[i]);
  }
  return out;
}

}  // namespace

TEST_CASE("continuous joint density: independence and bivariate-normal oracle") {
  const auto m1 = make_spec(MarginFamily::GaussianIdentity, {0.5}, 1.3);
  const auto m2 = make_spec(MarginFamily::GaussianIdentity, {-0.2}, 0.8);
  for (double y1 : {-0.3, 0.9}) {
    for (double y2 : {-1.0, 0.4}) {
      const double indep = joint_logdensity_cc({CopulaFamily::Gaussian, 0.0}, m1, m2, y1, y2,
                                               0.5, -0.2);
      CHECK(indep == doctest::Approx(margin_logpdf(m1, y1, 0.5) + margin_logpdf(m2, y2, -0.2))
                         .epsilon(1e-10));

      const double theta = std::sin(0.2 * M_PI);
      const double got = joint_logdensity_cc({CopulaFamily::Gaussian, theta}, m1, m2, y1, y2,
                                             0.5, -0.2);
      const double s1 = std::sqrt(1.3), s2 = std::sqrt(0.8);
      const double z1 = (y1 - 0.5) / s1, z2 = (y2 + 0.2) / s2;
      const double want = -std::log(2.0 * M_PI * s1 * s2 * std::sqrt(1.0 - theta * theta)) -
                          (z1 * z1 - 2.0 * theta * z1 * z2 + z2 * z2) /
                              (2.0 * (1.0 - theta * theta));
      CHECK(got == doctest::Approx(want).epsilon(1e-8));
    }
  }
}

TEST_CASE("continuous joint density: component composition oracle") {
  const auto m1 = make_spec(MarginFamily::ExponentialLog, {0.0});
  const auto m2 = make_spec(MarginFamily::ExponentialLog, {0.0});
  const CopulaSpec cop{CopulaFamily::Clayton, 1.0};
  const double got = joint_logdensity_cc(cop, m1, m2, 1.0, 1.0, 0.0, 0.0);
  const double u = margin_cdf(m1, 1.0, 0.0), v = margin_cdf(m2, 1.0, 0.0);
  const double want = std::log(margin_pdf(m1, 1.0, 0.0)) + std::log(margin_pdf(m2, 1.0, 0.0)) +
                      std::log(copula_density(cop, u, v));
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("joint density integrates to one over a truncated box") {
  struct Config {
    CopulaSpec cop;
    MarginSpec m1, m2;
    double ax, bx, ay, by;
  };
  const std::vector<Config> configs{
      {{CopulaFamily::Gaussian, 0.6},
       make_spec(MarginFamily::GaussianIdentity, {0.0}),
       make_spec(MarginFamily::GaussianIdentity, {0.0}),
       -7.0, 7.0, -7.0, 7.0},
      {{CopulaFamily::Clayton, 1.5},
       make_spec(MarginFamily::ExponentialLog, {0.0}),
       make_spec(MarginFamily::ExponentialLog, {0.0}),
       1e-8, 25.0, 1e-8, 25.0},
      {{CopulaFamily::Frank, 4.0},
       make_spec(MarginFamily::GaussianIdentity, {0.0}),
       make_spec(MarginFamily::ExponentialLog, {0.0}),
       -7.0, 7.0, 1e-8, 25.0},
  };
  for (const auto& c : configs) {
    const double mass = oracles::integrate_2d(
        [&](double a, double b) {
          return std::exp(joint_logdensity_cc(c.cop, c.m1, c.m2, a, b, 0.0, 0.0));
        },
        c.ax, c.bx, c.ay, c.by, 24);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-2));
  }
}

TEST_CASE("mixed joint density: independence reduction and marginalization") {
  const auto m1 = make_spec(MarginFamily::BinaryProbitLatent, {0.3});
  const auto m2 = make_spec(MarginFamily::ExponentialLog, {0.2});
  const double mu1 = norm_cdf(0.3);
  for (double y2 : {0.4, 1.7}) {
    for (double y1 : {0.0, 1.0}) {
      const double got = joint_logdensity_mixed({CopulaFamily::Gaussian, 0.0}, m1, m2, y1, y2,
                                                0.3, 0.2);
      const double want = margin_logpdf(m2, y2, 0.2) +
                          (y1 == 1.0 ? std::log(mu1) : std::log1p(-mu1));
      CHECK(got == doctest::Approx(want).epsilon(1e-10));
    }
  }
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    const CopulaSpec cop{CopulaFamily::Frank, rng.uniform(-6.0, 6.0)};
    const double lp1 = rng.uniform(-1.0, 1.0), lp2 = rng.uniform(-0.5, 0.5);
    const double y2 = rng.uniform(0.05, 4.0);
    const double total = std::exp(joint_logdensity_mixed(cop, m1, m2, 0.0, y2, lp1, lp2)) +
                         std::exp(joint_logdensity_mixed(cop, m1, m2, 1.0, y2, lp1, lp2));
    CHECK(total == doctest::Approx(margin_pdf(m2, y2, lp2)).epsilon(1e-10));
  }
}

TEST_CASE("mixed joint density: latent-integral oracle") {
  const auto m1 = make_spec(MarginFamily::BinaryProbitLatent, {0.0});
  const auto m2 = make_spec(MarginFamily::ExponentialLog, {0.0});
  const CopulaSpec cop{CopulaFamily::Gaussian, 0.5};
  const double y2 = 1.0;
  const double v = margin_cdf(m2, y2, 0.0);
  // f(y1=0, y2) = f2(y2) * integral_{-inf}^0 phi(t) c(Phi(t), v) dt
  const double latent = oracles::integrate_1d(
      [&](double t) {
        return norm_pdf(t) * copula_density(cop, norm_cdf(t), v);
      },
      -9.0, 0.0, 128);
  const double want0 = std::log(margin_pdf(m2, y2, 0.0) * latent);
  CHECK(joint_logdensity_mixed(cop, m1, m2, 0.0, y2, 0.0, 0.0) ==
        doctest::Approx(want0).epsilon(1e-8));
}

TEST_CASE("per-subject lp score matches finite differences") {
  const std::vector<CopulaSpec> cops{{CopulaFamily::Gaussian, 0.55},
                                     {CopulaFamily::Frank, 4.0},
                                     {CopulaFamily::Clayton, 1.2}};
  const auto m2 = make_spec(MarginFamily::GammaLog, {0.4}, 0.6);
  SUBCASE("continuous") {
    const auto m1 = make_spec(MarginFamily::StudentTIdentity, {0.1}, 1.1, 5);
    for (const auto& cop : cops) {
      for (double y1 : {-0.8, 0.6}) {
        for (double y2 : {0.5, 2.2}) {
          const LpScore s = joint_score_lp(cop, m1, m2, false, y1, y2, 0.1, 0.4);
          const double d1 = oracles::central_diff(
              [&](double a) { return joint_logdensity_cc(cop, m1, m2, y1, y2, a, 0.4); }, 0.1,
              1e-6);
          const double d2 = oracles::central_diff(
              [&](double b) { return joint_logdensity_cc(cop, m1, m2, y1, y2, 0.1, b); }, 0.4,
              1e-6);
          CHECK(oracles::rel_err(s.d1, d1) < 1e-5);
          CHECK(oracles::rel_err(s.d2, d2) < 1e-5);
        }
      }
    }
  }
  SUBCASE("mixed") {
    const auto m1 = make_spec(MarginFamily::BinaryProbitLatent, {0.1});
    for (const auto& cop : cops) {
      for (double y1 : {0.0, 1.0}) {
        for (double y2 : {0.5, 2.2}) {
          const LpScore s = joint_score_lp(cop, m1, m2, true, y1, y2, 0.1, 0.4);
          const double d1 = oracles::central_diff(
              [&](double a) { return joint_logdensity_mixed(cop, m1, m2, y1, y2, a, 0.4); },
              0.1, 1e-6);
          const double d2 = oracles::central_diff(
              [&](double b) { return joint_logdensity_mixed(cop, m1, m2, y1, y2, 0.1, b); },
              0.4, 1e-6);
          CHECK(oracles::rel_err(s.d1, d1) < 1e-5);
          CHECK(oracles::rel_err(s.d2, d2) < 1e-5);
        }
      }
    }
  }
  SUBCASE("mixed independence gives the probit score") {
    const auto m1 = make_spec(MarginFamily::BinaryProbitLatent, {0.1});
    const LpScore s =
        joint_score_lp({CopulaFamily::Gaussian, 0.0}, m1, m2, true, 1.0, 0.7, 0.1, 0.4);
    CHECK(s.d1 == doctest::Approx(norm_pdf(0.1) / norm_cdf(0.1)).epsilon(1e-9));
  }
}

TEST_CASE("fit_null recovers the generating dependence") {
  Rng rng(101);
  const Eigen::Index n = 5000;
  const Eigen::MatrixXd X = standard_design(n, rng);
  const auto m1 = make_spec(MarginFamily::ExponentialLog, {-0.20, 0.33, 0.78});
  const auto m2 = make_spec(MarginFamily::ExponentialLog, {1.52, 1.25, 1.86});

  SUBCASE("tau 0.4") {
    const CopulaSpec cop{CopulaFamily::Gaussian, tau_to_theta(CopulaFamily::Gaussian, 0.4)};
    const BiSample s = sample_joint(cop, m1, m2, X, rng);
    const NullFit fit = fit_null(s.y1, s.y2, X, CopulaFamily::Gaussian,
                                 MarginFamily::ExponentialLog, MarginFamily::ExponentialLog,
                                 false);
    CHECK(fit.converged);
    CHECK(theta_to_tau(CopulaFamily::Gaussian, fit.copula.theta) ==
          doctest::Approx(0.4).epsilon(0.125));
    CHECK((fit.margin1.gamma - m1.gamma).lpNorm<Eigen::Infinity>() < 0.15);

    // two-stage start cannot beat the joint optimum
    const MarginFit mf1 = fit_margin_null(MarginFamily::ExponentialLog, s.y1, X);
    const MarginFit mf2 = fit_margin_null(MarginFamily::ExponentialLog, s.y2, X);
    NullFit start = fit;
    start.margin1 = mf1.spec;
    start.margin2 = mf2.spec;
    const double ll_start = joint_loglik(fit.copula, mf1.spec, mf2.spec, false, s.y1, s.y2, X);
    CHECK(ll_start <= fit.loglik + 1e-6);

    // numeric xi gradient vanishes at the optimum (scaled by n)
    const Eigen::VectorXd g = joint_loglik_xi_gradient(fit, s.y1, s.y2, X);
    CHECK(g.lpNorm<Eigen::Infinity>() / static_cast<double>(n) < 1e-4);

    // xi covariance is symmetric positive definite
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.xi_cov);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK((fit.xi_cov - fit.xi_cov.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);

    // stored loglik is recomputable from the stored parameters
    CHECK(joint_loglik(fit.copula, fit.margin1, fit.margin2, false, s.y1, s.y2, X) ==
          doctest::Approx(fit.loglik).epsilon(1e-10));
    CHECK(fit.aic == doctest::Approx(2.0 * fit.free_params - 2.0 * fit.loglik));
  }

  SUBCASE("independence data") {
    const CopulaSpec cop{CopulaFamily::Gaussian, 0.0};
    const BiSample s = sample_joint(cop, m1, m2, X, rng);
    const NullFit fit = fit_null(s.y1, s.y2, X, CopulaFamily::Gaussian,
                                 MarginFamily::ExponentialLog, MarginFamily::ExponentialLog,
                                 false);
    CHECK(fit.converged);
    CHECK(std::abs(theta_to_tau(CopulaFamily::Gaussian, fit.copula.theta)) < 0.05);
  }

  SUBCASE("mixed fit recovers tau") {
    const CopulaSpec cop{CopulaFamily::Gaussian, tau_to_theta(CopulaFamily::Gaussian, 0.4)};
    const auto mp = make_spec(MarginFamily::BinaryProbitLatent, {-0.20, 0.33, 0.78});
    const BiSample s = sample_joint(cop, mp, m2, X, rng);
    const NullFit fit = fit_null(s.y1, s.y2, X, CopulaFamily::Gaussian,
                                 MarginFamily::BinaryProbitLatent,
                                 MarginFamily::ExponentialLog, true);
    CHECK(fit.converged);
    CHECK(theta_to_tau(CopulaFamily::Gaussian, fit.copula.theta) ==
          doctest::Approx(0.4).epsilon(0.15));
  }
}

TEST_CASE("select_model picks the generating copula most of the time") {
  Rng rng(211);
  const Eigen::Index n = 2000;
  const auto m1 = make_spec(MarginFamily::ExponentialLog, {-0.20, 0.33, 0.78});
  const auto m2 = make_spec(MarginFamily::StudentTIdentity, {1.52, 1.25, 1.86}, 1.0, 3);
  const CopulaSpec cop{CopulaFamily::Gaussian, tau_to_theta(CopulaFamily::Gaussian, 0.4)};
  int hits = 0;
  const int reps = 50;
  for (int rep = 0; rep < reps; ++rep) {
    const Eigen::MatrixXd X = standard_design(n, rng);
    const BiSample s = sample_joint(cop, m1, m2, X, rng);
    SelectionReport report;
    const NullFit fit = select_model(
        s.y1, s.y2, X,
        {MarginFamily::GaussianIdentity, MarginFamily::GammaLog,
         MarginFamily::StudentTIdentity},
        {MarginFamily::GaussianIdentity, MarginFamily::GammaLog,
         MarginFamily::StudentTIdentity},
        {CopulaFamily::Gaussian, CopulaFamily::Frank, CopulaFamily::Clayton}, false, &report);
    if (fit.copula.family == CopulaFamily::Gaussian) ++hits;
  }
  CHECK(hits >= 40);
}

TEST_CASE("select_model: single candidates and the exponential/gamma nesting") {
  Rng rng(307);
  const Eigen::Index n = 1500;
  const Eigen::MatrixXd X = standard_design(n, rng);
  const auto m1 = make_spec(MarginFamily::ExponentialLog, {0.1, 0.2, -0.1});
  const auto m2 = make_spec(MarginFamily::ExponentialLog, {0.3, -0.2, 0.2});
  const CopulaSpec cop{CopulaFamily::Frank, 4.0};
  const BiSample s = sample_joint(cop, m1, m2, X, rng);

  SelectionReport report;
  const NullFit single = select_model(s.y1, s.y2, X, {MarginFamily::ExponentialLog},
                                      {MarginFamily::ExponentialLog}, {CopulaFamily::Frank},
                                      false, &report);
  CHECK(single.copula.family == CopulaFamily::Frank);
  CHECK(report.copula.size() == 1);

  // exponential nested in gamma: AIC gap at most the parameter penalty
  const MarginFit fe = fit_margin_null(MarginFamily::ExponentialLog, s.y1, X);
  const MarginFit fg = fit_margin_null(MarginFamily::GammaLog, s.y1, X);
  CHECK(fg.loglik >= fe.loglik - 1e-4);
  CHECK(fg.aic - fe.aic <= 2.0 + 1e-4);
  CHECK(fg.aic == doctest::Approx(fe.aic + 2.0 - 2.0 * (fg.loglik - fe.loglik)));
}

TEST_CASE("joint AIC counts the grid-selected student df as a free parameter") {
  Rng rng(509);
  const Eigen::MatrixXd X = standard_design(1200, rng);
  const auto m1 = make_spec(MarginFamily::ExponentialLog, {0.1, 0.2, -0.1});
  const auto m2 = make_spec(MarginFamily::StudentTIdentity, {0.5, -0.3, 0.4}, 1.0, 3);
  const CopulaSpec cop{CopulaFamily::Gaussian, 0.4};
  const BiSample s = sample_joint(cop, m1, m2, X, rng);
  FitOptions fast;
  fast.compute_xi_information = false;
  const NullFit fit = fit_null(s.y1, s.y2, X, CopulaFamily::Gaussian,
                               MarginFamily::ExponentialLog, MarginFamily::StudentTIdentity,
                               false, fast);
  // theta + 2*(m+1) coefficients + scale phi2 + df-on-grid
  CHECK(fit.free_params == 1 + 6 + 1 + 1);
  CHECK(fit.aic == doctest::Approx(2.0 * fit.free_params - 2.0 * fit.loglik));
}

TEST_CASE("all-candidates-failed raises an aggregate error") {
  Rng rng(401);
  const Eigen::MatrixXd X = standard_design(60, rng);
  Eigen::VectorXd y1(60), y2(60);
  for (Eigen::Index i = 0; i < 60; ++i) {
    y1[i] = rng.normal();  // negative values break positive-support margins
    y2[i] = rng.normal();
  }
  CHECK_THROWS_WITH_AS(
      select_model(y1, y2, X, {MarginFamily::ExponentialLog}, {MarginFamily::ExponentialLog},
                   {CopulaFamily::Gaussian}, false),
      doctest::Contains("all margin candidates failed"), std::runtime_error);
}
