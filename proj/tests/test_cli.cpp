#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cbmat/cli.hpp"
#include "cbmat/rng.hpp"
#include "score_helpers.hpp"

using namespace cbmat;
using nlohmann::json;

namespace {

std::string tmp_path(const std::string& name) { return "cli_test_" + name; }

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << text;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Delimited dumps of a synthetic dataset, with optional row shuffling.
void dump_dataset(const score_helpers::Synthetic& s, const std::string& pheno,
                  const std::string& geno, const std::vector<int>& pheno_order,
                  const std::vector<int>& geno_order) {
  std::ostringstream ph;
  ph << "id\ty1\ty2\tsex\tage\n";
  for (int i : pheno_order)
    ph << "S" << i << '\t' << s.y1[i] << '\t' << s.y2[i] << '\t' << s.X(i, 1) << '\t'
       << s.X(i, 2) << '\n';
  write_file(pheno, ph.str());
  std::ostringstream ge;
  ge << "id";
  for (Eigen::Index j = 0; j < s.G.cols(); ++j) ge << "\tv" << j;
  ge << '\n';
  for (int i : geno_order) {
    ge << "S" << i;
    for (Eigen::Index j = 0; j < s.G.cols(); ++j) ge << '\t' << s.G(i, j);
    ge << '\n';
  }
  write_file(geno, ge.str());
}

RunConfig base_config(const std::string& pheno, const std::string& geno) {
  RunConfig cfg;
  cfg.mode = RunConfig::Mode::Test;
  cfg.pheno_path = pheno;
  cfg.geno_path = geno;
  cfg.trait1 = "y1";
  cfg.trait2 = "y2";
  cfg.covars = {"sex", "age"};
  return cfg;
}

score_helpers::Synthetic small_data(std::uint64_t seed, Eigen::Index n = 80,
                                    Eigen::Index r = 4) {
  Rng rng(seed);
  const auto m1 = score_helpers::margin_of(MarginFamily::ExponentialLog, {0.1, 0.2, -0.1});
  const auto m2 = score_helpers::margin_of(MarginFamily::ExponentialLog, {0.4, -0.2, 0.2});
  return score_helpers::make_null_data({CopulaFamily::Gaussian, 0.3}, m1, m2, n, r, rng);
}

std::vector<int> iota_order(int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST_CASE("ingest: passthrough, join order-insensitivity, imputation") {
  const auto s = small_data(1);
  const int n = static_cast<int>(s.y1.size());
  const std::string pheno = tmp_path("p1.tsv"), geno = tmp_path("g1.tsv");

  SUBCASE("no missingness round-trips exactly") {
    dump_dataset(s, pheno, geno, iota_order(n), iota_order(n));
    const RunConfig cfg = base_config(pheno, geno);
    const IngestResult got = ingest(pheno, geno, cfg);
    REQUIRE(got.y1.size() == n);
    // join sorts ids lexicographically; compare by id lookup
    for (Eigen::Index k = 0; k < n; ++k) {
      const int i = std::stoi(got.ids[k].substr(1));
      CHECK(got.y1[k] == doctest::Approx(s.y1[i]).epsilon(1e-4));
      CHECK(got.X(k, 1) == s.X(i, 1));
      for (Eigen::Index j = 0; j < s.G.cols(); ++j) CHECK(got.G(k, j) == s.G(i, j));
    }
    CHECK(got.dropped_subjects == 0);
    CHECK(got.imputed_dosages == 0);
    CHECK(got.maf.size() == s.G.cols());
    for (Eigen::Index j = 0; j < got.maf.size(); ++j)
      CHECK(got.maf[j] == doctest::Approx(0.5 * got.G.col(j).mean()));
  }

  SUBCASE("shuffled subject order pairs identically") {
    std::vector<int> shuffled = iota_order(n);
    Rng rng(2);
    for (int i = n - 1; i > 0; --i)
      std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
    dump_dataset(s, pheno, geno, iota_order(n), shuffled);
    const IngestResult a = ingest(pheno, geno, base_config(pheno, geno));
    dump_dataset(s, pheno, geno, shuffled, iota_order(n));
    const IngestResult b = ingest(pheno, geno, base_config(pheno, geno));
    CHECK(a.ids == b.ids);
    CHECK(a.y1 == b.y1);
    CHECK(a.G == b.G);
  }

  SUBCASE("NA dosage imputes the observed column mean") {
    // 10 observed dosages with mean 0.4 plus one NA
    std::ostringstream ph, ge;
    ph << "id\ty1\ty2\n";
    ge << "id\tv0\n";
    const int dose[30] = {0, 1, 0, 0, 1, 0, 1, 0, 1, 0, 0, 1, 0, 0, 1,
                          0, 1, 0, 1, 0, 0, 1, 0, 0, 1, 0, 1, 0, 1, 0};
    for (int i = 0; i < 31; ++i) {
      ph << "S" << (i < 10 ? "0" : "") << i << '\t' << 0.5 + i * 0.01 << '\t' << 1.0 + i * 0.02
         << '\n';
      ge << "S" << (i < 10 ? "0" : "") << i << '\t';
      if (i == 30)
        ge << "NA\n";
      else
        ge << dose[i] << '\n';
    }
    write_file(pheno, ph.str());
    write_file(geno, ge.str());
    RunConfig cfg = base_config(pheno, geno);
    cfg.covars = {};
    const IngestResult got = ingest(pheno, geno, cfg);
    CHECK(got.imputed_dosages == 1);
    CHECK(got.G(30, 0) == doctest::Approx(0.4));
  }
}

TEST_CASE("ingest error paths") {
  const std::string pheno = tmp_path("p2.tsv"), geno = tmp_path("g2.tsv");

  SUBCASE("bad dosage names the line") {
    std::ostringstream ph, ge;
    ph << "id\ty1\ty2\n";
    ge << "id\tv0\n";
    for (int i = 0; i < 35; ++i) {
      ph << "S" << i << '\t' << 0.5 << '\t' << 1.0 << '\n';
      ge << "S" << i << '\t' << (i == 7 ? "1.5" : "1") << '\n';
    }
    write_file(pheno, ph.str());
    write_file(geno, ge.str());
    RunConfig cfg = base_config(pheno, geno);
    cfg.covars = {};
    CHECK_THROWS_WITH_AS(ingest(pheno, geno, cfg), doctest::Contains("line 9"),
                         std::runtime_error);
  }

  SUBCASE("too-small join is rejected") {
    const auto s = small_data(3, 40, 3);
    dump_dataset(s, pheno, geno, iota_order(5), iota_order(5));
    CHECK_THROWS_WITH_AS(ingest(pheno, geno, base_config(pheno, geno)),
                         doctest::Contains("30"), std::runtime_error);
  }

  SUBCASE("zero-MAF variants are dropped with a warning record") {
    auto s = small_data(4, 60, 3);
    s.G.col(1).setZero();
    dump_dataset(s, pheno, geno, iota_order(60), iota_order(60));
    const IngestResult got = ingest(pheno, geno, base_config(pheno, geno));
    CHECK(got.G.cols() == 2);
    REQUIRE(got.dropped_variants.size() == 1);
    CHECK(got.dropped_variants[0] == "v1");
  }

  SUBCASE("missing phenotype rows are dropped and counted") {
    const auto s = small_data(5, 60, 3);
    dump_dataset(s, pheno, geno, iota_order(60), iota_order(60));
    // blank out one covariate cell
    std::string text = slurp(pheno);
    const auto pos = text.find("\nS7\t");
    auto tab = text.find('\t', pos + 1);
    tab = text.find('\t', tab + 1);
    tab = text.find('\t', tab + 1);
    text.replace(tab + 1, text.find('\t', tab + 1) - tab - 1, "NA");
    write_file(pheno, text);
    const IngestResult got = ingest(pheno, geno, base_config(pheno, geno));
    CHECK(got.dropped_subjects == 1);
    CHECK(got.y1.size() == 59);
  }
}

TEST_CASE("run_cli test mode: deterministic JSON modulo timestamp") {
  const auto s = small_data(11, 120, 5);
  const std::string pheno = tmp_path("p3.tsv"), geno = tmp_path("g3.tsv");
  dump_dataset(s, pheno, geno, iota_order(120), iota_order(120));

  RunConfig cfg = base_config(pheno, geno);
  cfg.margins = "exponential,exponential";
  cfg.copula = "gaussian";
  cfg.seed = 7;
  cfg.weights = "uniform";
  cfg.out_path = tmp_path("out1.json");
  REQUIRE(run_cli(cfg) == 0);
  json a = json::parse(slurp(cfg.out_path));
  cfg.out_path = tmp_path("out2.json");
  REQUIRE(run_cli(cfg) == 0);
  json b = json::parse(slurp(cfg.out_path));
  a.erase("timestamp");
  b.erase("timestamp");
  CHECK(a.dump() == b.dump());

  // document shape: selection, fit, per-rho p-values, diagnostics
  CHECK(a["schema_version"] == 1);
  CHECK(a["fit"]["copula"] == "gaussian");
  CHECK(a["fit"]["margin1"]["family"] == "exponential");
  CHECK(a["test"]["per_rho"].size() == 11);
  for (const auto& row : a["test"]["per_rho"]) {
    const double p = row["p"].get<double>();
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  const double pc = a["test"]["p_combined"].get<double>();
  CHECK(pc >= a["test"]["p_min"].get<double>());
  CHECK(a["diagnostics"].contains("davies_ok"));
  CHECK(std::isfinite(a["fit"]["kendall_tau"].get<double>()));
}

TEST_CASE("run_cli simulate mode writes TSV and optional CSV") {
  RunConfig cfg;
  cfg.mode = RunConfig::Mode::Simulate;
  cfg.preset = "table2";
  cfg.scenario = "gaussian_tau0.20";
  cfg.sim = ScenarioSpec::reference_defaults();
  cfg.sim.n = 100;
  cfg.sim.r = 4;
  cfg.sim.replicates = 100;
  cfg.seed = 3;
  cfg.threads = 2;
  cfg.out_path = tmp_path("sum.tsv");
  cfg.pvalues_out = tmp_path("pv.csv");
  REQUIRE(run_cli(cfg) == 0);

  const std::string tsv = slurp(cfg.out_path);
  CHECK(tsv.find("scenario\tpreset") == 0);
  CHECK(tsv.find("gaussian_tau0.20") != std::string::npos);
  CHECK(tsv.find("exponential") != std::string::npos);
  std::istringstream lines(slurp(cfg.pvalues_out));
  std::string line;
  int rows = 0;
  while (std::getline(lines, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 101);  // header + one row per replicate
}

TEST_CASE("binary: missing required flag exits nonzero with usage text") {
  const std::string cmd = std::string(CBMAT_BIN) + " test --pheno nope.tsv 2>" +
                          tmp_path("err.txt") + " >/dev/null";
  const int rc = std::system(cmd.c_str());
  CHECK(rc != 0);
  const std::string err = slurp(tmp_path("err.txt"));
  CHECK(err.find("--geno") != std::string::npos);

  const int rc2 = std::system((std::string(CBMAT_BIN) + " --help > /dev/null").c_str());
  CHECK(rc2 == 0);
}

TEST_CASE("binary: end-to-end test subcommand") {
  const auto s = small_data(21, 100, 4);
  const std::string pheno = tmp_path("p4.tsv"), geno = tmp_path("g4.tsv");
  dump_dataset(s, pheno, geno, iota_order(100), iota_order(100));
  const std::string out = tmp_path("out4.json");
  const std::string cmd = std::string(CBMAT_BIN) + " test --pheno " + pheno + " --geno " +
                          geno +
                          " --trait1 y1 --trait2 y2 --covars sex,age"
                          " --margins exponential,exponential --copula gaussian" +
                          " --weights uniform --seed 5 --out " + out + " >/dev/null 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);
  const json doc = json::parse(slurp(out));
  CHECK(doc["test"]["p_combined"].get<double>() >= 0.0);

  // error document on a broken input
  const std::string cmd2 = std::string(CBMAT_BIN) + " test --pheno missing_file.tsv --geno " +
                           geno + " --trait1 y1 --trait2 y2 --out " + tmp_path("err.json") +
                           " >/dev/null 2>&1";
  CHECK(std::system(cmd2.c_str()) != 0);
  const json err = json::parse(slurp(tmp_path("err.json")));
  CHECK(err.contains("error"));
  CHECK(err["error"]["stage"] == "ingest");
}

TEST_CASE("binary trait with auto selection through the binary, config file honored") {
  Rng rng(31);
  const auto m1 = score_helpers::margin_of(MarginFamily::BinaryProbitLatent, {0.1, 0.2, -0.1});
  const auto m2 = score_helpers::margin_of(MarginFamily::ExponentialLog, {0.4, -0.2, 0.2});
  const auto s = score_helpers::make_null_data({CopulaFamily::Gaussian, 0.4}, m1, m2, 150, 4,
                                               rng);
  const std::string pheno = tmp_path("p5.tsv"), geno = tmp_path("g5.tsv");
  dump_dataset(s, pheno, geno, iota_order(150), iota_order(150));
  write_file(tmp_path("cfg5.toml"), "[test]\nweights=uniform\nseed=9\n");
  const std::string out = tmp_path("out5.json");
  const std::string cmd = std::string(CBMAT_BIN) + " test --config " + tmp_path("cfg5.toml") +
                          " --pheno " + pheno + " --geno " + geno +
                          " --trait1 y1 --trait1-type binary --trait2 y2 --covars sex,age" +
                          " --out " + out + " >/dev/null 2>&1";
  REQUIRE(std::system(cmd.c_str()) == 0);
  const json doc = json::parse(slurp(out));
  CHECK(doc["inputs"]["weights"] == "uniform");
  CHECK(doc["inputs"]["seed"] == 9);
  CHECK(doc["fit"]["margin1"]["family"] == "probit");
  CHECK(doc["selection"]["margin2"]["candidates"].size() == 4);
  CHECK(doc["selection"]["copula"]["candidates"].size() == 3);
}

TEST_CASE("frank copula is selected for frank-generated mixed data") {
  // heavy-tailed continuous trait + dichotomized first trait, Frank copula
  int frank_wins = 0;
  const int reps = 50;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng(1000 + rep);
    const auto m1 = score_helpers::margin_of(MarginFamily::BinaryProbitLatent, {0.2, 0.3, -0.2});
    const auto m2 =
        score_helpers::margin_of(MarginFamily::StudentTIdentity, {0.5, -0.3, 0.4}, 1.0, 3);
    const CopulaSpec cop{CopulaFamily::Frank, tau_to_theta(CopulaFamily::Frank, 0.5)};
    const auto s = score_helpers::make_null_data(cop, m1, m2, 800, 4, rng);
    SelectionReport report;
    try {
      const NullFit fit = select_model(
          s.y1, s.y2, s.X, {MarginFamily::BinaryProbitLatent},
          {MarginFamily::GaussianIdentity, MarginFamily::StudentTIdentity},
          {CopulaFamily::Gaussian, CopulaFamily::Frank, CopulaFamily::Clayton}, true, &report);
      if (fit.copula.family == CopulaFamily::Frank) ++frank_wins;
    } catch (const std::exception&) {
      // counted as a non-win
    }
  }
  CHECK(frank_wins >= 40);
}
