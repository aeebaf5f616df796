#include <CLI11.hpp>
#include <string>
#include <vector>

#include "cbmat/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"cbmat - copula-based region association test for bivariate phenotypes"};
  app.set_config("--config", "", "TOML-style key=value config file (flags win)");
  app.require_subcommand(1);

  cbmat::RunConfig cfg;

  auto* test = app.add_subcommand("test", "run the association test on real data");
  test->fallthrough();
  test->add_option("--pheno", cfg.pheno_path, "phenotype file (id, traits, covariates)")
      ->required();
  test->add_option("--geno", cfg.geno_path, "genotype file (id, dosages in {0,1,2})")
      ->required();
  test->add_option("--trait1", cfg.trait1, "first trait column name")->required();
  test->add_option("--trait1-type", cfg.trait1_type, "binary|continuous")
      ->check(CLI::IsMember({"binary", "continuous"}));
  test->add_option("--trait2", cfg.trait2, "second trait column name")->required();
  test->add_option("--covars", cfg.covars, "covariate column names")->delimiter(',');
  test->add_option("--copula", cfg.copula, "auto|gaussian|frank|clayton");
  test->add_option("--margins", cfg.margins, "auto or '<family1>,<family2>'");
  test->add_option("--rho-grid", cfg.rho_grid, "rho grid values")->delimiter(',');
  test->add_option("--weights", cfg.weights, "variant weight scheme")
      ->check(CLI::IsMember({"beta", "uniform"}));
  test->add_option("--seed", cfg.seed, "RNG seed");
  test->add_option("--out", cfg.out_path, "output JSON path ('-' for stdout)");
  test->add_option("--resampling-check", cfg.resampling_check,
                   "also compute the resampling min-p with this many replicates");

  auto* sim = app.add_subcommand("simulate", "replicated type-I-error / power experiments");
  sim->fallthrough();
  sim->add_option("--preset", cfg.preset, "table2|table4");
  sim->add_option("--scenario", cfg.scenario, "e.g. gaussian_tau0.20");
  sim->add_option("--replicates", cfg.sim.replicates, "number of replicates");
  sim->add_option("--seed", cfg.seed, "master RNG seed");
  sim->add_option("--out", cfg.out_path, "summary TSV path ('-' for stdout)");
  sim->add_option("--pvalues-out", cfg.pvalues_out, "optional per-replicate p-value CSV");
  sim->add_option("--n", cfg.sim.n, "subjects per replicate");
  sim->add_option("--r", cfg.sim.r, "variants per region");
  sim->add_option("--tau", cfg.sim.tau, "Kendall tau of the generating copula");
  std::string copula_name, margin1_name, margin2_name;
  sim->add_option("--copula", copula_name, "generating copula family");
  sim->add_option("--margin1", margin1_name, "generating family of trait 1");
  sim->add_option("--margin2", margin2_name, "generating family of trait 2");
  sim->add_option("--df1", cfg.sim.df1, "student-t df of trait 1");
  sim->add_option("--df2", cfg.sim.df2, "student-t df of trait 2");
  sim->add_option("--v", cfg.sim.causal_fraction, "fraction of causal variants");
  sim->add_option("--pleiotropy", cfg.sim.pleiotropy, "effect correlation across traits");
  sim->add_option("--h2", cfg.sim.h2, "trait heritability of the region");
  sim->add_option("--alpha", cfg.sim.alpha, "significance threshold");
  sim->add_flag("--resample-mafs", cfg.sim.resample_mafs,
                "redraw the region MAFs for every replicate");
  sim->add_option("--fit-copula", cfg.fit_copula, "true|auto|<family> used when fitting");
  sim->add_option("--fit-margins", cfg.fit_margins, "true|auto used when fitting");
  sim->add_option("--threads", cfg.threads, "worker threads (0 = hardware)");

  cfg.sim = cbmat::ScenarioSpec::reference_defaults();
  cfg.sim.replicates = 0;  // so --replicates presence is detectable

  CLI11_PARSE(app, argc, argv);

  if (test->parsed()) {
    cfg.mode = cbmat::RunConfig::Mode::Test;
  } else {
    cfg.mode = cbmat::RunConfig::Mode::Simulate;
    if (!copula_name.empty()) cfg.sim.copula = cbmat::copula_family_from_string(copula_name);
    if (!margin1_name.empty()) cfg.sim.margin1 = cbmat::margin_family_from_string(margin1_name);
    if (!margin2_name.empty()) cfg.sim.margin2 = cbmat::margin_family_from_string(margin2_name);
  }
  return cbmat::run_cli(cfg);
}
