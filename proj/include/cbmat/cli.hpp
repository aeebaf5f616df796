#pragma once

// Batch front end: delimited-text ingestion, run configuration, test and
// simulation execution, machine-readable outputs.

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "cbmat/sim_harness.hpp"

namespace cbmat {

struct RunConfig {
  enum class Mode { Test, Simulate };
  Mode mode = Mode::Test;

  // test mode
  std::string pheno_path, geno_path;
  std::string trait1, trait2;
  std::string trait1_type = "continuous";  // "binary" or "continuous"
  std::vector<std::string> covars;
  std::string copula = "auto";   // auto | gaussian | frank | clayton
  std::string margins = "auto";  // auto | "<family1>,<family2>"
  std::vector<double> rho_grid;  // empty = default grid
  std::string weights = "beta";  // beta | uniform
  std::uint64_t seed = 1;
  std::string out_path;
  int resampling_check = 0;

  // simulate mode
  std::string preset;    // table2 | table4 (empty = explicit scenario)
  std::string scenario;  // e.g. gaussian_tau0.20
  ScenarioSpec sim = ScenarioSpec::reference_defaults();
  std::string fit_copula = "true";   // true | auto | <family>
  std::string fit_margins = "true";  // true | auto
  std::string pvalues_out;           // optional per-replicate CSV
  int threads = 0;
};

struct IngestResult {
  std::vector<std::string> ids;
  Eigen::VectorXd y1, y2;
  Eigen::MatrixXd X;  // intercept first
  Eigen::MatrixXd G;
  Eigen::VectorXd maf;
  std::vector<std::string> variant_names;
  long dropped_subjects = 0;          // missing phenotype/covariate rows
  long imputed_dosages = 0;           // NA genotypes imputed to the column mean
  std::vector<std::string> dropped_variants;  // zero-MAF columns
};

/// Inner join of phenotype and genotype files on the leading id column.
IngestResult ingest(const std::string& pheno_path, const std::string& geno_path,
                    const RunConfig& cfg);

/// Executes the configured run and writes its artifacts; returns the
/// process exit code (0 on success). Failures are also written as a JSON
/// error document when an output path is configured.
int run_cli(const RunConfig& cfg);

}  // namespace cbmat
