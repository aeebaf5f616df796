#include "cbmat/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace cbmat {

namespace {

using nlohmann::json;

bool is_na(const std::string& tok) {
  return tok.empty() || tok == "NA" || tok == "na" || tok == "Na" || tok == "NaN" ||
         tok == "nan";
}

char sniff_delimiter(const std::string& header) {
  if (header.find('\t') != std::string::npos) return '\t';
  if (header.find(',') != std::string::npos) return ',';
  if (header.find(';') != std::string::npos) return ';';
  return ' ';
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  if (delim == ' ') {
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
  }
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<long> line_numbers;
};

Table read_delimited(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  Table t;
  std::string line;
  long line_no = 0;
  char delim = ' ';
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    if (t.header.empty()) {
      delim = sniff_delimiter(line);
      t.header = split_line(line, delim);
      continue;
    }
    t.rows.push_back(split_line(line, delim));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw std::runtime_error("empty file: " + path);
  return t;
}

std::size_t column_index(const Table& t, const std::string& name, const std::string& path) {
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (t.header[j] == name) return j;
  throw std::runtime_error("column '" + name + "' not found in " + path);
}

}  // namespace

IngestResult ingest(const std::string& pheno_path, const std::string& geno_path,
                    const RunConfig& cfg) {
  const Table pheno = read_delimited(pheno_path);
  const Table geno = read_delimited(geno_path);
  if (pheno.header.size() < 2) throw std::runtime_error("phenotype file needs id + columns");
  if (geno.header.size() < 2) throw std::runtime_error("genotype file needs id + dosages");

  const std::size_t c1 = column_index(pheno, cfg.trait1, pheno_path);
  const std::size_t c2 = column_index(pheno, cfg.trait2, pheno_path);
  std::vector<std::size_t> ccov;
  for (const std::string& name : cfg.covars) ccov.push_back(column_index(pheno, name, pheno_path));

  struct PhenoRow {
    double y1, y2;
    std::vector<double> covs;
  };
  std::map<std::string, PhenoRow> pheno_by_id;
  long dropped = 0;
  for (std::size_t i = 0; i < pheno.rows.size(); ++i) {
    const auto& row = pheno.rows[i];
    if (row.size() != pheno.header.size())
      throw std::runtime_error(pheno_path + ": line " + std::to_string(pheno.line_numbers[i]) +
                               " has " + std::to_string(row.size()) + " fields, expected " +
                               std::to_string(pheno.header.size()));
    PhenoRow pr;
    bool missing = is_na(row[c1]) || is_na(row[c2]);
    for (std::size_t k : ccov) missing = missing || is_na(row[k]);
    if (missing) {
      ++dropped;
      continue;
    }
    try {
      pr.y1 = std::stod(row[c1]);
      pr.y2 = std::stod(row[c2]);
      for (std::size_t k : ccov) pr.covs.push_back(std::stod(row[k]));
    } catch (const std::exception&) {
      throw std::runtime_error(pheno_path + ": unparseable numeric field at line " +
                               std::to_string(pheno.line_numbers[i]));
    }
    pheno_by_id[row[0]] = std::move(pr);
  }

  struct GenoRow {
    std::vector<double> dose;  // NaN = missing
  };
  std::map<std::string, GenoRow> geno_by_id;
  const std::size_t n_var = geno.header.size() - 1;
  for (std::size_t i = 0; i < geno.rows.size(); ++i) {
    const auto& row = geno.rows[i];
    if (row.size() != geno.header.size())
      throw std::runtime_error(geno_path + ": line " + std::to_string(geno.line_numbers[i]) +
                               " has " + std::to_string(row.size()) + " fields, expected " +
                               std::to_string(geno.header.size()));
    GenoRow gr;
    gr.dose.resize(n_var);
    for (std::size_t j = 0; j < n_var; ++j) {
      const std::string& tok = row[j + 1];
      if (is_na(tok)) {
        gr.dose[j] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double v;
      try {
        v = std::stod(tok);
      } catch (const std::exception&) {
        throw std::runtime_error(geno_path + ": line " + std::to_string(geno.line_numbers[i]) +
                                 ": unparseable dosage '" + tok + "'");
      }
      if (v != 0.0 && v != 1.0 && v != 2.0)
        throw std::runtime_error(geno_path + ": line " + std::to_string(geno.line_numbers[i]) +
                                 ": dosage '" + tok + "' is not one of {0,1,2}");
      gr.dose[j] = v;
    }
    geno_by_id[row[0]] = std::move(gr);
  }

  // Inner join, ordered by id (row order of the inputs is irrelevant).
  std::vector<std::string> ids;
  for (const auto& [id, _] : pheno_by_id)
    if (geno_by_id.count(id)) ids.push_back(id);
  if (ids.size() < 30)
    throw std::runtime_error("join produced only " + std::to_string(ids.size()) +
                             " subjects (need at least 30)");

  const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  IngestResult out;
  out.ids = ids;
  out.dropped_subjects = dropped;
  out.y1.resize(n);
  out.y2.resize(n);
  out.X.resize(n, static_cast<Eigen::Index>(ccov.size()) + 1);
  Eigen::MatrixXd g_raw(n, static_cast<Eigen::Index>(n_var));
  for (Eigen::Index i = 0; i < n; ++i) {
    const PhenoRow& pr = pheno_by_id[ids[i]];
    out.y1[i] = pr.y1;
    out.y2[i] = pr.y2;
    out.X(i, 0) = 1.0;
    for (std::size_t k = 0; k < pr.covs.size(); ++k)
      out.X(i, static_cast<Eigen::Index>(k) + 1) = pr.covs[k];
    const GenoRow& gr = geno_by_id[ids[i]];
    for (std::size_t j = 0; j < n_var; ++j) g_raw(i, static_cast<Eigen::Index>(j)) = gr.dose[j];
  }

  // Mean-dosage imputation, then MAF from dosage means; drop monomorphic
  // columns (dosage mean of 0 or 2 leaves no minor-allele variation).
  std::vector<Eigen::Index> keep;
  std::vector<double> mafs;
  for (Eigen::Index j = 0; j < g_raw.cols(); ++j) {
    double sum = 0.0;
    long count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!std::isnan(g_raw(i, j))) {
        sum += g_raw(i, j);
        ++count;
      }
    }
    const double mean = count > 0 ? sum / count : 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::isnan(g_raw(i, j))) {
        g_raw(i, j) = mean;
        ++out.imputed_dosages;
      }
    }
    const double maf = mean / 2.0;
    if (maf <= 0.0 || maf >= 1.0) {
      out.dropped_variants.push_back(geno.header[j + 1]);
      continue;
    }
    keep.push_back(j);
    mafs.push_back(maf);
  }
  if (keep.empty()) throw std::runtime_error("no variants left after dropping zero-MAF columns");
  out.G.resize(n, static_cast<Eigen::Index>(keep.size()));
  out.maf.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.G.col(static_cast<Eigen::Index>(j)) = g_raw.col(keep[j]);
    out.maf[static_cast<Eigen::Index>(j)] = mafs[j];
    out.variant_names.push_back(geno.header[keep[j] + 1]);
  }
  return out;
}

namespace {

constexpr int kSchemaVersion = 1;

std::vector<MarginFamily> continuous_margin_menu() {
  return {MarginFamily::GaussianIdentity, MarginFamily::GammaLog,
          MarginFamily::ExponentialLog, MarginFamily::StudentTIdentity};
}

json selection_to_json(const std::vector<CandidateRecord>& records) {
  json arr = json::array();
  for (const auto& rec : records) {
    json item{{"candidate", rec.label}, {"ok", rec.ok}};
    if (rec.ok) {
      item["aic"] = rec.aic;
      item["loglik"] = rec.loglik;
      item["converged"] = rec.converged;
    } else {
      item["error"] = rec.error;
    }
    arr.push_back(item);
  }
  return arr;
}

json result_to_json(const RunConfig& cfg, const IngestResult& data, const TestResult& res) {
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["timestamp"] = static_cast<long>(
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  doc["inputs"] = {{"pheno", cfg.pheno_path},
                   {"geno", cfg.geno_path},
                   {"subjects", data.ids.size()},
                   {"variants", data.G.cols()},
                   {"dropped_subjects", data.dropped_subjects},
                   {"imputed_dosages", data.imputed_dosages},
                   {"dropped_variants", data.dropped_variants},
                   {"trait1", cfg.trait1},
                   {"trait2", cfg.trait2},
                   {"trait1_type", cfg.trait1_type},
                   {"covariates", cfg.covars},
                   {"weights", cfg.weights},
                   {"seed", cfg.seed}};

  const NullFit& fit = res.fit;
  doc["selection"] = {{"margin1",
                       {{"choice", to_string(fit.margin1.family)},
                        {"candidates", selection_to_json(res.selection.margin1)}}},
                      {"margin2",
                       {{"choice", to_string(fit.margin2.family)},
                        {"candidates", selection_to_json(res.selection.margin2)}}},
                      {"copula",
                       {{"choice", to_string(fit.copula.family)},
                        {"candidates", selection_to_json(res.selection.copula)}}}};

  json m1{{"family", to_string(fit.margin1.family)}, {"phi", fit.margin1.phi}};
  json m2{{"family", to_string(fit.margin2.family)}, {"phi", fit.margin2.phi}};
  if (fit.margin1.family == MarginFamily::StudentTIdentity) m1["df"] = fit.margin1.df;
  if (fit.margin2.family == MarginFamily::StudentTIdentity) m2["df"] = fit.margin2.df;
  m1["gamma"] = std::vector<double>(fit.margin1.gamma.data(),
                                    fit.margin1.gamma.data() + fit.margin1.gamma.size());
  m2["gamma"] = std::vector<double>(fit.margin2.gamma.data(),
                                    fit.margin2.gamma.data() + fit.margin2.gamma.size());
  doc["fit"] = {{"copula", to_string(fit.copula.family)},
                {"theta", fit.copula.theta},
                {"kendall_tau", theta_to_tau(fit.copula.family, fit.copula.theta)},
                {"margin1", m1},
                {"margin2", m2},
                {"loglik", fit.loglik},
                {"aic", fit.aic},
                {"free_params", fit.free_params},
                {"converged", fit.converged},
                {"theta_at_boundary", fit.theta_at_boundary}};

  json per_rho = json::array();
  for (std::size_t j = 0; j < res.per_rho.size(); ++j) {
    per_rho.push_back({{"rho", res.per_rho[j].rho},
                       {"Q", res.per_rho[j].Q},
                       {"p", res.p_values[j]}});
  }
  doc["test"] = {{"per_rho", per_rho},
                 {"p_min", res.p_min},
                 {"rho_optimal", res.rho_optimal},
                 {"rho_tie", res.rho_tie},
                 {"p_combined", res.p_combined}};
  if (res.resampling_p >= 0.0) doc["test"]["resampling_p"] = res.resampling_p;

  doc["diagnostics"] = {{"davies_ok", res.davies_ok},
                        {"gamma_repaired", res.gamma_repaired},
                        {"xi_cov_repaired", fit.xi_cov_repaired}};
  return doc;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text << "\n";
}

std::string error_stage(const std::string& what) {
  // Engine errors look like "cbmat[stage]: message".
  const auto open = what.find('[');
  const auto close = what.find(']');
  if (open != std::string::npos && close != std::string::npos && close > open)
    return what.substr(open + 1, close - open - 1);
  return "cli";
}

int fail_with(const RunConfig& cfg, const std::string& what, const std::string& hint) {
  json doc{{"error", {{"stage", error_stage(what)}, {"message", what}, {"hint", hint}}}};
  try {
    write_text(cfg.out_path, doc.dump(2));
  } catch (const std::exception&) {
    std::cerr << doc.dump(2) << "\n";
  }
  std::cerr << "error: " << what << "\n";
  return 1;
}

int run_test_mode(const RunConfig& cfg) {
  IngestResult data;
  try {
    data = ingest(cfg.pheno_path, cfg.geno_path, cfg);
  } catch (const std::exception& e) {
    return fail_with(cfg, std::string("cbmat[ingest]: ") + e.what(),
                     "check file paths, column names, and dosage coding");
  }
  try {
    ModelOptions options;
    options.mixed = cfg.trait1_type == "binary";
    if (cfg.margins == "auto") {
      options.margin1_candidates =
          options.mixed ? std::vector<MarginFamily>{MarginFamily::BinaryProbitLatent}
                        : continuous_margin_menu();
      options.margin2_candidates = continuous_margin_menu();
    } else {
      const auto comma = cfg.margins.find(',');
      if (comma == std::string::npos)
        throw std::runtime_error("--margins expects 'auto' or '<family1>,<family2>'");
      options.margin1_candidates = {margin_family_from_string(cfg.margins.substr(0, comma))};
      options.margin2_candidates = {margin_family_from_string(cfg.margins.substr(comma + 1))};
    }
    if (options.mixed &&
        options.margin1_candidates.front() != MarginFamily::BinaryProbitLatent)
      throw std::runtime_error("binary trait1 requires the probit margin");
    if (cfg.copula == "auto")
      options.copula_candidates = {CopulaFamily::Gaussian, CopulaFamily::Frank,
                                   CopulaFamily::Clayton};
    else
      options.copula_candidates = {copula_family_from_string(cfg.copula)};
    options.seed = cfg.seed;
    options.resampling_replicates = cfg.resampling_check;

    KernelConfig kernel =
        cfg.weights == "uniform"
            ? KernelConfig::uniform(data.G.cols(),
                                    cfg.rho_grid.empty() ? KernelConfig::default_rho_grid()
                                                         : cfg.rho_grid)
            : KernelConfig::beta_maf(data.maf, cfg.rho_grid.empty()
                                                   ? KernelConfig::default_rho_grid()
                                                   : cfg.rho_grid);

    const TestResult res = run_cbmat(data.y1, data.y2, data.X, data.G, kernel, options);
    write_text(cfg.out_path, result_to_json(cfg, data, res).dump(2));
    return 0;
  } catch (const std::exception& e) {
    return fail_with(cfg, e.what(), "see the stage label for the failing pipeline step");
  }
}

ScenarioSpec scenario_from_preset(const RunConfig& cfg) {
  ScenarioSpec s = cfg.sim;
  if (cfg.preset == "table2") {
    s.margin1 = MarginFamily::ExponentialLog;
    s.margin2 = MarginFamily::ExponentialLog;
  } else if (cfg.preset == "table4") {
    s.margin1 = MarginFamily::BinaryProbitLatent;
    s.margin2 = MarginFamily::ExponentialLog;
  } else if (!cfg.preset.empty()) {
    throw std::runtime_error("unknown preset '" + cfg.preset + "' (expected table2|table4)");
  }
  if (!cfg.scenario.empty()) {
    const auto pos = cfg.scenario.find("_tau");
    if (pos == std::string::npos)
      throw std::runtime_error("scenario key must look like '<copula>_tau<value>'");
    s.copula = copula_family_from_string(cfg.scenario.substr(0, pos));
    s.tau = std::stod(cfg.scenario.substr(pos + 4));
  }
  s.causal_fraction = cfg.sim.causal_fraction;
  s.h2 = cfg.sim.h2;
  return s;
}

int run_simulate_mode(const RunConfig& cfg) {
  try {
    ScenarioSpec scen = scenario_from_preset(cfg);
    if (scen.replicates <= 0) scen.replicates = 2000;
    scen.seed = cfg.seed;

    ModelOptions options;
    options.mixed = scen.mixed();
    if (cfg.fit_margins == "auto") {
      options.margin1_candidates =
          options.mixed ? std::vector<MarginFamily>{MarginFamily::BinaryProbitLatent}
                        : continuous_margin_menu();
      options.margin2_candidates = continuous_margin_menu();
    } else {
      options.margin1_candidates = {scen.margin1};
      options.margin2_candidates = {scen.margin2};
    }
    if (cfg.fit_copula == "true")
      options.copula_candidates = {scen.copula};
    else if (cfg.fit_copula == "auto")
      options.copula_candidates = {CopulaFamily::Gaussian, CopulaFamily::Frank,
                                   CopulaFamily::Clayton};
    else
      options.copula_candidates = {copula_family_from_string(cfg.fit_copula)};
    options.seed = cfg.seed;

    const ExperimentSummary sum =
        run_experiment(scen, cbmat_runner(options), cfg.threads);

    std::ostringstream tsv;
    tsv << "scenario\tpreset\tcopula\ttau\tmargin1\tmargin2\tn\tr\tv\tpleiotropy\th2\t"
           "alpha\treplicates\tvalid\tfailures\trejections\trate\tci_low\tci_high\tseed\n";
    tsv << (cfg.scenario.empty() ? "explicit" : cfg.scenario) << '\t'
        << (cfg.preset.empty() ? "none" : cfg.preset) << '\t' << to_string(scen.copula)
        << '\t' << scen.tau << '\t' << to_string(scen.margin1) << '\t'
        << to_string(scen.margin2) << '\t' << scen.n << '\t' << scen.r << '\t'
        << scen.causal_fraction << '\t' << scen.pleiotropy << '\t' << scen.h2 << '\t'
        << scen.alpha << '\t' << sum.replicates << '\t' << sum.valid << '\t' << sum.failures
        << '\t' << sum.rejections << '\t' << sum.rate << '\t' << sum.ci.lower << '\t'
        << sum.ci.upper << '\t' << scen.seed;
    write_text(cfg.out_path, tsv.str());

    if (!cfg.pvalues_out.empty()) {
      std::ostringstream csv;
      csv << "replicate,p\n";
      for (std::size_t i = 0; i < sum.p_values.size(); ++i) {
        if (std::isnan(sum.p_values[i]))
          csv << i << ",NA\n";
        else
          csv << i << ',' << sum.p_values[i] << '\n';
      }
      std::string text = csv.str();
      text.pop_back();  // trailing newline added by write_text
      write_text(cfg.pvalues_out, text);
    }
    return 0;
  } catch (const std::exception& e) {
    return fail_with(cfg, e.what(), "check the scenario/preset flags");
  }
}

}  // namespace

int run_cli(const RunConfig& cfg) {
  return cfg.mode == RunConfig::Mode::Test ? run_test_mode(cfg) : run_simulate_mode(cfg);
}

}  // namespace cbmat
