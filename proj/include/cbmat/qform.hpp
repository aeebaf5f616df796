#pragma once

// Distribution of Q = sum_i lambda_i chi^2_1: Davies' characteristic
// function inversion with a four-moment fallback.

#include <vector>

namespace cbmat {

struct DaviesResult {
  double cdf = -1.0;   // P(Q < q)
  int fault = 0;       // 0 ok; 1 accuracy not achieved; 2 round-off;
                       // 3 invalid parameters; 4 integration failure
  double abs_error = 0.0;
};

/// Davies (1980) algorithm for P(sum lambda_j chi^2_{df_j}(nc_j) + sigma Z < q).
DaviesResult davies_cdf(const std::vector<double>& lambda, const std::vector<double>& nc,
                        const std::vector<int>& df, double sigma, double q,
                        int lim = 100000, double acc = 1e-9);

/// Four-moment (noncentral chi-square) survival approximation.
double moment_match_survival(const std::vector<double>& lambda, double q);

struct QformPvalue {
  double p = 1.0;
  bool davies_ok = true;  // false when the moment fallback was used
};

/// P(sum lambda_i chi^2_1 > q), all lambda >= 0 and not all zero.
QformPvalue qform_survival(const std::vector<double>& lambda, double q);

}  // namespace cbmat
