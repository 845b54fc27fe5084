#pragma once

#include <string>
#include <vector>

namespace icl {

// Monte Carlo mean with its standard error. The per-episode samples are kept
// so that predictors scored on the same episodes can be paired.
struct RiskEstimate {
  double mean = 0.0;
  double se = 0.0;
  int J = 0;
  int n = 0;
  std::string predictor;
  std::vector<double> samples;

  static RiskEstimate from_samples(std::vector<double> samples, int n = 0, std::string predictor = {});
};

// Estimate of E[a - b] over shared episodes.
RiskEstimate paired_difference(const RiskEstimate& a, const RiskEstimate& b);

}  // namespace icl
