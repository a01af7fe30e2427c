#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ebmprop/rng.hpp"
#include "ebmprop/tensor.hpp"

namespace ebmprop {

// Proposal draws with their self-normalized importance weights for one input.
struct WeightedSamples {
  Tensor samples;              // [M, D]
  std::vector<double> log_f;   // energies at the samples
  std::vector<double> log_q;   // proposal log-densities
  std::vector<double> weights; // softmax(log_f - log_q); sums to 1
  double ess = 0.0;            // 1 / sum(w^2), in [1, M]

  int size() const { return static_cast<int>(weights.size()); }
};

// w_m = softmax_m(f_m - log q_m), computed with max-shift; ess = 1/sum w^2.
WeightedSamples snis_weights(Tensor samples, std::vector<double> f_vals,
                             std::vector<double> logq_vals);

// sum_m w_m xi(y_m)
double snis_expectation(const WeightedSamples& ws,
                        const std::function<double(std::span<const double>)>& xi);

struct MomentEstimate {
  std::vector<double> mean;      // per dimension
  std::vector<double> variance;  // E[y^2] - E[y]^2 per dimension
};
MomentEstimate snis_mean_var(const WeightedSamples& ws);

// n draws with replacement from the samples, each taken with its weight;
// approximate draws from the energy model itself.
Tensor ebm_resample(const WeightedSamples& ws, int n, Rng& rng);

}  // namespace ebmprop
