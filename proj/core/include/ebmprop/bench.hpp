#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ebmprop/mdn.hpp"
#include "ebmprop/nn.hpp"
#include "ebmprop/rng.hpp"

namespace ebmprop {

// --- analytic densities -------------------------------------------------------

struct GaussianMixture1D {
  std::vector<double> weights, means, sigmas;

  int K() const { return static_cast<int>(weights.size()); }
  double log_pdf(double y) const;
  double pdf(double y) const;
  double sample(Rng& rng) const;
  double mean() const;
  double variance() const;
};

// Conditional density with an evaluable log-density, an exact sampler and a
// quadrature support; every generator in this module produces one of these.
class GroundTruthDensity {
 public:
  virtual ~GroundTruthDensity() = default;

  virtual std::string id() const = 0;
  virtual std::string params_desc() const = 0;
  virtual GaussianMixture1D conditional(double x) const = 0;
  virtual double x_min() const = 0;
  virtual double x_max() const = 0;
  // quadrature support for the targets
  virtual double y_min() const = 0;
  virtual double y_max() const = 0;

  double log_density(double x, double y) const { return conditional(x).log_pdf(y); }
  double sample_x(Rng& rng) const;
  double sample_y(double x, Rng& rng) const;
};

// x ~ U[-3,3]; for x < 0, y ~ N(sin(2x), 0.15^2); for x >= 0 the density
// splits into 0.5 N(0.8x, 0.1^2) + 0.5 N(-0.8x, 0.3^2). Multimodal and
// heteroscedastic over half the input range.
class BimodalSplitDensity final : public GroundTruthDensity {
 public:
  std::string id() const override { return "bimodal-split"; }
  std::string params_desc() const override;
  GaussianMixture1D conditional(double x) const override;
  double x_min() const override { return -3.0; }
  double x_max() const override { return 3.0; }
  double y_min() const override { return -4.5; }
  double y_max() const override { return 4.5; }
};

// x ~ U[-4,4]; y ~ 1/3 N(4 sin x, 0.4^2) + 1/3 N(-x, 1) + 1/3 C where C is a
// heavy-tailed Gaussian scale mixture at the origin,
// C = 0.4 N(0, 0.4^2) + 0.4 N(0, 1.2^2) + 0.2 N(0, 3.0^2).
class HeavyMultimodalDensity final : public GroundTruthDensity {
 public:
  std::string id() const override { return "heavy-multimodal"; }
  std::string params_desc() const override;
  GaussianMixture1D conditional(double x) const override;
  double x_min() const override { return -4.0; }
  double x_max() const override { return 4.0; }
  double y_min() const override { return -12.5; }
  double y_max() const override { return 12.5; }
};

std::unique_ptr<GroundTruthDensity> make_ground_truth(const std::string& id);
std::vector<std::string> known_generators();

// --- datasets -------------------------------------------------------------------

struct Dataset {
  std::string generator;
  std::string params_desc;
  uint64_t seed = 0;
  std::vector<double> x, y;

  int size() const { return static_cast<int>(x.size()); }
  Tensor x_tensor() const;  // [N,1]
  Tensor y_tensor() const;  // [N,1]
};

Dataset gen_dataset(const std::string& generator_id, int n, uint64_t seed);

// plain text: header line, then one "x y" pair per line
void save_dataset(const std::string& path, const Dataset& data,
                  const std::string& config_hash);
Dataset load_dataset(const std::string& path);

// --- evaluation grids -------------------------------------------------------------

// Uniform midpoint grid on [y_min, y_max]: point(i) = y_min + (i + 0.5) step.
struct EvalGrid {
  double y_min = 0.0, y_max = 1.0;
  int n_points = 0;

  void validate() const;
  double step() const { return (y_max - y_min) / n_points; }
  double point(int i) const { return y_min + (i + 0.5) * step(); }
  std::vector<double> points() const;

  // "min:max:n" with n the point count
  static EvalGrid parse(const std::string& flag);
  std::string str() const;
};

std::vector<double> uniform_midpoints(double lo, double hi, int n);

// Grid-approximated negative log-likelihood:
//   log Z(x_i) ~= logsumexp_g f(x_i, y_g) + ln(step),
//   NLL = mean_i (log Z(x_i) - f(x_i, y_i)).
// Targets outside the grid are clamped to its edge and counted.
double eval_nll_grid(const EnergyRowFn& energy, const Dataset& data,
                     const EvalGrid& grid, int* clamped_count = nullptr);

// Mean over x of KL(ground truth || grid-normalized energy density), both
// densities normalized on the same midpoint grid. Tiny negative quadrature
// noise is clamped to 0 (values below -1e-8 are an error).
double eval_kl_ground_truth(const EnergyRowFn& energy, const GroundTruthDensity& gt,
                            const std::vector<double>& x_grid, const EvalGrid& y_grid);

// --- KL-gradient oracle -----------------------------------------------------------

// 1D analytic energy with quadrature support.
struct AnalyticEnergy1D {
  std::function<double(double)> f;
  double y_min = 0.0, y_max = 1.0;
};

// Proposal family for the oracle: a 1D Gaussian mixture parameterized by raw
// values phi = (logits[K], means[K], log_sigma2[K]).
struct MixtureProposal1D {
  int K = 1;
  std::vector<double> phi;

  void validate() const;
  GaussianMixture1D mixture(double sigma_floor = kSigmaFloor) const;
  MixtureParams batch_params(double sigma_floor = kSigmaFloor) const;  // B=1
};

struct KlGradOracleReport {
  std::vector<double> oracle;     // central differences of quadrature KL
  std::vector<double> estimator;  // mean over R draws of the sampled gradient
  std::vector<double> std_err;    // standard error of that mean, per coordinate
  std::vector<double> rel_err;    // |e - o| / max(|o|, floor)
  double max_rel_err = 0.0;
  int M = 0, R = 0;

  // Relative error with a Monte Carlo allowance: coordinates whose oracle
  // value sits below the estimator's own 3-sigma noise floor are measured
  // against that floor instead of their tiny magnitude.
  double max_rel_err_noise_adjusted(double tol = 0.05) const;
};

// Compares the expectation of the sampled KL-gradient estimator against
// central finite differences of the quadrature-computed KL(p || q_phi).
// rel_floor_frac scales the largest oracle coordinate into the denominator
// floor guarding near-zero coordinates.
KlGradOracleReport kl_grad_oracle(const AnalyticEnergy1D& ebm,
                                  const MixtureProposal1D& proposal, int M, int R,
                                  uint64_t seed, int quad_points = 4096,
                                  double fd_step = 1e-4,
                                  double rel_floor_frac = 0.02);

// Quadrature KL(p || q) between an analytic energy density and a mixture.
double quadrature_kl_energy_vs_mixture(const AnalyticEnergy1D& ebm,
                                       const GaussianMixture1D& q, int quad_points);

}  // namespace ebmprop
