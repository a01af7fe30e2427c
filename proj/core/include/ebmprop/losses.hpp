#pragma once

#include <span>
#include <vector>

#include "ebmprop/autodiff.hpp"
#include "ebmprop/mdn.hpp"
#include "ebmprop/rng.hpp"
#include "ebmprop/tensor.hpp"

namespace ebmprop {

// One minibatch worth of energies and proposal log-densities, assembled on a
// tape. All importance ratios are formed in log space; log q entries are
// expected to already carry the kLogQClamp lower clamp.
struct LossBatch {
  int batch = 0;    // B
  int samples = 0;  // M

  Var f_samples;          // [B,M] energies at proposal samples, attached to theta
  Var f_targets;          // [B] energies at the true targets, attached to theta
  Var logq_samples;       // [B,M] attached to phi (empty handle if unavailable)
  Var logq_samples_det;   // [B,M] detached
  Var logq_targets;       // [B] attached to phi (distillation NLL term)
  Var logq_targets_det;   // [B] detached (classification target term)

  bool has(const Var& v) const { return v.tape() != nullptr; }
};

// Importance-sampled negative log-likelihood:
//   mean_i [ logsumexp_m(f(x_i, y_i^(m)) - log q(y_i^(m))) - ln M - f(x_i, y_i) ].
// Trains theta; log q enters detached.
Var loss_is_nll(Tape& tape, const LossBatch& batch);

// Proposal objective: the first term of the loss above with the energies
// detached, differentiable only through log q. Its phi-gradient is the
// sampled estimator of grad_phi KL(ebm || proposal).
Var loss_kl(Tape& tape, const LossBatch& batch);

// Softmax cross-entropy distinguishing the true target (entry 0) from the M
// proposal samples:
//   -mean_i [ (f_0 - log q_0) - logsumexp_{m=0..M}(f_m - log q_m) ].
// Always >= 0; all log q entries detached.
Var loss_nce(Tape& tape, const LossBatch& batch);

// Distillation objective for stand-alone mixture networks:
//   0.5 * loss_kl + 0.5 * mean_i( -log q(y_i | x_i) ).
Var loss_mdn_distill(Tape& tape, const LossBatch& batch);

// Hand-designed noise distribution: equal-weight Gaussian mixture centered at
// the true target, q(y) = (1/K) sum_k N(y; y_i, sigma_k^2 I).
struct NoiseBaseline {
  std::vector<double> sigmas;

  // the conventional two-component choice sigma_2 = 8 * sigma_1
  static NoiseBaseline from_sigma1(double sigma1) {
    return {{sigma1, 8.0 * sigma1}};
  }

  void validate() const;
  double log_q(std::span<const double> center, std::span<const double> y) const;
  // M draws centered at `center` appended as rows of out starting at row0.
  void sample(std::span<const double> center, int M, Rng& rng, Tensor& out,
              int row0) const;
};

// log q under the noise baseline for a batch of centers [B,D] and evaluation
// points [B*M, D] -> [B, M].
Tensor noise_baseline_logq(const NoiseBaseline& noise, const Tensor& centers,
                           const Tensor& y, int M);

}  // namespace ebmprop
