#include "ebmprop/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace ebmprop {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

void require_samples(const LossBatch& batch, const char* op) {
  if (batch.samples < 1)
    throw std::invalid_argument(std::string(op) + ": M = 0");
}

}  // namespace

Var loss_is_nll(Tape& tape, const LossBatch& batch) {
  require_samples(batch, "loss_is_nll");
  Var ratio = tape.sub(batch.f_samples, batch.logq_samples_det);
  Var lse = tape.logsumexp_rows(ratio);
  Var per_example = tape.sub(lse, batch.f_targets);
  return tape.scale_add(tape.mean(per_example), 1.0,
                        -std::log(static_cast<double>(batch.samples)));
}

Var loss_kl(Tape& tape, const LossBatch& batch) {
  require_samples(batch, "loss_kl");
  if (!batch.has(batch.logq_samples))
    throw std::invalid_argument("loss_kl: attached log q is required");
  Var ratio = tape.sub(tape.stop_gradient(batch.f_samples), batch.logq_samples);
  Var lse = tape.logsumexp_rows(ratio);
  return tape.scale_add(tape.mean(lse), 1.0,
                        -std::log(static_cast<double>(batch.samples)));
}

Var loss_nce(Tape& tape, const LossBatch& batch) {
  require_samples(batch, "loss_nce");
  if (!batch.has(batch.logq_targets_det))
    throw std::invalid_argument("loss_nce: missing log q(y_i)");
  const int B = batch.batch;
  Var target_score = tape.sub(batch.f_targets, batch.logq_targets_det);  // [B]
  Var sample_scores = tape.sub(batch.f_samples, batch.logq_samples_det);  // [B,M]
  Var all_scores =
      tape.concat_cols(tape.reshape(target_score, B, 1, 2), sample_scores);
  Var lse = tape.logsumexp_rows(all_scores);  // [B]
  return tape.mean(tape.sub(lse, target_score));
}

Var loss_mdn_distill(Tape& tape, const LossBatch& batch) {
  if (!batch.has(batch.logq_targets))
    throw std::invalid_argument("loss_mdn_distill: attached log q(y_i) is required");
  Var kl_half = tape.scale_add(loss_kl(tape, batch), 0.5);
  Var nll_half = tape.scale_add(tape.mean(batch.logq_targets), -0.5);
  return tape.add(kl_half, nll_half);
}

void NoiseBaseline::validate() const {
  if (sigmas.empty())
    throw std::invalid_argument("NoiseBaseline: at least one sigma required");
  for (double s : sigmas)
    if (!(s > 0.0)) throw std::invalid_argument("NoiseBaseline: sigmas must be positive");
}

double NoiseBaseline::log_q(std::span<const double> center,
                            std::span<const double> y) const {
  const int K = static_cast<int>(sigmas.size());
  const int D = static_cast<int>(center.size());
  double amax = -1e308;
  double comp[2];
  std::vector<double> heap;
  double* a = comp;
  if (K > 2) {
    heap.resize(static_cast<size_t>(K));
    a = heap.data();
  }
  for (int k = 0; k < K; ++k) {
    const double sig = sigmas[static_cast<size_t>(k)];
    double lp = -std::log(static_cast<double>(K));
    for (int d = 0; d < D; ++d) {
      const double z = (y[static_cast<size_t>(d)] - center[static_cast<size_t>(d)]) / sig;
      lp += -0.5 * kLogTwoPi - std::log(sig) - 0.5 * z * z;
    }
    a[k] = lp;
    amax = std::max(amax, lp);
  }
  double se = 0.0;
  for (int k = 0; k < K; ++k) se += std::exp(a[k] - amax);
  return amax + std::log(se);
}

void NoiseBaseline::sample(std::span<const double> center, int M, Rng& rng, Tensor& out,
                           int row0) const {
  const int K = static_cast<int>(sigmas.size());
  const int D = static_cast<int>(center.size());
  for (int m = 0; m < M; ++m) {
    const int k = std::min(static_cast<int>(rng.u01() * K), K - 1);
    for (int d = 0; d < D; ++d)
      out(row0 + m, d) = rng.normal(center[static_cast<size_t>(d)],
                                    sigmas[static_cast<size_t>(k)]);
  }
}

Tensor noise_baseline_logq(const NoiseBaseline& noise, const Tensor& centers,
                           const Tensor& y, int M) {
  noise.validate();
  const int B = centers.rows();
  const int D = centers.cols();
  if (y.rows() != B * M || y.cols() != D)
    throw std::invalid_argument("noise_baseline_logq: y shape " + y.shape_str());
  Tensor out = Tensor::matrix(B, M);
  for (int b = 0; b < B; ++b) {
    std::span<const double> c{centers.data() + static_cast<size_t>(b) * D,
                              static_cast<size_t>(D)};
    for (int m = 0; m < M; ++m) {
      const int row = b * M + m;
      std::span<const double> yy{y.data() + static_cast<size_t>(row) * D,
                                 static_cast<size_t>(D)};
      out(b, m) = noise.log_q(c, yy);
    }
  }
  return out;
}

}  // namespace ebmprop
