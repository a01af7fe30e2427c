#pragma once

#include <cstdint>
#include <vector>

#include "ebmprop/autodiff.hpp"
#include "ebmprop/nn.hpp"
#include "ebmprop/rng.hpp"
#include "ebmprop/tensor.hpp"

namespace ebmprop {

// Scale floor keeping components from collapsing onto data points, and the
// lower clamp applied to log q before it enters importance ratios. The floor
// and clamp are additions of this implementation; both are exercised by tests.
inline constexpr double kSigmaFloor = 1e-4;
inline constexpr double kLogQClamp = -80.0;

// Mapped per-input mixture parameters for a batch: weights are probabilities,
// scales are positive (diagonal covariance sigma^2 I per component).
struct MixtureParams {
  int K = 0, D = 0;
  Tensor weights;  // [B, K], rows sum to 1
  Tensor means;    // [B, K*D], component-major
  Tensor sigmas;   // [B, K*D], >= sigma_floor

  int batch() const { return weights.rows(); }
  void validate() const;
};

// Map raw head outputs to valid MixtureParams: softmax over weight logits,
// sigma = max(exp(log_sigma2 / 2), floor).
MixtureParams mixture_params_from_raw(const Tensor& logits, const Tensor& means,
                                      const Tensor& log_sigma2,
                                      double sigma_floor = kSigmaFloor);

// log sum_k pi_k N(y; mu_k, sigma_k^2 I) via max-shifted logsumexp over the
// per-component Gaussian log-pdfs. y is [B*M, D]; returns [B, M].
Tensor mdn_log_prob(const MixtureParams& params, const Tensor& y, int M);

struct MdnSamples {
  Tensor y;      // [B*M, D]; plain values, detached by construction
  Tensor log_q;  // [B, M]
};

// Ancestral sampling: inverse-CDF categorical over the weights (ties toward
// the lower index), then the chosen diagonal Gaussian.
MdnSamples mdn_sample(const MixtureParams& params, int M, Rng& rng);

// --- networks ----------------------------------------------------------------

struct MdnHeadConfig {
  int in_dim = 10;   // feature dimension consumed by the head
  int hidden = 10;
  int K = 4;
  int D = 1;
  Activation activation = Activation::kRelu;
  uint64_t seed = 0;
  double sigma_floor = kSigmaFloor;

  void validate() const;
};

// Mixture-parameter head: three two-layer branches for means, log-variances
// and weight logits, all consuming the same feature vector.
class MdnHead {
 public:
  MdnHead() = default;
  explicit MdnHead(MdnHeadConfig cfg);

  const MdnHeadConfig& config() const { return cfg_; }
  int K() const { return cfg_.K; }
  int D() const { return cfg_.D; }

  struct Bound {
    Mlp::Bound mean, sigma, weight;
  };
  Bound bind(Tape& tape) const;

  struct RawVars {
    Var logits;      // [B, K]
    Var means;       // [B, K*D]
    Var log_sigma2;  // [B, K*D]
  };
  RawVars forward(Tape& tape, const Bound& bound, Var h_x) const;

  std::vector<ParamTensor*> params();
  std::vector<const ParamTensor*> params() const;
  std::vector<Tensor> collect_grads(const Bound& bound) const;

 private:
  MdnHeadConfig cfg_;
  Mlp mean_head_, sigma_head_, weight_head_;
};

struct MdnNetConfig {
  MlpConfig trunk;     // x_dim -> ... -> feature (activated output)
  MdnHeadConfig head;  // feature -> mixture parameters

  static MdnNetConfig standard(int x_dim, int feature_dim, int hidden, int K, int D,
                               Activation act, uint64_t seed);
  void validate() const;
};

// Stand-alone mixture density network with its own feature extractor.
class MdnNet {
 public:
  MdnNet() = default;
  explicit MdnNet(MdnNetConfig cfg);

  const MdnNetConfig& config() const { return cfg_; }
  int K() const { return head_.K(); }
  int D() const { return head_.D(); }
  int x_dim() const { return trunk_.in_dim(); }

  struct Bound {
    Mlp::Bound trunk;
    MdnHead::Bound head;
  };
  Bound bind(Tape& tape) const;

  MdnHead::RawVars forward(Tape& tape, const Bound& bound, const Tensor& x) const;

  std::vector<ParamTensor*> params();
  std::vector<const ParamTensor*> params() const;
  std::vector<Tensor> collect_grads(const Bound& bound) const;

 private:
  MdnNetConfig cfg_;
  Mlp trunk_;
  MdnHead head_;
};

// Value-level parameter prediction (no gradients).
MixtureParams mdn_params(const MdnHead& head, const Tensor& h_x);
MixtureParams mdn_params(const MdnNet& net, const Tensor& x);

}  // namespace ebmprop
