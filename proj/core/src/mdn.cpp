#include "ebmprop/mdn.hpp"

#include <cmath>
#include <stdexcept>

namespace ebmprop {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
}

void MixtureParams::validate() const {
  const int B = weights.rows();
  if (weights.cols() != K || means.rows() != B || means.cols() != K * D ||
      !means.same_shape(sigmas))
    throw std::invalid_argument("MixtureParams: inconsistent shapes");
  for (int b = 0; b < B; ++b) {
    double s = 0.0;
    for (int k = 0; k < K; ++k) {
      if (weights(b, k) < 0.0)
        throw std::invalid_argument("MixtureParams: negative weight");
      s += weights(b, k);
    }
    if (std::abs(s - 1.0) > 1e-12)
      throw std::invalid_argument("MixtureParams: weights do not sum to 1");
  }
  for (double s : sigmas.span())
    if (!(s > 0.0)) throw std::invalid_argument("MixtureParams: non-positive sigma");
}

MixtureParams mixture_params_from_raw(const Tensor& logits, const Tensor& means,
                                      const Tensor& log_sigma2, double sigma_floor) {
  const int B = logits.rows();
  const int K = logits.cols();
  if (means.rows() != B || log_sigma2.rows() != B || means.cols() != log_sigma2.cols() ||
      means.cols() % K != 0)
    throw std::invalid_argument("mixture_params_from_raw: shape mismatch");
  MixtureParams p;
  p.K = K;
  p.D = means.cols() / K;
  p.weights = Tensor::matrix(B, K);
  p.means = means;
  p.sigmas = log_sigma2;
  for (int b = 0; b < B; ++b) {
    double mx = logits(b, 0);
    for (int k = 1; k < K; ++k) mx = std::max(mx, logits(b, k));
    double s = 0.0;
    for (int k = 0; k < K; ++k) {
      p.weights(b, k) = std::exp(logits(b, k) - mx);
      s += p.weights(b, k);
    }
    for (int k = 0; k < K; ++k) p.weights(b, k) /= s;
  }
  for (int64_t i = 0; i < p.sigmas.numel(); ++i)
    p.sigmas[i] = std::max(std::exp(0.5 * log_sigma2[i]), sigma_floor);
  return p;
}

Tensor mdn_log_prob(const MixtureParams& params, const Tensor& y, int M) {
  const int B = params.batch();
  const int K = params.K;
  const int D = params.D;
  if (y.rows() != B * M || y.cols() != D)
    throw std::invalid_argument("mdn_log_prob: y shape " + y.shape_str());
  Tensor out = Tensor::matrix(B, M);
  std::vector<double> comp(static_cast<size_t>(K));
  for (int b = 0; b < B; ++b) {
    for (int m = 0; m < M; ++m) {
      const int row = b * M + m;
      double amax = -1e308;
      for (int k = 0; k < K; ++k) {
        double a = std::log(params.weights(b, k));
        for (int d = 0; d < D; ++d) {
          const double sig = params.sigmas(b, k * D + d);
          const double z = (y(row, d) - params.means(b, k * D + d)) / sig;
          a += -0.5 * kLogTwoPi - std::log(sig) - 0.5 * z * z;
        }
        comp[static_cast<size_t>(k)] = a;
        amax = std::max(amax, a);
      }
      double se = 0.0;
      for (int k = 0; k < K; ++k) se += std::exp(comp[static_cast<size_t>(k)] - amax);
      out(b, m) = amax + std::log(se);
    }
  }
  return out;
}

MdnSamples mdn_sample(const MixtureParams& params, int M, Rng& rng) {
  if (M < 1) throw std::invalid_argument("mdn_sample: M must be >= 1");
  const int B = params.batch();
  const int K = params.K;
  const int D = params.D;
  MdnSamples s;
  s.y = Tensor::matrix(B * M, D);
  std::vector<double> cum(static_cast<size_t>(K));
  for (int b = 0; b < B; ++b) {
    double acc = 0.0;
    for (int k = 0; k < K; ++k) {
      acc += params.weights(b, k);
      cum[static_cast<size_t>(k)] = acc;
    }
    for (int m = 0; m < M; ++m) {
      const int k = rng.categorical_from_cumulative(cum);
      const int row = b * M + m;
      for (int d = 0; d < D; ++d)
        s.y(row, d) = rng.normal(params.means(b, k * D + d), params.sigmas(b, k * D + d));
    }
  }
  s.log_q = mdn_log_prob(params, s.y, M);
  return s;
}

void MdnHeadConfig::validate() const {
  if (in_dim <= 0 || hidden <= 0 || K <= 0 || D <= 0)
    throw std::invalid_argument("MdnHeadConfig: dims must be positive");
  if (!(sigma_floor > 0.0))
    throw std::invalid_argument("MdnHeadConfig: sigma_floor must be positive");
}

MdnHead::MdnHead(MdnHeadConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  mean_head_ = Mlp({{cfg_.in_dim, cfg_.hidden, cfg_.K * cfg_.D},
                    cfg_.activation,
                    derive_seed(cfg_.seed, 11)});
  sigma_head_ = Mlp({{cfg_.in_dim, cfg_.hidden, cfg_.K * cfg_.D},
                     cfg_.activation,
                     derive_seed(cfg_.seed, 12)});
  weight_head_ = Mlp(
      {{cfg_.in_dim, cfg_.hidden, cfg_.K}, cfg_.activation, derive_seed(cfg_.seed, 13)});

  // Temper the raw outputs: fan-in init on the final layers puts log sigma^2
  // in the tens, i.e. scales around e^15, and sampling such a proposal feeds
  // the energy branch million-scale targets. Start at uniform weights and
  // unit scales instead, with a small random mean spread breaking the
  // symmetry between components.
  auto zero_last_layer = [](Mlp& mlp) {
    auto& ps = mlp.params();
    ps[ps.size() - 2].value.fill(0.0);
    ps[ps.size() - 1].value.fill(0.0);
  };
  zero_last_layer(sigma_head_);
  zero_last_layer(weight_head_);
  zero_last_layer(mean_head_);
  Rng bias_rng(derive_seed(cfg_.seed, 14));
  Tensor& mean_bias = mean_head_.params().back().value;
  for (int64_t i = 0; i < mean_bias.numel(); ++i) mean_bias[i] = bias_rng.uniform(-1.0, 1.0);
}

MdnHead::Bound MdnHead::bind(Tape& tape) const {
  return {mean_head_.bind(tape), sigma_head_.bind(tape), weight_head_.bind(tape)};
}

MdnHead::RawVars MdnHead::forward(Tape& tape, const Bound& bound, Var h_x) const {
  RawVars raw;
  raw.means = mean_head_.forward(tape, bound.mean, h_x, /*activate_final=*/false);
  raw.log_sigma2 = sigma_head_.forward(tape, bound.sigma, h_x, /*activate_final=*/false);
  raw.logits = weight_head_.forward(tape, bound.weight, h_x, /*activate_final=*/false);
  return raw;
}

std::vector<ParamTensor*> MdnHead::params() {
  std::vector<ParamTensor*> out;
  for (auto& p : mean_head_.params()) out.push_back(&p);
  for (auto& p : sigma_head_.params()) out.push_back(&p);
  for (auto& p : weight_head_.params()) out.push_back(&p);
  return out;
}

std::vector<const ParamTensor*> MdnHead::params() const {
  std::vector<const ParamTensor*> out;
  for (const auto& p : mean_head_.params()) out.push_back(&p);
  for (const auto& p : sigma_head_.params()) out.push_back(&p);
  for (const auto& p : weight_head_.params()) out.push_back(&p);
  return out;
}

std::vector<Tensor> MdnHead::collect_grads(const Bound& bound) const {
  std::vector<Tensor> grads = mean_head_.collect_grads(bound.mean);
  for (auto& g : sigma_head_.collect_grads(bound.sigma)) grads.push_back(std::move(g));
  for (auto& g : weight_head_.collect_grads(bound.weight)) grads.push_back(std::move(g));
  return grads;
}

MdnNetConfig MdnNetConfig::standard(int x_dim, int feature_dim, int hidden, int K, int D,
                                    Activation act, uint64_t seed) {
  MdnNetConfig cfg;
  cfg.trunk = {{x_dim, hidden, feature_dim}, act, derive_seed(seed, 21)};
  cfg.head = {feature_dim, hidden, K, D, act, derive_seed(seed, 22), kSigmaFloor};
  return cfg;
}

void MdnNetConfig::validate() const {
  trunk.validate();
  head.validate();
  if (trunk.layer_widths.back() != head.in_dim)
    throw std::invalid_argument("MdnNetConfig: trunk output != head input");
}

MdnNet::MdnNet(MdnNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  trunk_ = Mlp(cfg_.trunk);
  head_ = MdnHead(cfg_.head);
}

MdnNet::Bound MdnNet::bind(Tape& tape) const {
  return {trunk_.bind(tape), head_.bind(tape)};
}

MdnHead::RawVars MdnNet::forward(Tape& tape, const Bound& bound, const Tensor& x) const {
  Var h = trunk_.forward(tape, bound.trunk, tape.constant(x), /*activate_final=*/true);
  return head_.forward(tape, bound.head, h);
}

std::vector<ParamTensor*> MdnNet::params() {
  std::vector<ParamTensor*> out;
  for (auto& p : trunk_.params()) out.push_back(&p);
  for (auto* p : head_.params()) out.push_back(p);
  return out;
}

std::vector<const ParamTensor*> MdnNet::params() const {
  std::vector<const ParamTensor*> out;
  for (const auto& p : trunk_.params()) out.push_back(&p);
  for (const auto* p : head_.params()) out.push_back(p);
  return out;
}

std::vector<Tensor> MdnNet::collect_grads(const Bound& bound) const {
  std::vector<Tensor> grads = trunk_.collect_grads(bound.trunk);
  for (auto& g : head_.collect_grads(bound.head)) grads.push_back(std::move(g));
  return grads;
}

MixtureParams mdn_params(const MdnHead& head, const Tensor& h_x) {
  Tape tape;
  auto bound = head.bind(tape);
  auto raw = head.forward(tape, bound, tape.constant(h_x));
  return mixture_params_from_raw(raw.logits.value(), raw.means.value(),
                                 raw.log_sigma2.value(), head.config().sigma_floor);
}

MixtureParams mdn_params(const MdnNet& net, const Tensor& x) {
  Tape tape;
  auto bound = net.bind(tape);
  auto raw = net.forward(tape, bound, x);
  return mixture_params_from_raw(raw.logits.value(), raw.means.value(),
                                 raw.log_sigma2.value(), net.config().head.sigma_floor);
}

}  // namespace ebmprop
