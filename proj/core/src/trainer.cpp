#include "ebmprop/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "ebmprop/version.hpp"

namespace ebmprop {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor gather_rows(const std::vector<double>& v, const std::vector<int>& idx, int lo,
                   int hi) {
  Tensor t = Tensor::matrix(hi - lo, 1);
  for (int i = lo; i < hi; ++i) t[i - lo] = v[static_cast<size_t>(idx[static_cast<size_t>(i)])];
  return t;
}

void clip_grads(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.span()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (auto& g : grads)
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= scale;
}

struct EpochPlan {
  std::vector<int> order;

  EpochPlan(int n, uint64_t run_seed, int epoch) : order(static_cast<size_t>(n)) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(run_seed, 0xe60c + static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
  }
};

}  // namespace

const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kNceLearnedProposal: return "nce_learned_proposal";
    case Objective::kNceFixedNoise: return "nce_fixed_noise";
    case Objective::kIsNll: return "is_nll";
  }
  return "?";
}

Objective objective_from_name(const std::string& name) {
  if (name == "nce_learned_proposal") return Objective::kNceLearnedProposal;
  if (name == "nce_fixed_noise") return Objective::kNceFixedNoise;
  if (name == "is_nll") return Objective::kIsNll;
  throw std::invalid_argument("unknown objective: " + name);
}

const char* train_mode_name(TrainMode m) {
  return m == TrainMode::kJointHead ? "joint_head" : "distill_separate";
}

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "joint_head") return TrainMode::kJointHead;
  if (name == "distill_separate") return TrainMode::kDistillSeparate;
  throw std::invalid_argument("unknown mode: " + name);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (samples_m < 1) throw std::invalid_argument("TrainConfig: M must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (mixture_k < 1) throw std::invalid_argument("TrainConfig: K must be >= 1");
  if (!noise_sigmas.empty()) NoiseBaseline{noise_sigmas}.validate();
  else if (!(sigma1 > 0.0)) throw std::invalid_argument("TrainConfig: sigma1 must be positive");
  if (distill_kl_coeff < 0.0 || distill_nll_coeff < 0.0)
    throw std::invalid_argument("TrainConfig: distill coefficients must be >= 0");
}

NoiseBaseline TrainConfig::noise_baseline() const {
  if (!noise_sigmas.empty()) return NoiseBaseline{noise_sigmas};
  return NoiseBaseline::from_sigma1(sigma1);
}

JointParts assemble_joint_batch(Tape& tape, const EnergyNet& ebm, const MdnHead& head,
                                const Tensor& x, const Tensor& y, int M, Rng& rng) {
  JointParts parts;
  parts.energy_bound = ebm.bind(tape);
  parts.head_bound = head.bind(tape);

  Var h_x = ebm.features(tape, parts.energy_bound, x);
  // the proposal head sees features as constants: its updates must never
  // reach the shared extractor
  Var h_x_det = tape.stop_gradient(h_x);
  MdnHead::RawVars raw = head.forward(tape, parts.head_bound, h_x_det);

  parts.params_values =
      mixture_params_from_raw(raw.logits.value(), raw.means.value(),
                              raw.log_sigma2.value(), head.config().sigma_floor);
  MdnSamples draws = mdn_sample(parts.params_values, M, rng);

  const int B = x.rows();
  LossBatch& batch = parts.batch;
  batch.batch = B;
  batch.samples = M;

  Var y_samples = tape.constant(draws.y);
  Var logq_s = tape.clamp_min(
      tape.mixture_logpdf(raw.logits, raw.means, raw.log_sigma2, y_samples, M,
                          head.config().sigma_floor),
      kLogQClamp);
  batch.logq_samples = logq_s;
  batch.logq_samples_det = tape.stop_gradient(logq_s);

  Var y_targets = tape.constant(y);
  Var logq_t = tape.clamp_min(
      tape.reshape(tape.mixture_logpdf(raw.logits, raw.means, raw.log_sigma2, y_targets,
                                       1, head.config().sigma_floor),
                   B, 1, 1),
      kLogQClamp);
  batch.logq_targets = logq_t;
  batch.logq_targets_det = tape.stop_gradient(logq_t);

  batch.f_samples = ebm.energy(tape, parts.energy_bound, h_x, draws.y, M);
  batch.f_targets = ebm.energy_single(tape, parts.energy_bound, h_x, y);
  return parts;
}

FixedNoiseParts assemble_fixed_noise_batch(Tape& tape, const EnergyNet& ebm,
                                           const NoiseBaseline& noise, const Tensor& x,
                                           const Tensor& y, int M, Rng& rng) {
  noise.validate();
  FixedNoiseParts parts;
  parts.energy_bound = ebm.bind(tape);
  const int B = x.rows();
  const int D = y.cols();

  Tensor samples = Tensor::matrix(B * M, D);
  for (int b = 0; b < B; ++b) {
    std::span<const double> center{y.data() + static_cast<size_t>(b) * D,
                                   static_cast<size_t>(D)};
    noise.sample(center, M, rng, samples, b * M);
  }
  Tensor logq_s = noise_baseline_logq(noise, y, samples, M);
  Tensor logq_t = noise_baseline_logq(noise, y, y, 1).reshaped(B, 1, 1);
  for (int64_t i = 0; i < logq_s.numel(); ++i) logq_s[i] = std::max(logq_s[i], kLogQClamp);
  for (int64_t i = 0; i < logq_t.numel(); ++i) logq_t[i] = std::max(logq_t[i], kLogQClamp);

  LossBatch& batch = parts.batch;
  batch.batch = B;
  batch.samples = M;
  batch.logq_samples_det = tape.constant(logq_s);
  batch.logq_targets_det = tape.constant(logq_t);

  Var h_x = ebm.features(tape, parts.energy_bound, x);
  batch.f_samples = ebm.energy(tape, parts.energy_bound, h_x, samples, M);
  batch.f_targets = ebm.energy_single(tape, parts.energy_bound, h_x, y);
  return parts;
}

DistillParts assemble_distill_batch(Tape& tape, const EnergyNet& ebm, const MdnNet& mdn,
                                    const Tensor& x, const Tensor& y, int M, Rng& rng) {
  DistillParts parts;
  parts.energy_bound = ebm.bind(tape);
  parts.mdn_bound = mdn.bind(tape);

  MdnHead::RawVars raw = mdn.forward(tape, parts.mdn_bound, x);
  const double floor = mdn.config().head.sigma_floor;
  parts.params_values = mixture_params_from_raw(raw.logits.value(), raw.means.value(),
                                                raw.log_sigma2.value(), floor);
  MdnSamples draws = mdn_sample(parts.params_values, M, rng);

  const int B = x.rows();
  LossBatch& batch = parts.batch;
  batch.batch = B;
  batch.samples = M;

  Var y_samples = tape.constant(draws.y);
  Var logq_s = tape.clamp_min(
      tape.mixture_logpdf(raw.logits, raw.means, raw.log_sigma2, y_samples, M, floor),
      kLogQClamp);
  batch.logq_samples = logq_s;
  batch.logq_samples_det = tape.stop_gradient(logq_s);

  Var y_targets = tape.constant(y);
  Var logq_t = tape.clamp_min(
      tape.reshape(
          tape.mixture_logpdf(raw.logits, raw.means, raw.log_sigma2, y_targets, 1, floor),
          B, 1, 1),
      kLogQClamp);
  batch.logq_targets = logq_t;
  batch.logq_targets_det = tape.stop_gradient(logq_t);

  Var h_x = ebm.features(tape, parts.energy_bound, x);
  batch.f_samples = ebm.energy(tape, parts.energy_bound, h_x, draws.y, M);
  batch.f_targets = ebm.energy_single(tape, parts.energy_bound, h_x, y);
  return parts;
}

Var distill_phi_loss(Tape& tape, const LossBatch& batch, double c_kl, double c_nll) {
  if (!batch.has(batch.logq_targets))
    throw std::invalid_argument("distill_phi_loss: attached log q(y_i) is required");
  Var nll_term = tape.scale_add(tape.mean(batch.logq_targets), -c_nll);
  if (c_kl == 0.0) return nll_term;
  return tape.add(tape.scale_add(loss_kl(tape, batch), c_kl), nll_term);
}

namespace {

// Shared epoch/batch skeleton. step() returns the scalar loss value for the
// processed minibatch.
template <typename StepFn>
RunRecord run_epochs(const TrainConfig& cfg, const Dataset& data, StepFn&& step) {
  RunRecord rec;
  rec.seed = cfg.seed;
  const auto t0 = Clock::now();
  const int n = data.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochPlan plan(n, cfg.seed, epoch);
    double loss_sum = 0.0;
    int batches = 0;
    for (int lo = 0; lo < n; lo += cfg.batch_size) {
      const int hi = std::min(n, lo + cfg.batch_size);
      Tensor xb = gather_rows(data.x, plan.order, lo, hi);
      Tensor yb = gather_rows(data.y, plan.order, lo, hi);
      const double loss = step(xb, yb);
      if (!std::isfinite(loss)) {
        rec.failed = true;
        rec.failed_epoch = epoch;
        rec.error = "non-finite loss at epoch " + std::to_string(epoch);
        rec.wall_seconds = seconds_since(t0);
        return rec;
      }
      loss_sum += loss;
      ++batches;
    }
    rec.epoch_loss.push_back(loss_sum / batches);
  }
  rec.wall_seconds = seconds_since(t0);
  return rec;
}

}  // namespace

TrainedModel train_joint(const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  if (cfg.objective == Objective::kNceFixedNoise)
    throw std::invalid_argument("train_joint: fixed-noise objective has no proposal head");

  TrainedModel model;
  model.ebm = EnergyNet(EnergyNetConfig::standard(1, 1, cfg.model.feature_dim,
                                                  cfg.model.hidden, cfg.model.activation,
                                                  derive_seed(cfg.seed, 101)));
  model.proposal_head =
      MdnHead({cfg.model.feature_dim, cfg.model.hidden, cfg.mixture_k, 1,
               cfg.model.activation, derive_seed(cfg.seed, 102), kSigmaFloor});

  std::vector<ParamTensor*> params = model.ebm->params();
  for (auto* p : model.proposal_head->params()) params.push_back(p);
  Adam adam({cfg.lr}, params);
  Rng sample_rng(derive_seed(cfg.seed, 0x5a11));
  const GradPolicy policy = cfg.strict ? GradPolicy::kStrict : GradPolicy::kLenient;

  model.record = run_epochs(cfg, data, [&](const Tensor& xb, const Tensor& yb) {
    Tape tape(cfg.strict);
    JointParts parts =
        assemble_joint_batch(tape, *model.ebm, *model.proposal_head, xb, yb,
                             cfg.samples_m, sample_rng);
    Var theta_loss = cfg.objective == Objective::kIsNll
                         ? loss_is_nll(tape, parts.batch)
                         : loss_nce(tape, parts.batch);
    Var total = tape.add(theta_loss, loss_kl(tape, parts.batch));
    const double value = total.value().item();
    if (!std::isfinite(value)) return value;
    tape.backward(total);
    std::vector<Tensor> grads = model.ebm->collect_grads(parts.energy_bound);
    for (auto& g : model.proposal_head->collect_grads(parts.head_bound))
      grads.push_back(std::move(g));
    if (cfg.grad_clip) clip_grads(grads, cfg.grad_clip_norm);
    adam.step(grads, policy);
    return value;
  });
  return model;
}

TrainedModel train_fixed_noise(const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  if (cfg.objective == Objective::kNceLearnedProposal)
    throw std::invalid_argument(
        "train_fixed_noise: learned-proposal objective requires train_joint");

  TrainedModel model;
  model.ebm = EnergyNet(EnergyNetConfig::standard(1, 1, cfg.model.feature_dim,
                                                  cfg.model.hidden, cfg.model.activation,
                                                  derive_seed(cfg.seed, 101)));
  const NoiseBaseline noise = cfg.noise_baseline();
  Adam adam({cfg.lr}, model.ebm->params());
  Rng sample_rng(derive_seed(cfg.seed, 0x5a11));
  const GradPolicy policy = cfg.strict ? GradPolicy::kStrict : GradPolicy::kLenient;

  model.record = run_epochs(cfg, data, [&](const Tensor& xb, const Tensor& yb) {
    Tape tape(cfg.strict);
    FixedNoiseParts parts =
        assemble_fixed_noise_batch(tape, *model.ebm, noise, xb, yb, cfg.samples_m,
                                   sample_rng);
    Var total = cfg.objective == Objective::kIsNll ? loss_is_nll(tape, parts.batch)
                                                   : loss_nce(tape, parts.batch);
    const double value = total.value().item();
    if (!std::isfinite(value)) return value;
    tape.backward(total);
    std::vector<Tensor> grads = model.ebm->collect_grads(parts.energy_bound);
    if (cfg.grad_clip) clip_grads(grads, cfg.grad_clip_norm);
    adam.step(grads, policy);
    return value;
  });
  return model;
}

TrainedModel train_mdn_distill(const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  TrainedModel model;
  model.proposal_net = MdnNet(
      MdnNetConfig::standard(1, cfg.model.feature_dim, cfg.model.hidden, cfg.mixture_k,
                             1, cfg.model.activation, derive_seed(cfg.seed, 103)));
  const bool pure_nll = cfg.distill_kl_coeff == 0.0;
  const GradPolicy policy = cfg.strict ? GradPolicy::kStrict : GradPolicy::kLenient;

  if (pure_nll) {
    // plain maximum-likelihood training of the mixture network; no energy
    // model, no sampling
    Adam adam({cfg.lr}, model.proposal_net->params());
    model.record = run_epochs(cfg, data, [&](const Tensor& xb, const Tensor& yb) {
      Tape tape(cfg.strict);
      MdnNet::Bound mb = model.proposal_net->bind(tape);
      MdnHead::RawVars raw = model.proposal_net->forward(tape, mb, xb);
      const double floor = model.proposal_net->config().head.sigma_floor;
      Var logq_t = tape.clamp_min(
          tape.reshape(tape.mixture_logpdf(raw.logits, raw.means, raw.log_sigma2,
                                           tape.constant(yb), 1, floor),
                       xb.rows(), 1, 1),
          kLogQClamp);
      Var total = tape.scale_add(tape.mean(logq_t), -cfg.distill_nll_coeff);
      const double value = total.value().item();
      if (!std::isfinite(value)) return value;
      tape.backward(total);
      std::vector<Tensor> grads = model.proposal_net->collect_grads(mb);
      if (cfg.grad_clip) clip_grads(grads, cfg.grad_clip_norm);
      adam.step(grads, policy);
      return value;
    });
    return model;
  }

  model.ebm = EnergyNet(EnergyNetConfig::standard(1, 1, cfg.model.feature_dim,
                                                  cfg.model.hidden, cfg.model.activation,
                                                  derive_seed(cfg.seed, 101)));
  std::vector<ParamTensor*> params = model.ebm->params();
  for (auto* p : model.proposal_net->params()) params.push_back(p);
  Adam adam({cfg.lr}, params);
  Rng sample_rng(derive_seed(cfg.seed, 0x5a11));

  model.record = run_epochs(cfg, data, [&](const Tensor& xb, const Tensor& yb) {
    Tape tape(cfg.strict);
    DistillParts parts = assemble_distill_batch(tape, *model.ebm, *model.proposal_net,
                                                xb, yb, cfg.samples_m, sample_rng);
    Var theta_loss = cfg.objective == Objective::kIsNll ? loss_is_nll(tape, parts.batch)
                                                        : loss_nce(tape, parts.batch);
    Var phi_loss =
        distill_phi_loss(tape, parts.batch, cfg.distill_kl_coeff, cfg.distill_nll_coeff);
    Var total = tape.add(theta_loss, phi_loss);
    const double value = total.value().item();
    if (!std::isfinite(value)) return value;
    tape.backward(total);
    std::vector<Tensor> grads = model.ebm->collect_grads(parts.energy_bound);
    for (auto& g : model.proposal_net->collect_grads(parts.mdn_bound))
      grads.push_back(std::move(g));
    if (cfg.grad_clip) clip_grads(grads, cfg.grad_clip_norm);
    adam.step(grads, policy);
    return value;
  });
  return model;
}

TrainedModel train_run(const TrainConfig& cfg, const Dataset& data) {
  if (cfg.mode == TrainMode::kDistillSeparate) return train_mdn_distill(cfg, data);
  if (cfg.objective == Objective::kNceFixedNoise) return train_fixed_noise(cfg, data);
  return train_joint(cfg, data);
}

double mdn_mean_nll(const MdnNet& net, const Dataset& data) {
  const MixtureParams params = mdn_params(net, data.x_tensor());
  const Tensor logq = mdn_log_prob(params, data.y_tensor(), 1);
  double s = 0.0;
  for (double v : logq.span()) s -= v;
  return s / data.size();
}

double mdn_mean_nll(const EnergyNet& ebm, const MdnHead& head, const Dataset& data) {
  Tape tape;
  EnergyNet::Bound eb = ebm.bind(tape);
  Var h_x = ebm.features(tape, eb, data.x_tensor());
  MixtureParams params = mdn_params(head, h_x.value());
  const Tensor logq = mdn_log_prob(params, data.y_tensor(), 1);
  double s = 0.0;
  for (double v : logq.span()) s -= v;
  return s / data.size();
}

void save_metrics_file(const std::string& path, const RunRecord& record,
                       const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics file: " + path);
  out << "# ebmprop-metrics v1 version=" << kVersion << " config_hash=" << config_hash
      << " seed=" << record.seed << " failed=" << (record.failed ? 1 : 0) << "\n";
  char buf[64];
  for (size_t e = 0; e < record.epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu %.17g", e, record.epoch_loss[e]);
    out << buf << '\n';
  }
  for (const auto& [name, value] : record.final_metrics) {
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    out << "# final " << name << ' ' << buf << '\n';
  }
  if (!out) throw std::runtime_error("failed writing metrics file: " + path);
}

}  // namespace ebmprop
