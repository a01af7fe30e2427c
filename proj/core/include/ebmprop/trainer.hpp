#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ebmprop/bench.hpp"
#include "ebmprop/losses.hpp"
#include "ebmprop/mdn.hpp"
#include "ebmprop/nn.hpp"

namespace ebmprop {

enum class Objective { kNceLearnedProposal, kNceFixedNoise, kIsNll };
enum class TrainMode { kJointHead, kDistillSeparate };

const char* objective_name(Objective o);
Objective objective_from_name(const std::string& name);
const char* train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& name);

struct ModelSpec {
  int feature_dim = 10;
  int hidden = 10;
  Activation activation = Activation::kRelu;
};

struct TrainConfig {
  int epochs = 75;
  int batch_size = 32;
  int samples_m = 1024;  // proposal draws per example per iteration
  double lr = 1e-3;
  uint64_t seed = 1;
  Objective objective = Objective::kNceLearnedProposal;
  TrainMode mode = TrainMode::kJointHead;
  int mixture_k = 4;
  double sigma1 = 0.1;               // fixed-noise baseline; sigma2 = 8*sigma1
  std::vector<double> noise_sigmas;  // overrides sigma1 wiring when non-empty
  double distill_kl_coeff = 0.5;
  double distill_nll_coeff = 0.5;
  bool strict = false;      // non-finite anywhere -> error instead of skip/abort
  bool grad_clip = false;   // off by default
  double grad_clip_norm = 10.0;
  ModelSpec model;

  void validate() const;
  NoiseBaseline noise_baseline() const;
};

struct RunRecord {
  std::vector<double> epoch_loss;  // mean per epoch
  std::map<std::string, double> final_metrics;
  double wall_seconds = 0.0;
  uint64_t seed = 0;
  std::string checkpoint_path;
  bool failed = false;
  int failed_epoch = -1;
  std::string error;
};

struct TrainedModel {
  std::optional<EnergyNet> ebm;
  std::optional<MdnHead> proposal_head;  // joint mode: consumes ebm features
  std::optional<MdnNet> proposal_net;    // distillation: separate full network
  RunRecord record;
};

// Joint loop: predict mixture parameters from detached shared features, draw
// M samples per example, minimize one combined scalar (energy objective +
// proposal objective), single backward pass, one optimizer step over all
// parameters.
TrainedModel train_joint(const TrainConfig& cfg, const Dataset& data);

// Same loop with the hand-designed target-centered noise mixture in place of
// the learned proposal; no proposal parameters exist.
TrainedModel train_fixed_noise(const TrainConfig& cfg, const Dataset& data);

// Distillation: a separate full mixture network is trained toward the energy
// model (plus its own data likelihood) while serving as the energy model's
// noise distribution. With distill_kl_coeff == 0 the loop reduces to plain
// maximum-likelihood training of the mixture network alone.
TrainedModel train_mdn_distill(const TrainConfig& cfg, const Dataset& data);

// Dispatch on cfg.mode / cfg.objective.
TrainedModel train_run(const TrainConfig& cfg, const Dataset& data);

// --- per-iteration assembly (shared with tests) --------------------------------

struct JointParts {
  EnergyNet::Bound energy_bound;
  MdnHead::Bound head_bound;
  MixtureParams params_values;  // mapped mixture parameters used for sampling
  LossBatch batch;
};
JointParts assemble_joint_batch(Tape& tape, const EnergyNet& ebm, const MdnHead& head,
                                const Tensor& x, const Tensor& y, int M, Rng& rng);

struct FixedNoiseParts {
  EnergyNet::Bound energy_bound;
  LossBatch batch;
};
FixedNoiseParts assemble_fixed_noise_batch(Tape& tape, const EnergyNet& ebm,
                                           const NoiseBaseline& noise, const Tensor& x,
                                           const Tensor& y, int M, Rng& rng);

struct DistillParts {
  EnergyNet::Bound energy_bound;
  MdnNet::Bound mdn_bound;
  MixtureParams params_values;
  LossBatch batch;
};
DistillParts assemble_distill_batch(Tape& tape, const EnergyNet& ebm, const MdnNet& mdn,
                                    const Tensor& x, const Tensor& y, int M, Rng& rng);

// c_kl * loss_kl + c_nll * mean(-log q(y_i|x_i)); the 0.5/0.5 instance is the
// standard distillation objective.
Var distill_phi_loss(Tape& tape, const LossBatch& batch, double c_kl, double c_nll);

// Mean negative log-density of targets under the mixture network (exact).
double mdn_mean_nll(const MdnNet& net, const Dataset& data);
double mdn_mean_nll(const EnergyNet& ebm, const MdnHead& head, const Dataset& data);

// one "epoch loss metric" line per epoch, plus a stamped header
void save_metrics_file(const std::string& path, const RunRecord& record,
                       const std::string& config_hash);

}  // namespace ebmprop
