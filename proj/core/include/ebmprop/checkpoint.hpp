#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ebmprop/mdn.hpp"
#include "ebmprop/nn.hpp"
#include "ebmprop/trainer.hpp"

namespace ebmprop {

// Versioned structured-text (JSON) document holding the network configs and
// flat parameter arrays at full round-trip precision: reloading reproduces
// energy evaluations bitwise.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  std::string kind;  // "joint_head" | "distill" | "energy_only"
  std::optional<EnergyNetConfig> ebm_config;
  std::vector<double> ebm_params;
  std::optional<MdnHeadConfig> head_config;
  std::vector<double> head_params;
  std::optional<MdnNetConfig> mdn_config;
  std::vector<double> mdn_params;
  std::vector<double> noise_sigmas;  // provenance for fixed-noise runs

  std::string tool_version;
  std::string config_hash;
  uint64_t seed = 0;

  bool has_proposal() const { return head_config.has_value() || mdn_config.has_value(); }
};

Checkpoint checkpoint_from(const TrainedModel& model, const std::string& config_hash,
                           uint64_t seed, const std::vector<double>& noise_sigmas = {});

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

EnergyNet restore_energy_net(const Checkpoint& ckpt);
MdnHead restore_mdn_head(const Checkpoint& ckpt);
MdnNet restore_mdn_net(const Checkpoint& ckpt);

}  // namespace ebmprop
