#include "ebmprop/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "ebmprop/version.hpp"

namespace ebmprop {

namespace {

using nlohmann::json;

json mlp_config_to_json(const MlpConfig& cfg) {
  return json{{"widths", cfg.layer_widths},
              {"activation", activation_name(cfg.activation)},
              {"seed", cfg.seed}};
}

MlpConfig mlp_config_from_json(const json& j) {
  MlpConfig cfg;
  cfg.layer_widths = j.at("widths").get<std::vector<int>>();
  cfg.activation = activation_from_name(j.at("activation").get<std::string>());
  cfg.seed = j.at("seed").get<uint64_t>();
  return cfg;
}

json head_config_to_json(const MdnHeadConfig& cfg) {
  return json{{"in_dim", cfg.in_dim},
              {"hidden", cfg.hidden},
              {"K", cfg.K},
              {"D", cfg.D},
              {"activation", activation_name(cfg.activation)},
              {"seed", cfg.seed},
              {"sigma_floor", cfg.sigma_floor}};
}

MdnHeadConfig head_config_from_json(const json& j) {
  MdnHeadConfig cfg;
  cfg.in_dim = j.at("in_dim").get<int>();
  cfg.hidden = j.at("hidden").get<int>();
  cfg.K = j.at("K").get<int>();
  cfg.D = j.at("D").get<int>();
  cfg.activation = activation_from_name(j.at("activation").get<std::string>());
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.sigma_floor = j.at("sigma_floor").get<double>();
  return cfg;
}

}  // namespace

Checkpoint checkpoint_from(const TrainedModel& model, const std::string& config_hash,
                           uint64_t seed, const std::vector<double>& noise_sigmas) {
  Checkpoint ckpt;
  ckpt.tool_version = kVersion;
  ckpt.config_hash = config_hash;
  ckpt.seed = seed;
  ckpt.noise_sigmas = noise_sigmas;
  if (model.ebm) {
    ckpt.ebm_config = model.ebm->config();
    ckpt.ebm_params = flatten_params(model.ebm->params());
  }
  if (model.proposal_head) {
    ckpt.kind = "joint_head";
    ckpt.head_config = model.proposal_head->config();
    ckpt.head_params = flatten_params(model.proposal_head->params());
  } else if (model.proposal_net) {
    ckpt.kind = "distill";
    ckpt.mdn_config = model.proposal_net->config();
    ckpt.mdn_params = flatten_params(model.proposal_net->params());
  } else {
    ckpt.kind = "energy_only";
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json j;
  j["format"] = "ebmprop-checkpoint";
  j["format_version"] = Checkpoint::kFormatVersion;
  j["tool_version"] = ckpt.tool_version.empty() ? kVersion : ckpt.tool_version;
  j["config_hash"] = ckpt.config_hash;
  j["seed"] = ckpt.seed;
  j["kind"] = ckpt.kind;
  if (ckpt.ebm_config) {
    j["energy_net"] = {{"x_branch", mlp_config_to_json(ckpt.ebm_config->x_branch)},
                       {"y_branch", mlp_config_to_json(ckpt.ebm_config->y_branch)},
                       {"head", mlp_config_to_json(ckpt.ebm_config->head)},
                       {"params", ckpt.ebm_params}};
  }
  if (ckpt.head_config) {
    json h = head_config_to_json(*ckpt.head_config);
    h["params"] = ckpt.head_params;
    j["proposal_head"] = h;
  }
  if (ckpt.mdn_config) {
    j["mdn_net"] = {{"trunk", mlp_config_to_json(ckpt.mdn_config->trunk)},
                    {"head", head_config_to_json(ckpt.mdn_config->head)},
                    {"params", ckpt.mdn_params}};
  }
  if (!ckpt.noise_sigmas.empty()) j["noise_sigmas"] = ckpt.noise_sigmas;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump(1) << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint parse error in " + path + ": " + e.what());
  }
  if (j.value("format", "") != "ebmprop-checkpoint")
    throw std::runtime_error("not an ebmprop checkpoint: " + path);
  if (j.at("format_version").get<int>() != Checkpoint::kFormatVersion)
    throw std::runtime_error("unsupported checkpoint format version in " + path);

  Checkpoint ckpt;
  ckpt.tool_version = j.value("tool_version", "");
  ckpt.config_hash = j.value("config_hash", "");
  ckpt.seed = j.value("seed", uint64_t{0});
  ckpt.kind = j.at("kind").get<std::string>();
  if (j.contains("energy_net")) {
    const json& e = j["energy_net"];
    EnergyNetConfig cfg;
    cfg.x_branch = mlp_config_from_json(e.at("x_branch"));
    cfg.y_branch = mlp_config_from_json(e.at("y_branch"));
    cfg.head = mlp_config_from_json(e.at("head"));
    ckpt.ebm_config = cfg;
    ckpt.ebm_params = e.at("params").get<std::vector<double>>();
  }
  if (j.contains("proposal_head")) {
    ckpt.head_config = head_config_from_json(j["proposal_head"]);
    ckpt.head_params = j["proposal_head"].at("params").get<std::vector<double>>();
  }
  if (j.contains("mdn_net")) {
    MdnNetConfig cfg;
    cfg.trunk = mlp_config_from_json(j["mdn_net"].at("trunk"));
    cfg.head = head_config_from_json(j["mdn_net"].at("head"));
    ckpt.mdn_config = cfg;
    ckpt.mdn_params = j["mdn_net"].at("params").get<std::vector<double>>();
  }
  if (j.contains("noise_sigmas"))
    ckpt.noise_sigmas = j["noise_sigmas"].get<std::vector<double>>();
  return ckpt;
}

EnergyNet restore_energy_net(const Checkpoint& ckpt) {
  if (!ckpt.ebm_config)
    throw std::runtime_error("checkpoint has no energy network");
  EnergyNet net(*ckpt.ebm_config);
  unflatten_params(net.params(), ckpt.ebm_params);
  return net;
}

MdnHead restore_mdn_head(const Checkpoint& ckpt) {
  if (!ckpt.head_config)
    throw std::runtime_error("checkpoint has no proposal head");
  MdnHead head(*ckpt.head_config);
  unflatten_params(head.params(), ckpt.head_params);
  return head;
}

MdnNet restore_mdn_net(const Checkpoint& ckpt) {
  if (!ckpt.mdn_config)
    throw std::runtime_error("checkpoint has no mixture network");
  MdnNet net(*ckpt.mdn_config);
  unflatten_params(net.params(), ckpt.mdn_params);
  return net;
}

}  // namespace ebmprop
