#include "ebmprop/runconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ebmprop {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& section, const std::string& prefix,
                         std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : section.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) {
        ok = true;
        break;
      }
    if (!ok)
      throw std::invalid_argument("config parse error: unknown key \"" + prefix + key +
                                  "\"");
  }
}

}  // namespace

TrainConfig RunConfig::to_train_config() const {
  TrainConfig cfg = train;
  cfg.mixture_k = mixture_k;
  cfg.model.hidden = hidden;
  cfg.model.feature_dim = feature;
  cfg.model.activation = activation_from_name(activation);
  return cfg;
}

EvalGrid RunConfig::default_nll_grid() const {
  if (!nll_grid.empty()) return EvalGrid::parse(nll_grid);
  auto gt = make_ground_truth(generator);
  return EvalGrid{gt->y_min(), gt->y_max(), 8192};
}

EvalGrid RunConfig::kl_y_grid() const {
  auto gt = make_ground_truth(generator);
  return EvalGrid{gt->y_min(), gt->y_max(), kl_y_points};
}

std::vector<double> RunConfig::kl_x_grid() const {
  auto gt = make_ground_truth(generator);
  return uniform_midpoints(gt->x_min(), gt->x_max(), kl_x_points);
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config_text(ss.str(), path);
}

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config parse error in " + origin + ": " + e.what());
  }
  reject_unknown_keys(j, "", {"generator", "model", "training", "eval", "output"});

  RunConfig cfg;
  if (j.contains("generator")) {
    const json& g = j["generator"];
    reject_unknown_keys(g, "generator.", {"id", "n_train", "n_test", "seed"});
    cfg.generator = g.value("id", cfg.generator);
    cfg.n_train = g.value("n_train", cfg.n_train);
    cfg.n_test = g.value("n_test", cfg.n_test);
    cfg.data_seed = g.value("seed", cfg.data_seed);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown_keys(m, "model.", {"K", "hidden", "feature", "activation"});
    cfg.mixture_k = m.value("K", cfg.mixture_k);
    cfg.hidden = m.value("hidden", cfg.hidden);
    cfg.feature = m.value("feature", cfg.feature);
    cfg.activation = m.value("activation", cfg.activation);
  }
  if (j.contains("training")) {
    const json& t = j["training"];
    reject_unknown_keys(t, "training.",
                        {"epochs", "batch_size", "m", "lr", "seed", "objective", "mode",
                         "sigma1", "noise_sigmas", "distill_kl_coeff",
                         "distill_nll_coeff", "strict", "grad_clip", "grad_clip_norm"});
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.samples_m = t.value("m", cfg.train.samples_m);
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.seed = t.value("seed", cfg.train.seed);
    if (t.contains("objective"))
      cfg.train.objective = objective_from_name(t["objective"].get<std::string>());
    if (t.contains("mode"))
      cfg.train.mode = train_mode_from_name(t["mode"].get<std::string>());
    cfg.train.sigma1 = t.value("sigma1", cfg.train.sigma1);
    if (t.contains("noise_sigmas"))
      cfg.train.noise_sigmas = t["noise_sigmas"].get<std::vector<double>>();
    cfg.train.distill_kl_coeff = t.value("distill_kl_coeff", cfg.train.distill_kl_coeff);
    cfg.train.distill_nll_coeff =
        t.value("distill_nll_coeff", cfg.train.distill_nll_coeff);
    cfg.train.strict = t.value("strict", cfg.train.strict);
    cfg.train.grad_clip = t.value("grad_clip", cfg.train.grad_clip);
    cfg.train.grad_clip_norm = t.value("grad_clip_norm", cfg.train.grad_clip_norm);
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    reject_unknown_keys(e, "eval.", {"grid", "kl_x_points", "kl_y_points"});
    cfg.nll_grid = e.value("grid", cfg.nll_grid);
    cfg.kl_x_points = e.value("kl_x_points", cfg.kl_x_points);
    cfg.kl_y_points = e.value("kl_y_points", cfg.kl_y_points);
  }
  if (j.contains("output")) {
    const json& o = j["output"];
    reject_unknown_keys(o, "output.", {"dir"});
    cfg.out_dir = o.value("dir", cfg.out_dir);
  }
  if (cfg.out_dir.empty()) cfg.out_dir = default_out_dir();
  cfg.to_train_config().validate();
  make_ground_truth(cfg.generator);  // rejects unknown generators
  return cfg;
}

std::string run_config_canonical(const RunConfig& cfg) {
  json j;
  j["generator"] = {{"id", cfg.generator},
                    {"n_train", cfg.n_train},
                    {"n_test", cfg.n_test},
                    {"seed", cfg.data_seed}};
  j["model"] = {{"K", cfg.mixture_k},
                {"hidden", cfg.hidden},
                {"feature", cfg.feature},
                {"activation", cfg.activation}};
  j["training"] = {{"epochs", cfg.train.epochs},
                   {"batch_size", cfg.train.batch_size},
                   {"m", cfg.train.samples_m},
                   {"lr", cfg.train.lr},
                   {"seed", cfg.train.seed},
                   {"objective", objective_name(cfg.train.objective)},
                   {"mode", train_mode_name(cfg.train.mode)},
                   {"sigma1", cfg.train.sigma1},
                   {"noise_sigmas", cfg.train.noise_sigmas},
                   {"distill_kl_coeff", cfg.train.distill_kl_coeff},
                   {"distill_nll_coeff", cfg.train.distill_nll_coeff},
                   {"strict", cfg.train.strict},
                   {"grad_clip", cfg.train.grad_clip},
                   {"grad_clip_norm", cfg.train.grad_clip_norm}};
  j["eval"] = {{"grid", cfg.nll_grid},
               {"kl_x_points", cfg.kl_x_points},
               {"kl_y_points", cfg.kl_y_points}};
  // output paths intentionally excluded: they do not affect results
  return j.dump();
}

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::string config_hash(const RunConfig& cfg) {
  return to_hex(fnv1a64(run_config_canonical(cfg)));
}

std::string default_out_dir() {
  const char* env = std::getenv("EBMPROP_OUT_DIR");
  return env && *env ? env : ".";
}

}  // namespace ebmprop
