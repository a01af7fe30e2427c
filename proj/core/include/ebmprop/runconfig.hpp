#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "ebmprop/bench.hpp"
#include "ebmprop/trainer.hpp"

namespace ebmprop {

// Run configuration file: JSON with sections generator / model / training /
// eval / output. Unknown keys are rejected with the offending key named.
struct RunConfig {
  // generator
  std::string generator = "bimodal-split";
  int n_train = 2000;
  int n_test = 1000;
  uint64_t data_seed = 1;

  // model
  int mixture_k = 4;
  int hidden = 10;
  int feature = 10;
  std::string activation = "relu";

  // training
  TrainConfig train;

  // eval
  std::string nll_grid;  // "min:max:n"; empty selects the generator default
  int kl_x_points = 128;
  int kl_y_points = 2048;

  // output
  std::string out_dir;

  TrainConfig to_train_config() const;
  EvalGrid default_nll_grid() const;
  EvalGrid kl_y_grid() const;
  std::vector<double> kl_x_grid() const;
};

RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text, const std::string& origin);

// Canonical serialized form used for hashing; stable field order.
std::string run_config_canonical(const RunConfig& cfg);

uint64_t fnv1a64(std::string_view bytes);
std::string to_hex(uint64_t v);
std::string config_hash(const RunConfig& cfg);

// Default output directory: EBMPROP_OUT_DIR if set, else ".".
std::string default_out_dir();

}  // namespace ebmprop
