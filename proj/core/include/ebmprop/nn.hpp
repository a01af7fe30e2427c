#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ebmprop/autodiff.hpp"
#include "ebmprop/rng.hpp"
#include "ebmprop/tensor.hpp"

namespace ebmprop {

enum class Activation { kRelu, kTanh };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct MlpConfig {
  std::vector<int> layer_widths;  // input, hidden..., output
  Activation activation = Activation::kRelu;
  uint64_t seed = 0;

  void validate() const;  // at least one hidden layer, widths positive
};

struct ParamTensor {
  std::string name;
  Tensor value;
};

// Fully-connected network. Parameters persist across iterations; each
// iteration binds them onto a fresh tape.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(MlpConfig cfg);

  const MlpConfig& config() const { return cfg_; }
  int in_dim() const { return cfg_.layer_widths.front(); }
  int out_dim() const { return cfg_.layer_widths.back(); }
  int n_layers() const { return static_cast<int>(cfg_.layer_widths.size()) - 1; }

  std::vector<ParamTensor>& params() { return params_; }
  const std::vector<ParamTensor>& params() const { return params_; }

  struct Bound {
    std::vector<Var> vars;  // aligned with params()
  };
  Bound bind(Tape& tape) const;

  // input [B, in_dim] -> [B, out_dim]; activation applied between layers,
  // and after the final layer iff activate_final.
  Var forward(Tape& tape, const Bound& bound, Var input, bool activate_final) const;

  std::vector<Tensor> collect_grads(const Bound& bound) const;

 private:
  MlpConfig cfg_;
  std::vector<ParamTensor> params_;  // W0, b0, W1, b1, ...
};

// Scalar energy network f(x, y): separate feature branches for the input and
// the target, concatenated into a scalar head.
struct EnergyNetConfig {
  MlpConfig x_branch;  // x_dim -> ... -> feature_dim (activated output)
  MlpConfig y_branch;  // y_dim -> ... -> feature_dim (activated output)
  MlpConfig head;      // x_feat + y_feat -> ... -> 1 (linear output)

  // x -> two layers -> R^feature, y -> two layers -> R^feature,
  // concat -> two layers -> scalar.
  static EnergyNetConfig standard(int x_dim, int y_dim, int feature_dim, int hidden,
                                  Activation act, uint64_t seed);

  void validate() const;
};

class EnergyNet {
 public:
  EnergyNet() = default;
  explicit EnergyNet(EnergyNetConfig cfg);

  const EnergyNetConfig& config() const { return cfg_; }
  int x_dim() const { return x_branch_.in_dim(); }
  int y_dim() const { return y_branch_.in_dim(); }
  int feature_dim() const { return x_branch_.out_dim(); }

  struct Bound {
    Mlp::Bound x, y, head;
  };
  Bound bind(Tape& tape) const;

  // [B, x_dim] -> [B, feature_dim]
  Var features(Tape& tape, const Bound& bound, const Tensor& x) const;
  Var features(Tape& tape, const Bound& bound, Var x) const;

  // Energies for M targets per batch row. h_x [B, feat], y [B*M, y_dim]
  // (row b*M+m pairs with batch row b) -> [B, M].
  Var energy(Tape& tape, const Bound& bound, Var h_x, const Tensor& y, int M) const;

  // Energies at one target per row: [B].
  Var energy_single(Tape& tape, const Bound& bound, Var h_x, const Tensor& y) const;

  std::vector<ParamTensor*> params();
  std::vector<const ParamTensor*> params() const;
  std::vector<Tensor> collect_grads(const Bound& bound) const;

 private:
  EnergyNetConfig cfg_;
  Mlp x_branch_, y_branch_, head_;
};

// Value-level evaluation (no gradients): energies of M targets per row.
// x [B, x_dim], y [B*M, y_dim] -> [B, M].
Tensor energy_forward(const EnergyNet& net, const Tensor& x, const Tensor& y, int M);

// Value-level feature extraction: x [B, x_dim] -> [B, feature_dim].
Tensor energy_features(const EnergyNet& net, const Tensor& x);

// Row evaluator used by grid-based evaluation: energies of many y values for
// one scalar x. Shared feature pass per row.
using EnergyRowFn =
    std::function<std::vector<double>(double x, const std::vector<double>& ys)>;
EnergyRowFn energy_row_fn(const EnergyNet& net);

// --- parameter flattening (checkpoints) -------------------------------------
std::vector<double> flatten_params(const std::vector<const ParamTensor*>& params);
std::vector<double> flatten_params(const std::vector<ParamTensor*>& params);
void unflatten_params(const std::vector<ParamTensor*>& params,
                      const std::vector<double>& flat);

// --- Adam --------------------------------------------------------------------
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class GradPolicy { kStrict, kLenient };

class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig cfg, std::vector<ParamTensor*> params);

  // Bias-corrected update. Non-finite gradients throw under kStrict and skip
  // the step (returning false) under kLenient.
  bool step(const std::vector<Tensor>& grads, GradPolicy policy = GradPolicy::kStrict);

  int64_t step_count() const { return t_; }
  int64_t skipped_steps() const { return skipped_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<ParamTensor*> params_;
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
  int64_t skipped_ = 0;
};

}  // namespace ebmprop
