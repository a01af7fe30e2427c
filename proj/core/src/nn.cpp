#include "ebmprop/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ebmprop {

const char* activation_name(Activation a) {
  return a == Activation::kRelu ? "relu" : "tanh";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation: " + name);
}

void MlpConfig::validate() const {
  if (layer_widths.size() < 3)
    throw std::invalid_argument("MlpConfig: need at least one hidden layer");
  for (int w : layer_widths)
    if (w <= 0) throw std::invalid_argument("MlpConfig: widths must be positive");
}

Mlp::Mlp(MlpConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  for (int l = 0; l + 1 < static_cast<int>(cfg_.layer_widths.size()); ++l) {
    const int fan_in = cfg_.layer_widths[l];
    const int fan_out = cfg_.layer_widths[l + 1];
    // uniform fan-in scaling: He-style for relu, Glorot for tanh
    const double limit = cfg_.activation == Activation::kRelu
                             ? std::sqrt(6.0 / fan_in)
                             : std::sqrt(6.0 / (fan_in + fan_out));
    Tensor w = Tensor::matrix(fan_in, fan_out);
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-limit, limit);
    params_.push_back({"W" + std::to_string(l), std::move(w)});
    params_.push_back({"b" + std::to_string(l), Tensor::vector(fan_out)});
  }
}

Mlp::Bound Mlp::bind(Tape& tape) const {
  Bound b;
  b.vars.reserve(params_.size());
  for (const auto& p : params_) b.vars.push_back(tape.leaf(p.value, true));
  return b;
}

Var Mlp::forward(Tape& tape, const Bound& bound, Var input, bool activate_final) const {
  Var h = input;
  const int layers = n_layers();
  for (int l = 0; l < layers; ++l) {
    h = tape.add_rowvec(tape.matmul(h, bound.vars[2 * l]), bound.vars[2 * l + 1]);
    if (l + 1 < layers || activate_final)
      h = cfg_.activation == Activation::kRelu ? tape.relu(h) : tape.tanh(h);
  }
  return h;
}

std::vector<Tensor> Mlp::collect_grads(const Bound& bound) const {
  std::vector<Tensor> grads;
  grads.reserve(bound.vars.size());
  for (const Var& v : bound.vars) grads.push_back(v.grad());
  return grads;
}

EnergyNetConfig EnergyNetConfig::standard(int x_dim, int y_dim, int feature_dim,
                                          int hidden, Activation act, uint64_t seed) {
  EnergyNetConfig cfg;
  cfg.x_branch = {{x_dim, hidden, feature_dim}, act, derive_seed(seed, 1)};
  cfg.y_branch = {{y_dim, hidden, feature_dim}, act, derive_seed(seed, 2)};
  cfg.head = {{2 * feature_dim, hidden, 1}, act, derive_seed(seed, 3)};
  return cfg;
}

void EnergyNetConfig::validate() const {
  x_branch.validate();
  y_branch.validate();
  head.validate();
  if (head.layer_widths.front() != x_branch.layer_widths.back() + y_branch.layer_widths.back())
    throw std::invalid_argument("EnergyNetConfig: head input != x_feat + y_feat");
  if (head.layer_widths.back() != 1)
    throw std::invalid_argument("EnergyNetConfig: head output must be scalar");
}

EnergyNet::EnergyNet(EnergyNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  x_branch_ = Mlp(cfg_.x_branch);
  y_branch_ = Mlp(cfg_.y_branch);
  head_ = Mlp(cfg_.head);
}

EnergyNet::Bound EnergyNet::bind(Tape& tape) const {
  return {x_branch_.bind(tape), y_branch_.bind(tape), head_.bind(tape)};
}

Var EnergyNet::features(Tape& tape, const Bound& bound, const Tensor& x) const {
  return features(tape, bound, tape.constant(x));
}

Var EnergyNet::features(Tape& tape, const Bound& bound, Var x) const {
  return x_branch_.forward(tape, bound.x, x, /*activate_final=*/true);
}

Var EnergyNet::energy(Tape& tape, const Bound& bound, Var h_x, const Tensor& y,
                      int M) const {
  const int B = h_x.rows();
  if (y.rows() != B * M || y.cols() != y_dim())
    throw std::invalid_argument("EnergyNet::energy: y shape " + y.shape_str() +
                                " does not match batch " + std::to_string(B) +
                                " x M " + std::to_string(M));
  Var hx = M == 1 ? h_x : tape.repeat_rows(h_x, M);
  Var hy = y_branch_.forward(tape, bound.y, tape.constant(y), /*activate_final=*/true);
  Var joint = tape.concat_cols(hx, hy);
  Var score = head_.forward(tape, bound.head, joint, /*activate_final=*/false);
  return tape.reshape(score, B, M, M == 1 ? 1 : 2);
}

Var EnergyNet::energy_single(Tape& tape, const Bound& bound, Var h_x,
                             const Tensor& y) const {
  return energy(tape, bound, h_x, y, 1);
}

std::vector<ParamTensor*> EnergyNet::params() {
  std::vector<ParamTensor*> out;
  for (auto& p : x_branch_.params()) out.push_back(&p);
  for (auto& p : y_branch_.params()) out.push_back(&p);
  for (auto& p : head_.params()) out.push_back(&p);
  return out;
}

std::vector<const ParamTensor*> EnergyNet::params() const {
  std::vector<const ParamTensor*> out;
  for (const auto& p : x_branch_.params()) out.push_back(&p);
  for (const auto& p : y_branch_.params()) out.push_back(&p);
  for (const auto& p : head_.params()) out.push_back(&p);
  return out;
}

std::vector<Tensor> EnergyNet::collect_grads(const Bound& bound) const {
  std::vector<Tensor> grads = x_branch_.collect_grads(bound.x);
  for (auto& g : y_branch_.collect_grads(bound.y)) grads.push_back(std::move(g));
  for (auto& g : head_.collect_grads(bound.head)) grads.push_back(std::move(g));
  return grads;
}

Tensor energy_forward(const EnergyNet& net, const Tensor& x, const Tensor& y, int M) {
  Tape tape;
  auto bound = net.bind(tape);
  Var h_x = net.features(tape, bound, x);
  Var f = net.energy(tape, bound, h_x, y, M);
  return f.value();
}

Tensor energy_features(const EnergyNet& net, const Tensor& x) {
  Tape tape;
  auto bound = net.bind(tape);
  return net.features(tape, bound, x).value();
}

EnergyRowFn energy_row_fn(const EnergyNet& net) {
  // copy the net so the returned closure owns its parameters
  return [net](double x, const std::vector<double>& ys) {
    Tape tape;
    auto bound = net.bind(tape);
    Tensor xt = Tensor::matrix(1, net.x_dim());
    xt[0] = x;
    Var h_x = net.features(tape, bound, xt);
    Tensor yt = Tensor::matrix(static_cast<int>(ys.size()), 1);
    for (size_t i = 0; i < ys.size(); ++i) yt[static_cast<int64_t>(i)] = ys[i];
    Var f = net.energy(tape, bound, h_x, yt, static_cast<int>(ys.size()));
    const Tensor& v = f.value();
    return std::vector<double>(v.vec());
  };
}

std::vector<double> flatten_params(const std::vector<const ParamTensor*>& params) {
  std::vector<double> flat;
  for (const auto* p : params)
    flat.insert(flat.end(), p->value.vec().begin(), p->value.vec().end());
  return flat;
}

std::vector<double> flatten_params(const std::vector<ParamTensor*>& params) {
  return flatten_params(
      std::vector<const ParamTensor*>(params.begin(), params.end()));
}

void unflatten_params(const std::vector<ParamTensor*>& params,
                      const std::vector<double>& flat) {
  size_t off = 0;
  for (auto* p : params) {
    const size_t n = static_cast<size_t>(p->value.numel());
    if (off + n > flat.size())
      throw std::invalid_argument("unflatten_params: flat array too short");
    for (size_t i = 0; i < n; ++i) p->value[static_cast<int64_t>(i)] = flat[off + i];
    off += n;
  }
  if (off != flat.size())
    throw std::invalid_argument("unflatten_params: flat array size mismatch");
}

Adam::Adam(AdamConfig cfg, std::vector<ParamTensor*> params)
    : cfg_(cfg), params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto* p : params_) {
    Tensor z = p->value;
    z.fill(0.0);
    m_.push_back(z);
    v_.push_back(z);
  }
}

bool Adam::step(const std::vector<Tensor>& grads, GradPolicy policy) {
  if (grads.size() != params_.size())
    throw std::invalid_argument("Adam::step: gradient count mismatch");
  for (size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].same_shape(params_[i]->value))
      throw std::invalid_argument("Adam::step: gradient shape mismatch for " +
                                  params_[i]->name);
    for (double g : grads[i].span()) {
      if (!std::isfinite(g)) {
        if (policy == GradPolicy::kStrict)
          throw std::runtime_error("Adam::step: non-finite gradient for " +
                                   params_[i]->name);
        ++skipped_;
        return false;
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i]->value;
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  return true;
}

}  // namespace ebmprop
