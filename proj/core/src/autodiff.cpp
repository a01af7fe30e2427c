#include "ebmprop/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ebmprop {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;  // ln(2*pi)

bool all_finite(const Tensor& t) {
  for (double v : t.span())
    if (!std::isfinite(v)) return false;
  return true;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* opname) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(opname) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

const Tensor& Var::value() const { return tape_->at(idx_).value; }

bool Var::requires_grad() const { return tape_->at(idx_).requires_grad; }

const Tensor& Var::grad() const {
  auto& n = tape_->at(idx_);
  if (n.grad.empty()) {
    n.grad = n.value;
    n.grad.fill(0.0);
  }
  return n.grad;
}

const char* Tape::op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kStopGrad: return "stop_gradient";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScaleAdd: return "scale_add";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kClampMin: return "clamp_min";
    case Op::kMatmul: return "matmul";
    case Op::kAddRowvec: return "add_rowvec";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSliceCols: return "slice_cols";
    case Op::kRepeatRows: return "repeat_rows";
    case Op::kReshape: return "reshape";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kLogsumexpRows: return "logsumexp_rows";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kLogSoftmaxRows: return "log_softmax_rows";
    case Op::kGaussianLogpdf: return "gaussian_logpdf";
    case Op::kMixtureLogpdf: return "mixture_logpdf";
  }
  return "?";
}

Var Tape::push(Node n, const char* opname) {
  if (strict_ && !all_finite(n.value))
    throw std::runtime_error(std::string(opname) + ": non-finite values in strict mode");
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  return push(std::move(n), "leaf");
}

Var Tape::stop_gradient(Var x) {
  Node n;
  n.op = Op::kStopGrad;
  n.a = x.index();
  n.requires_grad = false;
  n.value = at(x.index()).value;
  return push(std::move(n), "stop_gradient");
}

Var Tape::add(Var a, Var b) {
  const Tensor& va = at(a.index()).value;
  const Tensor& vb = at(b.index()).value;
  check_same_shape(va, vb, "add");
  Node n;
  n.op = Op::kAdd;
  n.a = a.index();
  n.b = b.index();
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.value = va;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] += vb[i];
  return push(std::move(n), "add");
}

Var Tape::sub(Var a, Var b) {
  const Tensor& va = at(a.index()).value;
  const Tensor& vb = at(b.index()).value;
  check_same_shape(va, vb, "sub");
  Node n;
  n.op = Op::kSub;
  n.a = a.index();
  n.b = b.index();
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.value = va;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] -= vb[i];
  return push(std::move(n), "sub");
}

Var Tape::mul(Var a, Var b) {
  const Tensor& va = at(a.index()).value;
  const Tensor& vb = at(b.index()).value;
  check_same_shape(va, vb, "mul");
  Node n;
  n.op = Op::kMul;
  n.a = a.index();
  n.b = b.index();
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.value = va;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] *= vb[i];
  return push(std::move(n), "mul");
}

Var Tape::scale_add(Var x, double alpha, double beta) {
  Node n;
  n.op = Op::kScaleAdd;
  n.a = x.index();
  n.p0 = alpha;
  n.p1 = beta;
  n.requires_grad = x.requires_grad();
  n.value = at(x.index()).value;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = alpha * n.value[i] + beta;
  return push(std::move(n), "scale_add");
}

Var Tape::exp(Var x) {
  Node n;
  n.op = Op::kExp;
  n.a = x.index();
  n.requires_grad = x.requires_grad();
  n.value = at(x.index()).value;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = std::exp(n.value[i]);
  return push(std::move(n), "exp");
}

Var Tape::log(Var x) {
  Node n;
  n.op = Op::kLog;
  n.a = x.index();
  n.requires_grad = x.requires_grad();
  n.value = at(x.index()).value;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = std::log(n.value[i]);
  return push(std::move(n), "log");
}

Var Tape::tanh(Var x) {
  Node n;
  n.op = Op::kTanh;
  n.a = x.index();
  n.requires_grad = x.requires_grad();
  n.value = at(x.index()).value;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = std::tanh(n.value[i]);
  return push(std::move(n), "tanh");
}

Var Tape::relu(Var x) {
  Node n;
  n.op = Op::kRelu;
  n.a = x.index();
  n.requires_grad = x.requires_grad();
  n.value = at(x.index()).value;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = std::max(0.0, n.value[i]);
  return push(std::move(n), "relu");
}

Var Tape::clamp_min(Var x, double lo) {
  Node n;
  n.op = Op::kClampMin;
  n.a = x.index();
  n.p0 = lo;
  n.requires_grad = x.requires_grad();
  n.value = at(x.index()).value;
  // keeps NaN instead of swallowing it into the clamp
  for (int64_t i = 0; i < n.value.numel(); ++i)
    if (n.value[i] < lo) n.value[i] = lo;
  return push(std::move(n), "clamp_min");
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& va = at(a.index()).value;
  const Tensor& vb = at(b.index()).value;
  if (va.cols() != vb.rows())
    throw std::invalid_argument("matmul: inner dims " + va.shape_str() + " x " +
                                vb.shape_str());
  const int r = va.rows(), k = va.cols(), c = vb.cols();
  Node n;
  n.op = Op::kMatmul;
  n.a = a.index();
  n.b = b.index();
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.value = Tensor::matrix(r, c);
  const double* A = va.data();
  const double* B = vb.data();
  double* C = n.value.data();
  for (int i = 0; i < r; ++i)
    for (int kk = 0; kk < k; ++kk) {
      const double aik = A[i * k + kk];
      const double* Bk = B + kk * c;
      double* Ci = C + i * c;
      for (int j = 0; j < c; ++j) Ci[j] += aik * Bk[j];
    }
  return push(std::move(n), "matmul");
}

Var Tape::add_rowvec(Var m, Var v) {
  const Tensor& vm = at(m.index()).value;
  const Tensor& vv = at(v.index()).value;
  if (vv.rows() != vm.cols() || vv.cols() != 1)
    throw std::invalid_argument("add_rowvec: " + vm.shape_str() + " + " + vv.shape_str());
  Node n;
  n.op = Op::kAddRowvec;
  n.a = m.index();
  n.b = v.index();
  n.requires_grad = m.requires_grad() || v.requires_grad();
  n.value = vm;
  for (int i = 0; i < vm.rows(); ++i)
    for (int j = 0; j < vm.cols(); ++j) n.value(i, j) += vv[j];
  return push(std::move(n), "add_rowvec");
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& va = at(a.index()).value;
  const Tensor& vb = at(b.index()).value;
  if (va.rows() != vb.rows())
    throw std::invalid_argument("concat_cols: row mismatch " + va.shape_str() + " vs " +
                                vb.shape_str());
  Node n;
  n.op = Op::kConcatCols;
  n.a = a.index();
  n.b = b.index();
  n.i0 = va.cols();
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.value = Tensor::matrix(va.rows(), va.cols() + vb.cols());
  for (int i = 0; i < va.rows(); ++i) {
    for (int j = 0; j < va.cols(); ++j) n.value(i, j) = va(i, j);
    for (int j = 0; j < vb.cols(); ++j) n.value(i, va.cols() + j) = vb(i, j);
  }
  return push(std::move(n), "concat_cols");
}

Var Tape::slice_cols(Var m, int c0, int c1) {
  const Tensor& vm = at(m.index()).value;
  if (c0 < 0 || c1 > vm.cols() || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") for " + vm.shape_str());
  Node n;
  n.op = Op::kSliceCols;
  n.a = m.index();
  n.i0 = c0;
  n.i1 = c1;
  n.requires_grad = m.requires_grad();
  n.value = Tensor::matrix(vm.rows(), c1 - c0);
  for (int i = 0; i < vm.rows(); ++i)
    for (int j = c0; j < c1; ++j) n.value(i, j - c0) = vm(i, j);
  return push(std::move(n), "slice_cols");
}

Var Tape::repeat_rows(Var m, int times) {
  if (times < 1) throw std::invalid_argument("repeat_rows: times < 1");
  const Tensor& vm = at(m.index()).value;
  Node n;
  n.op = Op::kRepeatRows;
  n.a = m.index();
  n.i0 = times;
  n.requires_grad = m.requires_grad();
  n.value = Tensor::matrix(vm.rows() * times, vm.cols());
  for (int i = 0; i < vm.rows(); ++i)
    for (int t = 0; t < times; ++t)
      for (int j = 0; j < vm.cols(); ++j) n.value(i * times + t, j) = vm(i, j);
  return push(std::move(n), "repeat_rows");
}

Var Tape::reshape(Var x, int rows, int cols, int rank) {
  Node n;
  n.op = Op::kReshape;
  n.a = x.index();
  n.requires_grad = x.requires_grad();
  n.value = at(x.index()).value.reshaped(rows, cols, rank);
  return push(std::move(n), "reshape");
}

Var Tape::sum(Var x) {
  Node n;
  n.op = Op::kSum;
  n.a = x.index();
  n.requires_grad = x.requires_grad();
  double s = 0.0;
  for (double v : at(x.index()).value.span()) s += v;
  n.value = Tensor::scalar(s);
  return push(std::move(n), "sum");
}

Var Tape::mean(Var x) {
  Node n;
  n.op = Op::kMean;
  n.a = x.index();
  n.requires_grad = x.requires_grad();
  double s = 0.0;
  const auto& vx = at(x.index()).value;
  for (double v : vx.span()) s += v;
  n.value = Tensor::scalar(s / static_cast<double>(vx.numel()));
  return push(std::move(n), "mean");
}

Var Tape::logsumexp_rows(Var m) {
  const Tensor& vm = at(m.index()).value;
  Node n;
  n.op = Op::kLogsumexpRows;
  n.a = m.index();
  n.requires_grad = m.requires_grad();
  n.value = Tensor::vector(vm.rows());
  for (int i = 0; i < vm.rows(); ++i) {
    double mx = vm(i, 0);
    for (int j = 1; j < vm.cols(); ++j) mx = std::max(mx, vm(i, j));
    double s = 0.0;
    for (int j = 0; j < vm.cols(); ++j) s += std::exp(vm(i, j) - mx);
    n.value[i] = mx + std::log(s);
  }
  return push(std::move(n), "logsumexp_rows");
}

Var Tape::softmax_rows(Var m) {
  const Tensor& vm = at(m.index()).value;
  Node n;
  n.op = Op::kSoftmaxRows;
  n.a = m.index();
  n.requires_grad = m.requires_grad();
  n.value = vm;
  for (int i = 0; i < vm.rows(); ++i) {
    double mx = vm(i, 0);
    for (int j = 1; j < vm.cols(); ++j) mx = std::max(mx, vm(i, j));
    double s = 0.0;
    for (int j = 0; j < vm.cols(); ++j) {
      n.value(i, j) = std::exp(vm(i, j) - mx);
      s += n.value(i, j);
    }
    for (int j = 0; j < vm.cols(); ++j) n.value(i, j) /= s;
  }
  return push(std::move(n), "softmax_rows");
}

Var Tape::log_softmax_rows(Var m) {
  const Tensor& vm = at(m.index()).value;
  Node n;
  n.op = Op::kLogSoftmaxRows;
  n.a = m.index();
  n.requires_grad = m.requires_grad();
  n.value = vm;
  for (int i = 0; i < vm.rows(); ++i) {
    double mx = vm(i, 0);
    for (int j = 1; j < vm.cols(); ++j) mx = std::max(mx, vm(i, j));
    double s = 0.0;
    for (int j = 0; j < vm.cols(); ++j) s += std::exp(vm(i, j) - mx);
    const double lse = mx + std::log(s);
    for (int j = 0; j < vm.cols(); ++j) n.value(i, j) = vm(i, j) - lse;
  }
  return push(std::move(n), "log_softmax_rows");
}

Var Tape::gaussian_logpdf(Var y, Var mu, Var sigma) {
  const Tensor& vy = at(y.index()).value;
  const Tensor& vmu = at(mu.index()).value;
  const Tensor& vs = at(sigma.index()).value;
  check_same_shape(vy, vmu, "gaussian_logpdf");
  check_same_shape(vy, vs, "gaussian_logpdf");
  Node n;
  n.op = Op::kGaussianLogpdf;
  n.a = y.index();
  n.b = mu.index();
  n.c = sigma.index();
  n.requires_grad = y.requires_grad() || mu.requires_grad() || sigma.requires_grad();
  n.value = vy;
  for (int64_t i = 0; i < n.value.numel(); ++i) {
    const double z = (vy[i] - vmu[i]) / vs[i];
    n.value[i] = -0.5 * kLogTwoPi - std::log(vs[i]) - 0.5 * z * z;
  }
  return push(std::move(n), "gaussian_logpdf");
}

Var Tape::mixture_logpdf(Var logits, Var means, Var log_sigma2, Var y, int M,
                         double sigma_floor) {
  const Tensor& vl = at(logits.index()).value;
  const Tensor& vmu = at(means.index()).value;
  const Tensor& vs2 = at(log_sigma2.index()).value;
  const Tensor& vy = at(y.index()).value;
  const int B = vl.rows();
  const int K = vl.cols();
  const int D = vy.cols();
  if (vmu.rows() != B || vmu.cols() != K * D)
    throw std::invalid_argument("mixture_logpdf: means shape " + vmu.shape_str());
  if (!vmu.same_shape(vs2))
    throw std::invalid_argument("mixture_logpdf: log_sigma2 shape " + vs2.shape_str());
  if (vy.rows() != static_cast<int64_t>(B) * M)
    throw std::invalid_argument("mixture_logpdf: y rows " + vy.shape_str() +
                                " != batch*M");
  Node n;
  n.op = Op::kMixtureLogpdf;
  n.a = logits.index();
  n.b = means.index();
  n.c = log_sigma2.index();
  n.d = y.index();
  n.i0 = K;
  n.i1 = M;
  n.p0 = sigma_floor;
  n.requires_grad = logits.requires_grad() || means.requires_grad() ||
                    log_sigma2.requires_grad() || y.requires_grad();
  n.value = Tensor::matrix(B, M);

  std::vector<double> log_pi(static_cast<size_t>(K));
  std::vector<double> comp(static_cast<size_t>(K));
  for (int b = 0; b < B; ++b) {
    double mx = vl(b, 0);
    for (int k = 1; k < K; ++k) mx = std::max(mx, vl(b, k));
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += std::exp(vl(b, k) - mx);
    const double lse = mx + std::log(s);
    for (int k = 0; k < K; ++k) log_pi[k] = vl(b, k) - lse;

    for (int m = 0; m < M; ++m) {
      const int row = b * M + m;
      double amax = -1e308;
      for (int k = 0; k < K; ++k) {
        double a = log_pi[k];
        for (int d = 0; d < D; ++d) {
          const double sig = std::max(std::exp(0.5 * vs2(b, k * D + d)), sigma_floor);
          const double z = (vy(row, d) - vmu(b, k * D + d)) / sig;
          a += -0.5 * kLogTwoPi - std::log(sig) - 0.5 * z * z;
        }
        comp[k] = a;
        amax = std::max(amax, a);
      }
      double se = 0.0;
      for (int k = 0; k < K; ++k) se += std::exp(comp[k] - amax);
      n.value(b, m) = amax + std::log(se);
    }
  }
  return push(std::move(n), "mixture_logpdf");
}

Tensor& Tape::grad_buf(int idx) {
  Node& n = at(idx);
  if (n.grad.empty()) {
    n.grad = n.value;
    n.grad.fill(0.0);
  }
  return n.grad;
}

void Tape::backward(Var output) {
  if (output.tape() != this)
    throw std::invalid_argument("backward: output from a different tape");
  if (backward_done_)
    throw std::logic_error(
        "backward: tape already differentiated; call reset_grads() or clear()");
  const Node& out = at(output.index());
  if (out.value.numel() != 1)
    throw std::invalid_argument("backward: output is not scalar, shape " +
                                out.value.shape_str());
  backward_done_ = true;
  if (!out.requires_grad) return;

  grad_buf(output.index()).fill(1.0);
  for (int idx = output.index(); idx >= 0; --idx) {
    const Node& n = at(idx);
    if (n.op == Op::kLeaf || n.op == Op::kStopGrad) continue;
    if (!n.requires_grad || n.grad.empty()) continue;
    backward_node(idx);
  }
}

void Tape::reset_grads() {
  for (auto& n : nodes_) n.grad = Tensor();
  backward_done_ = false;
}

void Tape::clear() {
  nodes_.clear();
  backward_done_ = false;
}

void Tape::backward_node(int idx) {
  Node& n = at(idx);
  const Tensor& g = n.grad;
  auto wants = [&](int arg) { return arg >= 0 && at(arg).requires_grad; };

  switch (n.op) {
    case Op::kAdd: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (wants(n.b)) {
        Tensor& gb = grad_buf(n.b);
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
      }
      break;
    }
    case Op::kSub: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (wants(n.b)) {
        Tensor& gb = grad_buf(n.b);
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
      }
      break;
    }
    case Op::kMul: {
      const Tensor& va = at(n.a).value;
      const Tensor& vb = at(n.b).value;
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
      }
      if (wants(n.b)) {
        Tensor& gb = grad_buf(n.b);
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
      }
      break;
    }
    case Op::kScaleAdd: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.p0;
      }
      break;
    }
    case Op::kExp: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.value[i];
      }
      break;
    }
    case Op::kLog: {
      if (wants(n.a)) {
        const Tensor& va = at(n.a).value;
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / va[i];
      }
      break;
    }
    case Op::kTanh: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < g.numel(); ++i)
          ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      }
      break;
    }
    case Op::kRelu: {
      if (wants(n.a)) {
        const Tensor& va = at(n.a).value;
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < g.numel(); ++i)
          if (va[i] > 0.0) ga[i] += g[i];
      }
      break;
    }
    case Op::kClampMin: {
      if (wants(n.a)) {
        const Tensor& va = at(n.a).value;
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < g.numel(); ++i)
          if (va[i] > n.p0) ga[i] += g[i];
      }
      break;
    }
    case Op::kMatmul: {
      const Tensor& va = at(n.a).value;
      const Tensor& vb = at(n.b).value;
      const int r = va.rows(), k = va.cols(), c = vb.cols();
      if (wants(n.a)) {
        // dA = dC * B^T
        Tensor& ga = grad_buf(n.a);
        const double* G = g.data();
        const double* B = vb.data();
        double* GA = ga.data();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) {
            const double gij = G[i * c + j];
            const double* Bj = B;  // column j:  B[kk*c + j]
            for (int kk = 0; kk < k; ++kk) GA[i * k + kk] += gij * Bj[kk * c + j];
          }
      }
      if (wants(n.b)) {
        // dB = A^T * dC
        Tensor& gb = grad_buf(n.b);
        const double* G = g.data();
        const double* A = va.data();
        double* GB = gb.data();
        for (int kk = 0; kk < k; ++kk)
          for (int i = 0; i < r; ++i) {
            const double aik = A[i * k + kk];
            const double* Gi = G + i * c;
            double* GBk = GB + kk * c;
            for (int j = 0; j < c; ++j) GBk[j] += aik * Gi[j];
          }
      }
      break;
    }
    case Op::kAddRowvec: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (wants(n.b)) {
        Tensor& gb = grad_buf(n.b);
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
      }
      break;
    }
    case Op::kConcatCols: {
      const int ca = n.i0;
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < ca; ++j) ga(i, j) += g(i, j);
      }
      if (wants(n.b)) {
        Tensor& gb = grad_buf(n.b);
        for (int i = 0; i < g.rows(); ++i)
          for (int j = ca; j < g.cols(); ++j) gb(i, j - ca) += g(i, j);
      }
      break;
    }
    case Op::kSliceCols: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) ga(i, n.i0 + j) += g(i, j);
      }
      break;
    }
    case Op::kRepeatRows: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        const int times = n.i0;
        for (int i = 0; i < ga.rows(); ++i)
          for (int t = 0; t < times; ++t)
            for (int j = 0; j < g.cols(); ++j) ga(i, j) += g(i * times + t, j);
      }
      break;
    }
    case Op::kReshape: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      break;
    }
    case Op::kSum: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        const double go = g[0];
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += go;
      }
      break;
    }
    case Op::kMean: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        const double go = g[0] / static_cast<double>(ga.numel());
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += go;
      }
      break;
    }
    case Op::kLogsumexpRows: {
      if (wants(n.a)) {
        const Tensor& va = at(n.a).value;
        Tensor& ga = grad_buf(n.a);
        for (int i = 0; i < va.rows(); ++i) {
          const double gi = g[i];
          if (gi == 0.0) continue;
          for (int j = 0; j < va.cols(); ++j)
            ga(i, j) += gi * std::exp(va(i, j) - n.value[i]);
        }
      }
      break;
    }
    case Op::kSoftmaxRows: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        for (int i = 0; i < n.value.rows(); ++i) {
          double dot = 0.0;
          for (int j = 0; j < n.value.cols(); ++j) dot += g(i, j) * n.value(i, j);
          for (int j = 0; j < n.value.cols(); ++j)
            ga(i, j) += n.value(i, j) * (g(i, j) - dot);
        }
      }
      break;
    }
    case Op::kLogSoftmaxRows: {
      if (wants(n.a)) {
        Tensor& ga = grad_buf(n.a);
        for (int i = 0; i < n.value.rows(); ++i) {
          double gsum = 0.0;
          for (int j = 0; j < n.value.cols(); ++j) gsum += g(i, j);
          for (int j = 0; j < n.value.cols(); ++j)
            ga(i, j) += g(i, j) - std::exp(n.value(i, j)) * gsum;
        }
      }
      break;
    }
    case Op::kGaussianLogpdf: {
      const Tensor& vy = at(n.a).value;
      const Tensor& vmu = at(n.b).value;
      const Tensor& vs = at(n.c).value;
      for (int64_t i = 0; i < g.numel(); ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        const double diff = vy[i] - vmu[i];
        const double inv2 = 1.0 / (vs[i] * vs[i]);
        if (wants(n.a)) grad_buf(n.a)[i] += gi * (-diff * inv2);
        if (wants(n.b)) grad_buf(n.b)[i] += gi * (diff * inv2);
        if (wants(n.c)) grad_buf(n.c)[i] += gi * (diff * diff * inv2 - 1.0) / vs[i];
      }
      break;
    }
    case Op::kMixtureLogpdf: {
      const Tensor& vl = at(n.a).value;
      const Tensor& vmu = at(n.b).value;
      const Tensor& vs2 = at(n.c).value;
      const Tensor& vy = at(n.d).value;
      const int B = vl.rows();
      const int K = n.i0;
      const int M = n.i1;
      const int D = vy.cols();
      const double floor = n.p0;
      std::vector<double> log_pi(static_cast<size_t>(K));
      std::vector<double> comp(static_cast<size_t>(K));
      for (int b = 0; b < B; ++b) {
        double mx = vl(b, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, vl(b, k));
        double s = 0.0;
        for (int k = 0; k < K; ++k) s += std::exp(vl(b, k) - mx);
        const double lse = mx + std::log(s);
        for (int k = 0; k < K; ++k) log_pi[k] = vl(b, k) - lse;

        for (int m = 0; m < M; ++m) {
          const double gbm = g(b, m);
          if (gbm == 0.0) continue;
          const int row = b * M + m;
          // recompute per-component joint scores; responsibilities follow
          // from the saved output: r_k = exp(a_k - logsumexp(a))
          for (int k = 0; k < K; ++k) {
            double a = log_pi[k];
            for (int d = 0; d < D; ++d) {
              const double sig =
                  std::max(std::exp(0.5 * vs2(b, k * D + d)), floor);
              const double z = (vy(row, d) - vmu(b, k * D + d)) / sig;
              a += -0.5 * kLogTwoPi - std::log(sig) - 0.5 * z * z;
            }
            comp[k] = std::exp(a - n.value(b, m));
          }
          for (int k = 0; k < K; ++k) {
            const double rk = comp[k];
            if (wants(n.a))
              grad_buf(n.a)(b, k) += gbm * (rk - std::exp(log_pi[k]));
            for (int d = 0; d < D; ++d) {
              const double s2raw = std::exp(0.5 * vs2(b, k * D + d));
              const double sig = std::max(s2raw, floor);
              const double diff = vy(row, d) - vmu(b, k * D + d);
              const double inv2 = 1.0 / (sig * sig);
              if (wants(n.b)) grad_buf(n.b)(b, k * D + d) += gbm * rk * diff * inv2;
              if (wants(n.c) && s2raw > floor)
                grad_buf(n.c)(b, k * D + d) +=
                    gbm * rk * 0.5 * (diff * diff * inv2 - 1.0);
              if (wants(n.d)) grad_buf(n.d)(row, d) += gbm * rk * (-diff * inv2);
            }
          }
        }
      }
      break;
    }
    case Op::kLeaf:
    case Op::kStopGrad:
      break;
  }
}

}  // namespace ebmprop
