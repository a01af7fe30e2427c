#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ebmprop/tensor.hpp"

namespace ebmprop {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until the tape is cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int idx) : tape_(tape), idx_(idx) {}

  const Tensor& value() const;
  // Gradient after backward(); zero tensor shaped like value() if this node
  // received no gradient (or does not require one). The reference stays valid
  // until the tape is cleared.
  const Tensor& grad() const;
  bool requires_grad() const;
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  int index() const { return idx_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

// Reverse-mode differentiation over dense arrays. The graph is append-only:
// every operand of a node precedes it, so reverse index order is a valid
// topological order and backward() visits each node exactly once.
//
// Tapes are rebuilt per training iteration and are single-threaded;
// independent tapes may run on independent threads.
class Tape {
 public:
  explicit Tape(bool strict = false) : strict_(strict) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void set_strict(bool strict) { strict_ = strict; }

  // --- graph inputs -------------------------------------------------------
  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }

  // Value passes through unchanged; gradient flow is severed.
  Var stop_gradient(Var x);

  // --- elementwise --------------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  // alpha * x + beta with scalar constants
  Var scale_add(Var x, double alpha, double beta = 0.0);
  Var neg(Var x) { return scale_add(x, -1.0); }
  Var exp(Var x);
  Var log(Var x);
  Var tanh(Var x);
  Var relu(Var x);
  // max(x, lo); gradient is zero where the clamp is active
  Var clamp_min(Var x, double lo);

  // --- linear algebra / shape ---------------------------------------------
  Var matmul(Var a, Var b);           // [r,k] x [k,c] -> [r,c]
  Var add_rowvec(Var m, Var v);       // [r,c] + [c] broadcast over rows
  Var concat_cols(Var a, Var b);      // [r,ca] ++ [r,cb] -> [r,ca+cb]
  Var slice_cols(Var m, int c0, int c1);  // columns [c0, c1)
  Var repeat_rows(Var m, int times);  // row b -> rows b*times .. b*times+times-1
  Var reshape(Var x, int rows, int cols, int rank);

  // --- reductions (numerically stable via max-shift where applicable) ------
  Var sum(Var x);   // -> scalar
  Var mean(Var x);  // -> scalar
  Var logsumexp_rows(Var m);     // [r,c] -> [r]
  Var softmax_rows(Var m);       // [r,c] -> [r,c]
  Var log_softmax_rows(Var m);   // [r,c] -> [r,c]

  // --- densities ------------------------------------------------------------
  // Elementwise log N(y; mu, sigma^2), each argument the same shape.
  Var gaussian_logpdf(Var y, Var mu, Var sigma);

  // Log-density of a diagonal Gaussian mixture, fused over components.
  //   logits [B,K] raw weight scores (softmax applied internally),
  //   means  [B,K*D], log_sigma2 [B,K*D] component-major ([k*D+d]),
  //   y      [B*M,D] evaluation points, row b*M+m scored under mixture b.
  // Scales are sigma = max(exp(log_sigma2/2), sigma_floor); the floor is
  // treated as a hard clamp with zero gradient where active.
  // Returns [B,M].
  Var mixture_logpdf(Var logits, Var means, Var log_sigma2, Var y, int M,
                     double sigma_floor);

  // --- backward -------------------------------------------------------------
  // output must be scalar. A second call without reset_grads()/clear() throws.
  void backward(Var output);
  void reset_grads();
  void clear();

  size_t size() const { return nodes_.size(); }
  bool strict() const { return strict_; }

 private:
  friend class Var;

  enum class Op : uint8_t {
    kLeaf,
    kStopGrad,
    kAdd,
    kSub,
    kMul,
    kScaleAdd,
    kExp,
    kLog,
    kTanh,
    kRelu,
    kClampMin,
    kMatmul,
    kAddRowvec,
    kConcatCols,
    kSliceCols,
    kRepeatRows,
    kReshape,
    kSum,
    kMean,
    kLogsumexpRows,
    kSoftmaxRows,
    kLogSoftmaxRows,
    kGaussianLogpdf,
    kMixtureLogpdf,
  };

  struct Node {
    Op op = Op::kLeaf;
    int a = -1, b = -1, c = -1, d = -1;
    double p0 = 0.0, p1 = 0.0;
    int i0 = 0, i1 = 0;
    bool requires_grad = false;
    Tensor value;
    Tensor grad;  // allocated lazily during backward
  };

  Var push(Node n, const char* opname);
  Node& at(int idx) { return nodes_[static_cast<size_t>(idx)]; }
  const Node& at(int idx) const { return nodes_[static_cast<size_t>(idx)]; }
  Tensor& grad_buf(int idx);
  void backward_node(int idx);
  static const char* op_name(Op op);

  std::vector<Node> nodes_;
  bool strict_ = false;
  bool backward_done_ = false;
};

}  // namespace ebmprop
