#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "vislex/tensor.hpp"

namespace vislex {

struct Parameter;

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense matrices. A tape records one forward pass;
/// backward() walks it in reverse and accumulates gradients into every node
/// that needs one, then flushes node gradients into bound trainable Parameters.
class Tape {
 public:
  Var constant(Mat value);
  /// Node that receives a gradient even though nothing upstream is trainable.
  Var leaf(Mat value);
  /// Gradient-carrying copy of `x`; backward passes its gradient through to x.
  Var track(Var x);
  /// Trainable binding: gradients are added to p.grad on backward().
  Var param(Parameter& p);
  /// Read-only binding: recorded as a constant, no gradient path exists.
  Var param(const Parameter& p);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  size_t size() const { return nodes_.size(); }

  void backward(Var scalar);

  // Internal: used by the op implementations.
  using BackwardFn = std::function<void(Tape&, const Mat& grad_out)>;
  Var push(Mat value, std::initializer_list<Var> parents, BackwardFn fn);
  void accumulate(Var v, const Mat& g);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
};

// ---- ops ------------------------------------------------------------------

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var matmul(Tape& t, Var a, Var b);
/// a + broadcast(bias) where bias is 1 x cols.
Var add_bias(Tape& t, Var a, Var bias);
/// Adds a (T x cols) block to each of the B consecutive T-row blocks of a.
Var add_tiled(Tape& t, Var a, Var block);
Var relu(Tape& t, Var a);
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);

/// Training-mode batch norm over rows. Writes the batch mean and biased
/// variance into the out-params for running-statistic updates.
Var batch_norm_train(Tape& t, Var x, Var gamma, Var beta, double eps,
                     RowVec* batch_mean, RowVec* batch_var);
/// Inference-mode batch norm with fixed statistics.
Var batch_norm_infer(Tape& t, Var x, Var gamma, Var beta, const RowVec& mean,
                     const RowVec& var, double eps);

/// Row gather: out[i] = table[ids[i]].
Var embedding(Tape& t, Var table, std::span<const int> ids);
/// Inserts `row` (1 x cols) at the top of each of the B blocks of `blocks` rows.
Var prepend_row(Tape& t, Var x, Var row, int batch);
/// Row `index` of each of the B blocks of T rows, as a (B x cols) matrix.
Var take_row(Tape& t, Var x, int batch, int block_rows, int index);
/// Row-major reinterpretation (rows*cols preserved).
Var reshape(Tape& t, Var x, Eigen::Index rows, Eigen::Index cols);

/// Multi-head scaled dot-product attention on pre-projected q, k, v.
/// q is (batch*tq x d), k and v are (batch*tk x d). Causal masking requires tq == tk.
Var attention(Tape& t, Var q, Var k, Var v, int batch, int tq, int tk, int heads,
              bool causal);

/// Mean next-token cross entropy over rows whose target is >= 0.
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> targets);

}  // namespace vislex
