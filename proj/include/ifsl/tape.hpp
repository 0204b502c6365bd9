#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "ifsl/tensor.hpp"

namespace ifsl {

// Handle to a node recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Op : std::uint8_t {
  kLeaf,
  kMatMul,
  kMatMulNT,
  kTranspose,
  kAdd,
  kSub,
  kAddRow,
  kMul,
  kMulRow,
  kScale,
  kScaleBy,
  kConcatRows,
  kSliceRows,
  kGatherRows,
  kRowNormalize,
  kSoftmaxRows,
  kLayerNormRows,
  kGelu,
  kMeanRows,
  kSumSquares,
  kCrossEntropy,
};

const char* op_name(Op op);

inline constexpr double kLayerNormEps = 1e-5;

// Define-by-run computation tape. Every primitive evaluates eagerly when it
// is recorded; `replay` re-evaluates the recorded program after leaf values
// change, and `backward` accumulates adjoints into every node that depends
// on a leaf created with requires_grad.
//
// All values are matrices (rank-1 tensors read as a single row). A tape is
// single-threaded; independent tapes can run concurrently.
class Tape {
 public:
  Tape() = default;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a 1xC row over every row of a
  Var mul(Var a, Var b);
  Var mul_row(Var a, Var row);
  Var scale(Var a, double c);
  Var scale_by(Var a, Var s);  // s is 1x1
  Var concat_rows(std::span<const Var> parts);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var gather_rows(Var a, std::vector<std::size_t> rows);
  Var row_normalize(Var a);
  Var softmax_rows(Var a);
  Var layer_norm_rows(Var a);  // no affine; zero-variance rows map to zeros
  Var gelu(Var a);
  Var mean_rows(Var a);    // RxC -> 1xC
  Var sum_squares(Var a);  // -> 1x1
  Var mean_squares(Var a) { return scale(sum_squares(a), 1.0 / double(value(a).size())); }
  // Mean over rows of -log softmax(logits[r])[targets[r]].
  Var cross_entropy(Var logits, std::vector<std::size_t> targets);

  const Tensor& value(Var v) const;
  // Adjoint of `v` after the last backward; exact zeros when v received none.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;

  void set_leaf(Var v, Tensor value);
  // Re-evaluates every non-leaf node in record order.
  void replay();
  void backward(Var output, const Tensor& seed);
  void backward(Var output);  // seed 1 for a 1x1 output

  std::size_t size() const { return nodes_.size(); }
  // Drops every node recorded after `mark` (a value returned by size()).
  void truncate(std::size_t mark);

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<int> in;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_live = false;
    double scalar = 0.0;
    std::vector<std::size_t> index;
    std::vector<double> cache;
  };

  Var record(Node node);
  void evaluate(Node& node);
  void propagate(const Node& node);
  Node& node(Var v);
  const Node& node(Var v) const;
  Tensor& grad_slot(int id);

  std::deque<Node> nodes_;  // deque keeps value() references stable across records
  bool stale_ = false;
};

// Stand-alone numerically stable cross-entropy of temperature-scaled logits.
double cross_entropy(std::span<const double> logits, std::size_t true_class,
                     double temperature);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace ifsl
