#include "ifsl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace ifsl {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatMul: return "matmul";
    case Op::kMatMulNT: return "matmul_nt";
    case Op::kTranspose: return "transpose";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kAddRow: return "add_row";
    case Op::kMul: return "mul";
    case Op::kMulRow: return "mul_row";
    case Op::kScale: return "scale";
    case Op::kScaleBy: return "scale_by";
    case Op::kConcatRows: return "concat_rows";
    case Op::kSliceRows: return "slice_rows";
    case Op::kGatherRows: return "gather_rows";
    case Op::kRowNormalize: return "row_normalize";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kLayerNormRows: return "layer_norm_rows";
    case Op::kGelu: return "gelu";
    case Op::kMeanRows: return "mean_rows";
    case Op::kSumSquares: return "sum_squares";
    case Op::kCrossEntropy: return "cross_entropy";
  }
  return "?";
}

namespace {

constexpr double kGeluC = 0.044715;
const double kGeluK = std::sqrt(2.0 / std::numbers::pi);

void require(bool cond, Op op, const std::string& what) {
  if (!cond) throw ShapeError(std::string(op_name(op)) + ": " + what);
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// -log softmax(x)[t], with log1p on the tail for precision near zero loss.
double stable_nll(const double* x, std::size_t n, std::size_t t) {
  std::size_t imax = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (x[j] > x[imax]) imax = j;
  const double m = x[imax];
  double tail = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    if (j != imax) tail += std::exp(x[j] - m);
  return (m - x[t]) + std::log1p(tail);
}

void softmax_into(const double* x, std::size_t n, double* out) {
  double m = x[0];
  for (std::size_t j = 1; j < n; ++j) m = std::max(m, x[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(x[j] - m);
    s += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= s;
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax of empty vector");
  std::vector<double> out(logits.size());
  softmax_into(logits.data(), logits.size(), out.data());
  return out;
}

double cross_entropy(std::span<const double> logits, std::size_t true_class,
                     double temperature) {
  if (logits.size() < 2) throw ShapeError("cross_entropy needs at least two classes");
  if (true_class >= logits.size()) {
    throw std::out_of_range("cross_entropy: class index " + std::to_string(true_class) +
                            " out of range for " + std::to_string(logits.size()) + " logits");
  }
  if (!(temperature > 0.0)) throw std::invalid_argument("cross_entropy: temperature must be > 0");
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& v : scaled) v *= temperature;
  return stable_nll(scaled.data(), scaled.size(), true_class);
}

Tape::Node& Tape::node(Var v) {
  if (v.id < 0 || std::size_t(v.id) >= nodes_.size()) throw std::out_of_range("invalid Var");
  return nodes_[std::size_t(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || std::size_t(v.id) >= nodes_.size()) throw std::out_of_range("invalid Var");
  return nodes_[std::size_t(v.id)];
}

Var Tape::record(Node n) {
  for (int id : n.in) {
    if (id < 0 || std::size_t(id) >= nodes_.size()) throw std::out_of_range("invalid operand Var");
    n.requires_grad = n.requires_grad || nodes_[std::size_t(id)].requires_grad;
  }
  nodes_.push_back(std::move(n));
  try {
    evaluate(nodes_.back());
  } catch (...) {
    nodes_.pop_back();
    throw;
  }
  return Var{int(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (value.empty()) throw ShapeError("leaf tensor must be nonempty");
  if (!value.all_finite()) throw NumericError("leaf tensor contains non-finite values");
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{int(nodes_.size()) - 1};
}

#define IFSL_UNARY(fn, kind)            \
  Var Tape::fn(Var a) {                 \
    Node n;                             \
    n.op = kind;                        \
    n.in = {a.id};                      \
    return record(std::move(n));        \
  }

#define IFSL_BINARY(fn, kind)           \
  Var Tape::fn(Var a, Var b) {          \
    Node n;                             \
    n.op = kind;                        \
    n.in = {a.id, b.id};                \
    return record(std::move(n));        \
  }

IFSL_BINARY(matmul, Op::kMatMul)
IFSL_BINARY(matmul_nt, Op::kMatMulNT)
IFSL_UNARY(transpose, Op::kTranspose)
IFSL_BINARY(add, Op::kAdd)
IFSL_BINARY(sub, Op::kSub)
IFSL_BINARY(add_row, Op::kAddRow)
IFSL_BINARY(mul, Op::kMul)
IFSL_BINARY(mul_row, Op::kMulRow)
IFSL_BINARY(scale_by, Op::kScaleBy)
IFSL_UNARY(row_normalize, Op::kRowNormalize)
IFSL_UNARY(softmax_rows, Op::kSoftmaxRows)
IFSL_UNARY(layer_norm_rows, Op::kLayerNormRows)
IFSL_UNARY(gelu, Op::kGelu)
IFSL_UNARY(mean_rows, Op::kMeanRows)
IFSL_UNARY(sum_squares, Op::kSumSquares)

#undef IFSL_UNARY
#undef IFSL_BINARY

Var Tape::scale(Var a, double c) {
  Node n;
  n.op = Op::kScale;
  n.in = {a.id};
  n.scalar = c;
  return record(std::move(n));
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Node n;
  n.op = Op::kConcatRows;
  for (Var p : parts) n.in.push_back(p.id);
  return record(std::move(n));
}

Var Tape::slice_rows(Var a, std::size_t begin, std::size_t end) {
  Node n;
  n.op = Op::kSliceRows;
  n.in = {a.id};
  n.index = {begin, end};
  return record(std::move(n));
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> rows) {
  Node n;
  n.op = Op::kGatherRows;
  n.in = {a.id};
  n.index = std::move(rows);
  return record(std::move(n));
}

Var Tape::cross_entropy(Var logits, std::vector<std::size_t> targets) {
  Node n;
  n.op = Op::kCrossEntropy;
  n.in = {logits.id};
  n.index = std::move(targets);
  return record(std::move(n));
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad_live) return n.grad;
  return Tensor(n.value.shape(), 0.0);
}

void Tape::set_leaf(Var v, Tensor value) {
  Node& n = node(v);
  if (n.op != Op::kLeaf) throw std::invalid_argument("set_leaf on a non-leaf node");
  if (!value.same_shape(n.value)) {
    throw ShapeError("set_leaf: shape " + shape_string(value.shape()) + " != " +
                     shape_string(n.value.shape()));
  }
  n.value = std::move(value);
  stale_ = true;
}

void Tape::replay() {
  for (Node& n : nodes_) {
    if (n.op != Op::kLeaf) evaluate(n);
  }
  stale_ = false;
}

void Tape::truncate(std::size_t mark) {
  if (mark > nodes_.size()) throw std::out_of_range("truncate beyond tape size");
  nodes_.resize(mark);
}

void Tape::evaluate(Node& n) {
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[std::size_t(n.in[k])].value; };
  const Op op = n.op;
  switch (op) {
    case Op::kLeaf:
      return;
    case Op::kMatMul:
      require(in(0).cols() == in(1).rows(), op,
              shape_string(in(0).shape()) + " * " + shape_string(in(1).shape()));
      n.value = ifsl::matmul(in(0), in(1));
      break;
    case Op::kMatMulNT:
      require(in(0).cols() == in(1).cols(), op,
              shape_string(in(0).shape()) + " * T" + shape_string(in(1).shape()));
      n.value = ifsl::matmul_nt(in(0), in(1));
      break;
    case Op::kTranspose:
      n.value = ifsl::transpose(in(0));
      break;
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require(a.rows() == b.rows() && a.cols() == b.cols(), op,
              shape_string(a.shape()) + " vs " + shape_string(b.shape()));
      Tensor out = Tensor::matrix(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = op == Op::kAdd ? a[i] + b[i] : op == Op::kSub ? a[i] - b[i] : a[i] * b[i];
      }
      n.value = std::move(out);
      break;
    }
    case Op::kAddRow:
    case Op::kMulRow: {
      const Tensor& a = in(0);
      const Tensor& r = in(1);
      require(r.rows() == 1 && r.cols() == a.cols(), op,
              "row " + shape_string(r.shape()) + " vs " + shape_string(a.shape()));
      Tensor out = Tensor::matrix(a.rows(), a.cols());
      const std::size_t c = a.cols();
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j)
          out(i, j) = op == Op::kAddRow ? a(i, j) + r[j] : a(i, j) * r[j];
      n.value = std::move(out);
      break;
    }
    case Op::kScale: {
      Tensor out = Tensor::matrix(in(0).rows(), in(0).cols());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = n.scalar * in(0)[i];
      n.value = std::move(out);
      break;
    }
    case Op::kScaleBy: {
      require(in(1).size() == 1, op, "scale must be 1x1");
      const double s = in(1)[0];
      Tensor out = Tensor::matrix(in(0).rows(), in(0).cols());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * in(0)[i];
      n.value = std::move(out);
      break;
    }
    case Op::kConcatRows: {
      const std::size_t c = in(0).cols();
      std::size_t r = 0;
      for (std::size_t k = 0; k < n.in.size(); ++k) {
        require(in(k).cols() == c, op, "column mismatch");
        r += in(k).rows();
      }
      std::vector<double> data;
      data.reserve(r * c);
      for (std::size_t k = 0; k < n.in.size(); ++k) {
        const auto d = in(k).data();
        data.insert(data.end(), d.begin(), d.end());
      }
      n.value = Tensor({r, c}, std::move(data));
      break;
    }
    case Op::kSliceRows: {
      const std::size_t b = n.index[0], e = n.index[1];
      require(b < e && e <= in(0).rows(), op, "bad row range");
      const std::size_t c = in(0).cols();
      const auto d = in(0).data();
      n.value = Tensor({e - b, c}, std::vector<double>(d.begin() + long(b * c), d.begin() + long(e * c)));
      break;
    }
    case Op::kGatherRows: {
      require(!n.index.empty(), op, "no rows");
      const std::size_t c = in(0).cols();
      Tensor out = Tensor::matrix(n.index.size(), c);
      for (std::size_t r = 0; r < n.index.size(); ++r) {
        require(n.index[r] < in(0).rows(), op, "row index out of range");
        const auto src = in(0).row_span(n.index[r]);
        std::copy(src.begin(), src.end(), out.row_span(r).begin());
      }
      n.value = std::move(out);
      break;
    }
    case Op::kRowNormalize: {
      const Tensor& a = in(0);
      Tensor out = Tensor::matrix(a.rows(), a.cols());
      n.cache.assign(a.rows(), 0.0);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const double norm = l2_norm(a.row_span(r));
        if (!(norm > 0.0)) throw NumericError("row_normalize: zero-norm row");
        n.cache[r] = norm;
        for (std::size_t j = 0; j < a.cols(); ++j) out(r, j) = a(r, j) / norm;
      }
      n.value = std::move(out);
      break;
    }
    case Op::kSoftmaxRows: {
      const Tensor& a = in(0);
      Tensor out = Tensor::matrix(a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r)
        softmax_into(a.row_span(r).data(), a.cols(), out.row_span(r).data());
      n.value = std::move(out);
      break;
    }
    case Op::kLayerNormRows: {
      const Tensor& a = in(0);
      const std::size_t c = a.cols();
      Tensor out = Tensor::matrix(a.rows(), c);
      n.cache.assign(a.rows(), 0.0);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto x = a.row_span(r);
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= double(c);
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= double(c);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        n.cache[r] = inv;
        for (std::size_t j = 0; j < c; ++j) out(r, j) = (x[j] - mean) * inv;
      }
      n.value = std::move(out);
      break;
    }
    case Op::kGelu: {
      const Tensor& a = in(0);
      Tensor out = Tensor::matrix(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        out[i] = 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x)));
      }
      n.value = std::move(out);
      break;
    }
    case Op::kMeanRows: {
      const Tensor& a = in(0);
      Tensor out = Tensor::matrix(1, a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(r, j);
      for (std::size_t j = 0; j < a.cols(); ++j) out[j] /= double(a.rows());
      n.value = std::move(out);
      break;
    }
    case Op::kSumSquares: {
      double s = 0.0;
      for (double v : in(0).data()) s += v * v;
      n.value = Tensor::scalar(s);
      break;
    }
    case Op::kCrossEntropy: {
      const Tensor& a = in(0);
      require(a.cols() >= 2, op, "needs at least two classes");
      require(n.index.size() == a.rows(), op, "one target per row required");
      n.cache.assign(a.size(), 0.0);
      double loss = 0.0;
      for (std::size_t r = 0; r < a.rows(); ++r) {
        if (n.index[r] >= a.cols()) {
          throw std::out_of_range("cross_entropy: class index " + std::to_string(n.index[r]) +
                                  " out of range for " + std::to_string(a.cols()) + " logits");
        }
        const double* x = a.row_span(r).data();
        loss += stable_nll(x, a.cols(), n.index[r]);
        softmax_into(x, a.cols(), n.cache.data() + r * a.cols());
      }
      n.value = Tensor::scalar(loss / double(a.rows()));
      break;
    }
  }
  if (!n.value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op_name(op));
  }
}

Tensor& Tape::grad_slot(int id) {
  Node& n = nodes_[std::size_t(id)];
  if (!n.grad_live) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.grad_live = true;
  }
  return n.grad;
}

void Tape::backward(Var output) {
  const Tensor& v = value(output);
  if (v.size() != 1) throw ShapeError("backward without seed requires a 1x1 output");
  backward(output, Tensor(v.shape(), 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
  if (stale_) throw std::logic_error("backward before forward: call replay() after set_leaf()");
  const Node& out = node(output);
  if (seed.rows() != out.value.rows() || seed.cols() != out.value.cols()) {
    throw ShapeError("backward seed " + shape_string(seed.shape()) + " does not match output " +
                     shape_string(out.value.shape()));
  }
  for (Node& n : nodes_) n.grad_live = false;
  if (!out.requires_grad) return;
  Tensor& g = grad_slot(output.id);
  std::copy(seed.data().begin(), seed.data().end(), g.data().begin());
  for (int id = output.id; id >= 0; --id) {
    const Node& n = nodes_[std::size_t(id)];
    if (!n.grad_live || n.op == Op::kLeaf || !n.requires_grad) continue;
    propagate(n);
  }
  for (const Node& n : nodes_) {
    if (n.op == Op::kLeaf && n.grad_live && !n.grad.all_finite()) {
      throw NumericError("non-finite gradient reached a leaf");
    }
  }
}

void Tape::propagate(const Node& n) {
  const Tensor& g = n.grad;
  auto val = [&](std::size_t k) -> const Tensor& { return nodes_[std::size_t(n.in[k])].value; };
  auto wants = [&](std::size_t k) { return nodes_[std::size_t(n.in[k])].requires_grad; };
  auto slot = [&](std::size_t k) -> Tensor& { return grad_slot(n.in[k]); };

  switch (n.op) {
    case Op::kLeaf:
      return;
    case Op::kMatMul: {
      // C = A B: dA = G B^T, dB = A^T G
      if (wants(0)) {
        Tensor ga = ifsl::matmul_nt(g, val(1));
        axpy(1.0, ga.data(), slot(0).data());
      }
      if (wants(1)) {
        const Tensor& a = val(0);
        Tensor& gb = slot(1);
        const std::size_t k = a.cols(), m = g.cols();
        for (std::size_t i = 0; i < a.rows(); ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a(i, p);
            if (av == 0.0) continue;
            double* row = gb.data().data() + p * m;
            const double* grow = g.data().data() + i * m;
            for (std::size_t j = 0; j < m; ++j) row[j] += av * grow[j];
          }
      }
      break;
    }
    case Op::kMatMulNT: {
      // C = A B^T: dA = G B, dB = G^T A
      if (wants(0)) {
        Tensor ga = ifsl::matmul(g, val(1));
        axpy(1.0, ga.data(), slot(0).data());
      }
      if (wants(1)) {
        const Tensor& a = val(0);
        Tensor& gb = slot(1);
        const std::size_t k = a.cols();
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) {
            const double gv = g(i, j);
            if (gv == 0.0) continue;
            double* row = gb.data().data() + j * k;
            const double* arow = a.data().data() + i * k;
            for (std::size_t p = 0; p < k; ++p) row[p] += gv * arow[p];
          }
      }
      break;
    }
    case Op::kTranspose:
      if (wants(0)) {
        Tensor gt = ifsl::transpose(g);
        axpy(1.0, gt.data(), slot(0).data());
      }
      break;
    case Op::kAdd:
      if (wants(0)) axpy(1.0, g.data(), slot(0).data());
      if (wants(1)) axpy(1.0, g.data(), slot(1).data());
      break;
    case Op::kSub:
      if (wants(0)) axpy(1.0, g.data(), slot(0).data());
      if (wants(1)) axpy(-1.0, g.data(), slot(1).data());
      break;
    case Op::kMul: {
      if (wants(0)) {
        auto ga = slot(0).data();
        const auto b = val(1).data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (wants(1)) {
        auto gb = slot(1).data();
        const auto a = val(0).data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
      break;
    }
    case Op::kAddRow: {
      if (wants(0)) axpy(1.0, g.data(), slot(0).data());
      if (wants(1)) {
        auto gr = slot(1).data();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(r, j);
      }
      break;
    }
    case Op::kMulRow: {
      const Tensor& a = val(0);
      const Tensor& row = val(1);
      if (wants(0)) {
        Tensor& ga = slot(0);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < g.cols(); ++j) ga(r, j) += g(r, j) * row[j];
      }
      if (wants(1)) {
        auto gr = slot(1).data();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(r, j) * a(r, j);
      }
      break;
    }
    case Op::kScale:
      if (wants(0)) axpy(n.scalar, g.data(), slot(0).data());
      break;
    case Op::kScaleBy: {
      if (wants(0)) axpy(val(1)[0], g.data(), slot(0).data());
      if (wants(1)) slot(1)[0] += dot(g.data(), val(0).data());
      break;
    }
    case Op::kConcatRows: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.in.size(); ++k) {
        const std::size_t len = val(k).size();
        if (wants(k)) {
          auto dst = slot(k).data();
          for (std::size_t i = 0; i < len; ++i) dst[i] += g[offset + i];
        }
        offset += len;
      }
      break;
    }
    case Op::kSliceRows: {
      if (!wants(0)) break;
      const std::size_t c = g.cols();
      auto dst = slot(0).data();
      const std::size_t base = n.index[0] * c;
      for (std::size_t i = 0; i < g.size(); ++i) dst[base + i] += g[i];
      break;
    }
    case Op::kGatherRows: {
      if (!wants(0)) break;
      Tensor& ga = slot(0);
      for (std::size_t r = 0; r < n.index.size(); ++r) axpy(1.0, g.row_span(r), ga.row_span(n.index[r]));
      break;
    }
    case Op::kRowNormalize: {
      if (!wants(0)) break;
      const Tensor& y = n.value;
      Tensor& ga = slot(0);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        const double yg = dot(y.row_span(r), g.row_span(r));
        const double inv = 1.0 / n.cache[r];
        for (std::size_t j = 0; j < y.cols(); ++j) ga(r, j) += (g(r, j) - y(r, j) * yg) * inv;
      }
      break;
    }
    case Op::kSoftmaxRows: {
      if (!wants(0)) break;
      const Tensor& y = n.value;
      Tensor& ga = slot(0);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        const double yg = dot(y.row_span(r), g.row_span(r));
        for (std::size_t j = 0; j < y.cols(); ++j) ga(r, j) += y(r, j) * (g(r, j) - yg);
      }
      break;
    }
    case Op::kLayerNormRows: {
      if (!wants(0)) break;
      const Tensor& y = n.value;
      Tensor& ga = slot(0);
      const double c = double(y.cols());
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double gmean = 0.0, gy = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) {
          gmean += g(r, j);
          gy += g(r, j) * y(r, j);
        }
        gmean /= c;
        gy /= c;
        const double inv = n.cache[r];
        for (std::size_t j = 0; j < y.cols(); ++j) ga(r, j) += inv * (g(r, j) - gmean - y(r, j) * gy);
      }
      break;
    }
    case Op::kGelu: {
      if (!wants(0)) break;
      const Tensor& a = val(0);
      auto ga = slot(0).data();
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        const double t = std::tanh(kGeluK * (x + kGeluC * x * x * x));
        const double dt = (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * x * x);
        ga[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
      }
      break;
    }
    case Op::kMeanRows: {
      if (!wants(0)) break;
      Tensor& ga = slot(0);
      const double inv = 1.0 / double(ga.rows());
      for (std::size_t r = 0; r < ga.rows(); ++r)
        for (std::size_t j = 0; j < ga.cols(); ++j) ga(r, j) += g[j] * inv;
      break;
    }
    case Op::kSumSquares:
      if (wants(0)) axpy(2.0 * g[0], val(0).data(), slot(0).data());
      break;
    case Op::kCrossEntropy: {
      if (!wants(0)) break;
      Tensor& ga = slot(0);
      const std::size_t rows = ga.rows(), cols = ga.cols();
      const double s = g[0] / double(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) {
          const double p = n.cache[r * cols + j] - (j == n.index[r] ? 1.0 : 0.0);
          ga(r, j) += s * p;
        }
      break;
    }
  }
}

}  // namespace ifsl
