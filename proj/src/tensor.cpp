#include "ifsl/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ifsl {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_product(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor({rows, cols}, fill);
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() == 2) return shape_[0];
  throw ShapeError("matrix view requires rank <= 2, got " + shape_string(shape_));
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() == 2) return shape_[1];
  throw ShapeError("matrix view requires rank <= 2, got " + shape_string(shape_));
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  }
  Tensor c = Tensor::matrix(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = pc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt " + shape_string(a.shape()) + " * T" + shape_string(b.shape()));
  }
  Tensor c = Tensor::matrix(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      const double* ar = pa + i * k;
      const double* br = pb + j * k;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      c(i, j) = s;
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor t = Tensor::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t(j, i) = a(i, j);
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace ifsl
