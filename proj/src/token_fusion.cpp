#include "ifsl/token_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ifsl {

std::vector<std::size_t> top_tokens(const Tensor& tokens, std::size_t n_prompts) {
  const std::size_t n = tokens.rows();
  if (n_prompts > n) {
    throw ShapeError("top_tokens: n_p = " + std::to_string(n_prompts) + " exceeds " +
                     std::to_string(n) + " tokens");
  }
  std::vector<double> score(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (double v : tokens.row_span(r)) score[r] += v * v;
    score[r] /= double(tokens.cols());
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(n_prompts);
  std::sort(order.begin(), order.end());
  return order;
}

Tensor select_top_tokens(const Tensor& tokens, std::size_t n_prompts) {
  const auto idx = top_tokens(tokens, n_prompts);
  Tensor out = Tensor::matrix(idx.size(), tokens.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = tokens.row_span(idx[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  return out;
}

Tensor token_fusion(const Tensor& visual, const Tensor& prompts) {
  Tape tape;
  Var v = tape.constant(visual);
  Var p = tape.constant(prompts);
  return tape.value(token_fusion(tape, v, p));
}

Var token_fusion(Tape& tape, Var visual, Var prompts) {
  const Tensor& zp = tape.value(prompts);
  const Tensor& zv = tape.value(visual);
  if (zp.cols() != zv.cols()) {
    throw ShapeError("token_fusion: prompt width " + std::to_string(zp.cols()) +
                     " != token width " + std::to_string(zv.cols()));
  }
  Var top = tape.gather_rows(visual, top_tokens(zv, zp.rows()));
  Var scores = tape.scale(tape.matmul_nt(top, prompts), 1.0 / std::sqrt(double(zv.cols())));
  return tape.matmul(tape.softmax_rows(scores), top);
}

}  // namespace ifsl
