#pragma once

#include <cstddef>
#include <vector>

#include "ifsl/tape.hpp"
#include "ifsl/tensor.hpp"

namespace ifsl {

// Indices of the n_p rows with the largest mean squared activation, returned
// in their original order. Ties prefer the lower index.
std::vector<std::size_t> top_tokens(const Tensor& tokens, std::size_t n_prompts);
Tensor select_top_tokens(const Tensor& tokens, std::size_t n_prompts);

// Token fusion: prompts attend over the highest-activation visual tokens,
//   out = softmax_rows(Zv_top * Zp^T / sqrt(D)) * Zv_top
Tensor token_fusion(const Tensor& visual, const Tensor& prompts);
Var token_fusion(Tape& tape, Var visual, Var prompts);

}  // namespace ifsl
