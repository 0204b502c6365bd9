#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ifsl/dataset.hpp"
#include "ifsl/model.hpp"

namespace ifsl {

inline const std::string kEvalTemplate = "a photo of a {class}";

// Top-1 accuracy as a fraction in [0, 1].
double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels);

// Row-wise argmax of embeddings * classifier^T.
std::vector<std::size_t> predict(const Tensor& embeddings, const ClassifierMatrix& classifier);

std::vector<std::string> class_names(const MultimodalDataset& ds,
                                     const std::vector<std::uint32_t>& classes);
std::vector<std::uint32_t> all_classes(const MultimodalDataset& ds);

// Zero-shot top-1 over `classes` (labels are positions within `classes`),
// evaluated on every sample of those classes in `split`.
double zero_shot_accuracy(const MiniClipModel& model, const MultimodalDataset& ds,
                          const std::vector<std::uint32_t>& classes, Split split = Split::kTest,
                          const std::string& templ = kEvalTemplate);
double zero_shot_accuracy(const MiniClipModel& model, const MultimodalDataset& ds,
                          Split split = Split::kTest);

}  // namespace ifsl
