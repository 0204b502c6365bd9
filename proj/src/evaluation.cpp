#include "ifsl/evaluation.hpp"

#include <algorithm>
#include <stdexcept>

namespace ifsl {

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (labels.empty()) throw std::invalid_argument("accuracy: empty evaluation set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return double(hits) / double(labels.size());
}

std::vector<std::size_t> predict(const Tensor& embeddings, const ClassifierMatrix& classifier) {
  std::vector<std::size_t> out;
  out.reserve(embeddings.rows());
  for (std::size_t r = 0; r < embeddings.rows(); ++r) {
    out.push_back(classify(embeddings.row_span(r), classifier).predicted);
  }
  return out;
}

std::vector<std::string> class_names(const MultimodalDataset& ds,
                                     const std::vector<std::uint32_t>& classes) {
  std::vector<std::string> names;
  for (auto c : classes) names.push_back(ds.classes.at(c).name);
  return names;
}

std::vector<std::uint32_t> all_classes(const MultimodalDataset& ds) {
  std::vector<std::uint32_t> out;
  for (const auto& c : ds.classes) out.push_back(c.id);
  return out;
}

double zero_shot_accuracy(const MiniClipModel& model, const MultimodalDataset& ds,
                          const std::vector<std::uint32_t>& classes, Split split,
                          const std::string& templ) {
  const ClassifierMatrix w = model.build_classifier(class_names(ds, classes), templ);
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  for (std::size_t pos = 0; pos < classes.size(); ++pos) {
    for (std::size_t i : ds.indices(split, classes[pos])) {
      images.push_back(ds.samples[i].tokens);
      labels.push_back(pos);
    }
  }
  const auto pred = predict(model.encode_images(images), w);
  return accuracy(pred, labels);
}

double zero_shot_accuracy(const MiniClipModel& model, const MultimodalDataset& ds, Split split) {
  return zero_shot_accuracy(model, ds, all_classes(ds), split);
}

}  // namespace ifsl
