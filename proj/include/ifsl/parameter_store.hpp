#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "ifsl/tensor.hpp"

namespace ifsl {

// Named, shaped parameter tensors in insertion order. The flat layout used
// by Fisher estimates and dampening is the concatenation in that order.
class ParameterStore {
 public:
  std::size_t add(const std::string& name, Tensor value);

  std::size_t count() const { return tensors_.size(); }
  std::size_t total_size() const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const;

  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& at(std::size_t i) { return tensors_.at(i); }
  const Tensor& at(std::size_t i) const { return tensors_.at(i); }
  Tensor& at(const std::string& name) { return tensors_[index_of(name)]; }
  const Tensor& at(const std::string& name) const { return tensors_[index_of(name)]; }

  // Offset of parameter i in the flat layout.
  std::size_t offset(std::size_t i) const;
  std::vector<double> flatten() const;
  void assign_flat(const std::vector<double>& flat);

  // Rounds every value to the nearest float32 so the checkpoint encoding is lossless.
  void round_to_f32();

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed list of tensors; moments are kept per element.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamOptions opt) : opt_(opt) {}

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);
  long steps() const { return t_; }
  const AdamOptions& options() const { return opt_; }

 private:
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace ifsl
