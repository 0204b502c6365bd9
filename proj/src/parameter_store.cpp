#include "ifsl/parameter_store.hpp"

#include <cmath>
#include <stdexcept>

namespace ifsl {

std::size_t ParameterStore::add(const std::string& name, Tensor value) {
  if (name.empty()) throw std::invalid_argument("parameter name must be nonempty");
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, tensors_.size());
  names_.push_back(name);
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

std::size_t ParameterStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::size_t ParameterStore::offset(std::size_t i) const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < i; ++k) n += tensors_.at(k).size();
  return n;
}

std::vector<double> ParameterStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const auto& t : tensors_) flat.insert(flat.end(), t.data().begin(), t.data().end());
  return flat;
}

void ParameterStore::assign_flat(const std::vector<double>& flat) {
  if (flat.size() != total_size()) throw ShapeError("assign_flat: layout length mismatch");
  std::size_t k = 0;
  for (auto& t : tensors_)
    for (double& v : t.data()) v = flat[k++];
}

void ParameterStore::round_to_f32() {
  for (auto& t : tensors_)
    for (double& v : t.data()) v = double(float(v));
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam: params/grads count mismatch");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("Adam: parameter list changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    const auto g = grads[k].data();
    if (g.size() != p.size()) throw ShapeError("Adam: gradient shape mismatch");
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      p[i] -= opt_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps);
    }
  }
}

}  // namespace ifsl
