#pragma once

// Small shared fixtures: a toy roster and a briefly pretrained model, cached
// per process so several test cases can share one pretraining run.

#include <map>
#include <string>
#include <vector>

#include "ifsl/dataset.hpp"
#include "ifsl/pretrain.hpp"

namespace ifsl::testing {

inline GeneratorConfig toy_generator(const std::string& name, int branch, std::size_t classes = 4,
                                     std::uint64_t seed = 5) {
  GeneratorConfig g;
  g.name = name;
  g.branch = {branch, 0};
  g.branching = {2, 4};
  g.n_classes = classes;
  g.train_per_class = 6;
  g.test_per_class = 6;
  g.n_tokens = 8;
  g.dim = 32;
  g.active_dims = 6;
  g.sigma_within = 0.3;
  g.seed = seed;
  return g;
}

inline ModelConfig toy_model_config() {
  ModelConfig c;
  c.hidden_dim = 32;
  c.embed_dim = 16;
  c.n_layers = 2;
  c.mlp_dim = 64;
  c.image_tokens = 8;
  return c;
}

// Three small datasets and a model pretrained on all of them.
struct ToyWorld {
  std::vector<MultimodalDataset> datasets;
  MiniClipModel model;
};

inline const ToyWorld& toy_world() {
  static const ToyWorld world = [] {
    std::vector<MultimodalDataset> ds = {generate(toy_generator("toya", 0)), generate(toy_generator("toyb", 1)),
                                         generate(toy_generator("toyc", 2))};
    PretrainConfig pc;
    pc.model = toy_model_config();
    pc.steps = 150;
    pc.seed = 9;
    std::vector<const MultimodalDataset*> ptrs;
    for (const auto& d : ds) ptrs.push_back(&d);
    MiniClipModel m = pretrain(ptrs, pc).model;
    return ToyWorld{std::move(ds), std::move(m)};
  }();
  return world;
}

}  // namespace ifsl::testing
