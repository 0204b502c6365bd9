#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ifsl/tensor.hpp"

namespace ifsl {

enum class Split : std::uint8_t { kTrain = 0, kTest = 1 };

struct ClassInfo {
  std::uint32_t id = 0;
  std::string name;
  std::vector<std::int64_t> taxonomy_path;  // node ids, root -> leaf
};

struct Sample {
  std::uint32_t class_id = 0;
  Split split = Split::kTrain;
  Tensor tokens;  // n_tokens x dim
};

struct MultimodalDataset {
  std::string name;
  std::size_t n_tokens = 0;
  std::size_t dim = 0;
  std::vector<ClassInfo> classes;
  std::vector<Sample> samples;

  void validate() const;
  std::vector<std::string> class_names() const;
  // Words used by class names; the dataset's contribution to the model vocabulary.
  std::vector<std::string> vocab() const;
  std::vector<std::size_t> indices(Split split) const;
  std::vector<std::size_t> indices(Split split, std::uint32_t class_id) const;
  std::size_t count(Split split) const;
};

// Synthetic data laid out on a shared taxonomy. Node ids are a pure function
// of the path (child = parent * 16 + index + 1, root = 0), so datasets generated
// from different configs with the same seed agree on shared ancestors.
struct GeneratorConfig {
  std::string name = "dataset";
  std::vector<int> branch = {0, 0};     // path below the root to the dataset node
  std::vector<int> branching = {2, 5};  // fan-out of each level below the dataset node
  std::size_t n_classes = 10;
  std::size_t train_per_class = 24;
  std::size_t test_per_class = 10;
  std::size_t n_tokens = 8;
  std::size_t dim = 32;          // latent prototype dimension == token width
  std::size_t active_dims = 8;   // coordinates carrying class structure within a domain
  // Explicit class-structure coordinates; when nonempty, overrides the random
  // active_dims subset drawn per domain.
  std::vector<std::size_t> active;
  double sigma_within = 0.3;     // per-token noise
  double sigma_between = 1.0;    // class / genus prototype spread
  double domain_spread = 1.5;    // offset of a domain from the root
  std::uint64_t seed = 1;

  void validate() const;
};

MultimodalDataset generate(const GeneratorConfig& config);

// Deterministic pronounceable word for a taxonomy node id; injective.
std::string node_word(std::int64_t node_id);
std::int64_t child_node(std::int64_t parent, int index);

// On-disk layout: <dir>/manifest.json + <dir>/samples.bin.
void save_dataset(const MultimodalDataset& dataset, const std::filesystem::path& dir);
MultimodalDataset load_dataset(const std::filesystem::path& dir);
// Exact bytes of samples.bin.
std::string encode_samples(const MultimodalDataset& dataset);
std::uint64_t dataset_fingerprint(const MultimodalDataset& dataset);

struct FewShotEpisode {
  std::vector<std::uint32_t> classes;  // dataset class ids; episode label = position
  std::vector<std::size_t> support;    // sample indices, grouped by class
  std::vector<std::size_t> query;      // every test sample of the chosen classes
  std::uint64_t seed = 0;

  std::size_t label_of(std::uint32_t class_id) const;
};

FewShotEpisode sample_episode(const MultimodalDataset& dataset, std::size_t m, std::size_t k,
                              std::uint64_t seed);

// Mean shortest-path length between leaves over all cross-dataset class pairs.
double taxonomy_distance(const MultimodalDataset& a, const MultimodalDataset& b);
std::size_t leaf_distance(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b);

}  // namespace ifsl
