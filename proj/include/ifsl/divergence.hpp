#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ifsl/dataset.hpp"
#include "ifsl/model.hpp"
#include "ifsl/tensor.hpp"

namespace ifsl {

enum class MmdEstimator { kBiased, kUnbiased };

// Squared MMD with the RBF kernel exp(-|x-y|^2 / (2 sigma^2)). The unbiased
// form needs n, m >= 2 and falls back to the biased form otherwise.
double mmd2(const Tensor& a, const Tensor& b, double sigma,
            MmdEstimator estimator = MmdEstimator::kUnbiased);
// Median of pooled pairwise distances; 1 if every distance is zero.
double median_bandwidth(const Tensor& a, const Tensor& b);

struct PermutationTest {
  double statistic = 0.0;
  double threshold = 0.0;  // 95th percentile of the permutation null
  double p_value = 1.0;
  bool rejected() const { return statistic > threshold; }
};
PermutationTest mmd_permutation_test(const Tensor& a, const Tensor& b, std::size_t permutations,
                                     std::uint64_t seed);

// Embeddings used by the dataset-level metrics: test-split images, and one
// eval-template prompt per class.
Tensor image_embeddings(const MiniClipModel& model, const MultimodalDataset& ds,
                        Split split = Split::kTest);
Tensor text_embeddings(const MiniClipModel& model, const MultimodalDataset& ds);

// Mean of image-side and text-side unbiased MMD^2, each with its own median bandwidth.
double unified_mmd(const MultimodalDataset& a, const MultimodalDataset& b, const MiniClipModel& model,
                   MmdEstimator estimator = MmdEstimator::kUnbiased);

// Proxy-A distance from a logistic domain classifier on image embeddings.
double pad(const Tensor& a, const Tensor& b, std::uint64_t seed = 0);
double pad(const MultimodalDataset& a, const MultimodalDataset& b, const MiniClipModel& model,
           std::uint64_t seed = 0);

enum class WeightScheme { kMmd, kPad, kTaxonomy, kUniform };
const char* scheme_name(WeightScheme s);
WeightScheme parse_scheme(const std::string& s);
inline constexpr WeightScheme kAllSchemes[] = {WeightScheme::kMmd, WeightScheme::kPad,
                                               WeightScheme::kTaxonomy, WeightScheme::kUniform};

struct SimilarityWeights {
  WeightScheme scheme = WeightScheme::kUniform;
  std::vector<double> distances;
  std::vector<double> weights;
  bool fell_back = false;  // every distance was zero; uniform weights used
};

// w_i = d_i / sum(d); negative distances (unbiased MMD noise) are clamped to 0.
SimilarityWeights weights_from_distances(WeightScheme scheme, std::vector<double> distances);
SimilarityWeights compute_weights(const MultimodalDataset& unlearned,
                                  const std::vector<const MultimodalDataset*>& validation,
                                  WeightScheme scheme, const MiniClipModel& model);

// Weighted sum of per-set accuracy losses (in points).
double tkl(const std::vector<double>& knowledge_lost, const std::vector<double>& weights);
double tkl_uniform(const std::vector<double>& knowledge_lost);

struct KnowledgeReport {
  std::vector<std::string> sets;
  std::vector<double> acc_before;  // percentages
  std::vector<double> acc_after;
  std::vector<double> knowledge_lost;
  std::vector<std::pair<WeightScheme, double>> tkl;

  double tkl_for(WeightScheme s) const;
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

KnowledgeReport knowledge_report(const MiniClipModel& before, const MiniClipModel& after,
                                 const MultimodalDataset& unlearned,
                                 const std::vector<const MultimodalDataset*>& validation,
                                 const std::vector<WeightScheme>& schemes);

}  // namespace ifsl
