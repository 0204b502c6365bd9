#include "ifsl/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ifsl/evaluation.hpp"
#include "ifsl/rng.hpp"

namespace ifsl {

namespace {

double sq_dist(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = x[k] - y[k];
    s += d * d;
  }
  return s;
}

// Sum in ascending order, so that any permutation of the same multiset gives
// the same bits. Keeps MMD exactly symmetric and exactly zero on self-pairs.
double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

double kernel_sum(const Tensor& a, const Tensor& b, double gamma, bool skip_diagonal) {
  std::vector<double> k;
  k.reserve(a.rows() * b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      if (skip_diagonal && i == j) continue;
      k.push_back(std::exp(-gamma * sq_dist(a.row_span(i), b.row_span(j))));
    }
  return sorted_sum(k);
}

Tensor stack(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::matrix(a.rows() + b.rows(), a.cols());
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + std::ptrdiff_t(a.size()));
  return out;
}

void check_pair(const Tensor& a, const Tensor& b, const char* who) {
  if (a.empty() || b.empty()) throw std::invalid_argument(std::string(who) + ": empty sample");
  if (a.cols() != b.cols()) throw ShapeError(std::string(who) + ": feature width mismatch");
}

}  // namespace

double mmd2(const Tensor& a, const Tensor& b, double sigma, MmdEstimator estimator) {
  check_pair(a, b, "mmd2");
  if (!(sigma > 0.0)) throw std::invalid_argument("mmd2: bandwidth must be > 0");
  const double gamma = 1.0 / (2.0 * sigma * sigma);
  const double n = double(a.rows()), m = double(b.rows());
  const bool unbiased = estimator == MmdEstimator::kUnbiased && a.rows() >= 2 && b.rows() >= 2;
  const double kaa = kernel_sum(a, a, gamma, unbiased);
  const double kbb = kernel_sum(b, b, gamma, unbiased);
  const double kab = kernel_sum(a, b, gamma, false);
  if (unbiased) return kaa / (n * (n - 1)) + kbb / (m * (m - 1)) - 2.0 * kab / (n * m);
  return kaa / (n * n) + kbb / (m * m) - 2.0 * kab / (n * m);
}

double median_bandwidth(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "median_bandwidth");
  const Tensor z = stack(a, b);
  std::vector<double> d;
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = i + 1; j < z.rows(); ++j) d.push_back(std::sqrt(sq_dist(z.row_span(i), z.row_span(j))));
  if (d.empty()) return 1.0;
  const auto mid = d.begin() + std::ptrdiff_t(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

PermutationTest mmd_permutation_test(const Tensor& a, const Tensor& b, std::size_t permutations,
                                     std::uint64_t seed) {
  check_pair(a, b, "mmd_permutation_test");
  if (a.rows() < 2 || b.rows() < 2) throw std::invalid_argument("mmd_permutation_test: need n, m >= 2");
  if (permutations == 0) throw std::invalid_argument("mmd_permutation_test: no permutations");
  const Tensor z = stack(a, b);
  const std::size_t n = a.rows(), total = z.rows();
  const double sigma = median_bandwidth(a, b);
  const double gamma = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> k(total * total);
  for (std::size_t i = 0; i < total; ++i)
    for (std::size_t j = 0; j < total; ++j) k[i * total + j] = std::exp(-gamma * sq_dist(z.row_span(i), z.row_span(j)));

  auto stat = [&](const std::vector<std::size_t>& order) {
    double kaa = 0, kbb = 0, kab = 0;
    for (std::size_t i = 0; i < total; ++i)
      for (std::size_t j = 0; j < total; ++j) {
        if (i == j) continue;
        const double v = k[order[i] * total + order[j]];
        const bool ia = i < n, ja = j < n;
        if (ia && ja) kaa += v;
        else if (!ia && !ja) kbb += v;
        else if (ia) kab += v;
      }
    const double nn = double(n), mm = double(total - n);
    return kaa / (nn * (nn - 1)) + kbb / (mm * (mm - 1)) - 2.0 * kab / (nn * mm);
  };

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  PermutationTest out;
  out.statistic = stat(order);
  Rng rng(seed);
  std::vector<double> null;
  null.reserve(permutations);
  std::size_t exceed = 0;
  for (std::size_t p = 0; p < permutations; ++p) {
    rng.shuffle(order);
    null.push_back(stat(order));
    exceed += null.back() >= out.statistic;
  }
  std::sort(null.begin(), null.end());
  const std::size_t q = std::size_t(std::ceil(0.95 * double(permutations))) - 1;
  out.threshold = null[std::min(q, permutations - 1)];
  out.p_value = double(1 + exceed) / double(1 + permutations);
  return out;
}

Tensor image_embeddings(const MiniClipModel& model, const MultimodalDataset& ds, Split split) {
  std::vector<Tensor> images;
  for (std::size_t i : ds.indices(split)) images.push_back(ds.samples[i].tokens);
  if (images.empty()) throw std::invalid_argument("image_embeddings: empty split of " + ds.name);
  return model.encode_images(images);
}

Tensor text_embeddings(const MiniClipModel& model, const MultimodalDataset& ds) {
  return model.build_classifier(ds.class_names(), kEvalTemplate).weights;
}

double unified_mmd(const MultimodalDataset& a, const MultimodalDataset& b, const MiniClipModel& model,
                   MmdEstimator estimator) {
  const Tensor ia = image_embeddings(model, a), ib = image_embeddings(model, b);
  const Tensor ta = text_embeddings(model, a), tb = text_embeddings(model, b);
  const double image = mmd2(ia, ib, median_bandwidth(ia, ib), estimator);
  const double text = mmd2(ta, tb, median_bandwidth(ta, tb), estimator);
  return 0.5 * (image + text);
}

namespace {

// Held-out errors of a logistic domain classifier trained on `train`.
std::size_t domain_errors(const std::vector<std::span<const double>>& xs, const std::vector<double>& ys,
                          const std::vector<std::size_t>& train, const std::vector<std::size_t>& test) {
  const std::size_t dim = xs.front().size();
  // Standardize with training statistics so one step size fits every scale.
  std::vector<double> mean(dim, 0.0), scale(dim, 0.0);
  for (std::size_t i : train)
    for (std::size_t k = 0; k < dim; ++k) mean[k] += xs[i][k] / double(train.size());
  for (std::size_t i : train)
    for (std::size_t k = 0; k < dim; ++k) scale[k] += (xs[i][k] - mean[k]) * (xs[i][k] - mean[k]) / double(train.size());
  for (double& s : scale) s = s > 1e-24 ? 1.0 / std::sqrt(s) : 0.0;
  auto feature = [&](std::size_t i, std::size_t k) { return (xs[i][k] - mean[k]) * scale[k]; };

  std::vector<double> w(dim, 0.0);
  double bias = 0.0;
  const double lr = 0.5;
  for (int step = 0; step < 200; ++step) {
    std::vector<double> gw(dim, 0.0);
    double gb = 0.0;
    for (std::size_t i : train) {
      double z = bias;
      for (std::size_t k = 0; k < dim; ++k) z += w[k] * feature(i, k);
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double r = (p - ys[i]) / double(train.size());
      for (std::size_t k = 0; k < dim; ++k) gw[k] += r * feature(i, k);
      gb += r;
    }
    for (std::size_t k = 0; k < dim; ++k) w[k] -= lr * gw[k];
    bias -= lr * gb;
  }
  std::size_t errors = 0;
  for (std::size_t i : test) {
    double z = bias;
    for (std::size_t k = 0; k < dim; ++k) z += w[k] * feature(i, k);
    errors += (z > 0.0 ? 1.0 : 0.0) != ys[i];
  }
  return errors;
}

}  // namespace

// Every sample is held out once across five shuffled 80/20 splits, which keeps
// the error estimate stable at small sample counts.
double pad(const Tensor& a, const Tensor& b, std::uint64_t seed) {
  check_pair(a, b, "pad");
  if (a.rows() < 20 || b.rows() < 20) throw std::invalid_argument("pad: each domain needs >= 20 samples");
  constexpr std::size_t kFolds = 5;
  Rng rng(seed);
  std::vector<std::span<const double>> xs;
  std::vector<double> ys;
  std::vector<std::size_t> fold;
  for (const auto* src : {&a, &b}) {
    std::vector<std::size_t> idx(src->rows());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      xs.push_back(src->row_span(idx[i]));
      ys.push_back(src == &a ? 0.0 : 1.0);
      fold.push_back(i % kFolds);
    }
  }
  std::size_t errors = 0;
  for (std::size_t f = 0; f < kFolds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < xs.size(); ++i) (fold[i] == f ? test : train).push_back(i);
    errors += domain_errors(xs, ys, train, test);
  }
  const double eps = double(errors) / double(xs.size());
  return std::clamp(2.0 * (1.0 - 2.0 * eps), 0.0, 2.0);
}

double pad(const MultimodalDataset& a, const MultimodalDataset& b, const MiniClipModel& model,
           std::uint64_t seed) {
  return pad(image_embeddings(model, a), image_embeddings(model, b), seed);
}

const char* scheme_name(WeightScheme s) {
  switch (s) {
    case WeightScheme::kMmd: return "mmd";
    case WeightScheme::kPad: return "pad";
    case WeightScheme::kTaxonomy: return "taxonomy";
    case WeightScheme::kUniform: return "uniform";
  }
  return "?";
}

WeightScheme parse_scheme(const std::string& s) {
  for (WeightScheme w : kAllSchemes)
    if (s == scheme_name(w)) return w;
  throw std::invalid_argument("unknown weighting scheme: " + s);
}

SimilarityWeights weights_from_distances(WeightScheme scheme, std::vector<double> distances) {
  if (distances.empty()) throw std::invalid_argument("compute_weights: no validation sets");
  SimilarityWeights out;
  out.scheme = scheme;
  for (double& d : distances) {
    if (!std::isfinite(d)) throw NumericError("compute_weights: non-finite distance");
    d = std::max(d, 0.0);
  }
  if (scheme == WeightScheme::kUniform) std::fill(distances.begin(), distances.end(), 1.0);
  out.distances = distances;
  const double total = std::accumulate(distances.begin(), distances.end(), 0.0);
  out.weights.resize(distances.size());
  if (total <= 0.0) {
    out.fell_back = true;
    std::fill(out.weights.begin(), out.weights.end(), 1.0 / double(distances.size()));
    return out;
  }
  for (std::size_t i = 0; i < distances.size(); ++i) out.weights[i] = distances[i] / total;
  return out;
}

SimilarityWeights compute_weights(const MultimodalDataset& unlearned,
                                  const std::vector<const MultimodalDataset*>& validation,
                                  WeightScheme scheme, const MiniClipModel& model) {
  std::vector<double> d;
  for (const auto* v : validation) {
    switch (scheme) {
      case WeightScheme::kMmd: d.push_back(unified_mmd(unlearned, *v, model)); break;
      case WeightScheme::kPad: d.push_back(pad(unlearned, *v, model)); break;
      case WeightScheme::kTaxonomy: d.push_back(taxonomy_distance(unlearned, *v)); break;
      case WeightScheme::kUniform: d.push_back(1.0); break;
    }
  }
  return weights_from_distances(scheme, std::move(d));
}

double tkl(const std::vector<double>& knowledge_lost, const std::vector<double>& weights) {
  if (knowledge_lost.size() != weights.size()) throw std::invalid_argument("tkl: mismatched set lists");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * knowledge_lost[i];
  return s;
}

double tkl_uniform(const std::vector<double>& knowledge_lost) {
  if (knowledge_lost.empty()) throw std::invalid_argument("tkl: no validation sets");
  double s = 0.0;
  for (double v : knowledge_lost) s += v;
  return s / double(knowledge_lost.size());
}

double KnowledgeReport::tkl_for(WeightScheme s) const {
  for (const auto& [scheme, v] : tkl)
    if (scheme == s) return v;
  throw std::out_of_range(std::string("knowledge report has no TKL for ") + scheme_name(s));
}

std::string KnowledgeReport::csv() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  out << "set,acc_before,acc_after,knowledge_lost\n";
  for (std::size_t i = 0; i < sets.size(); ++i) {
    out << sets[i] << ',' << acc_before[i] << ',' << acc_after[i] << ',' << knowledge_lost[i] << '\n';
  }
  for (const auto& [scheme, v] : tkl) out << "TKL:" << scheme_name(scheme) << ",,," << v << '\n';
  return out.str();
}

void KnowledgeReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << csv();
}

KnowledgeReport knowledge_report(const MiniClipModel& before, const MiniClipModel& after,
                                 const MultimodalDataset& unlearned,
                                 const std::vector<const MultimodalDataset*>& validation,
                                 const std::vector<WeightScheme>& schemes) {
  KnowledgeReport r;
  for (const auto* v : validation) {
    r.sets.push_back(v->name);
    r.acc_before.push_back(100.0 * zero_shot_accuracy(before, *v));
    r.acc_after.push_back(100.0 * zero_shot_accuracy(after, *v));
    r.knowledge_lost.push_back(r.acc_before.back() - r.acc_after.back());
  }
  for (WeightScheme s : schemes) {
    const double value = s == WeightScheme::kUniform
                             ? tkl_uniform(r.knowledge_lost)
                             : tkl(r.knowledge_lost, compute_weights(unlearned, validation, s, before).weights);
    r.tkl.emplace_back(s, value);
  }
  return r;
}

}  // namespace ifsl
