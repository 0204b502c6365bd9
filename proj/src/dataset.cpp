#include "ifsl/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "binary_io.hpp"
#include "ifsl/rng.hpp"

namespace ifsl {

using nlohmann::json;

void MultimodalDataset::validate() const {
  if (name.empty()) throw std::invalid_argument("dataset name must be nonempty");
  if (classes.empty()) throw std::invalid_argument("dataset " + name + " has no classes");
  std::set<std::uint32_t> ids;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].id != i) throw std::invalid_argument("class ids must be 0..n-1 in order");
    if (classes[i].taxonomy_path.empty()) throw std::invalid_argument("empty taxonomy path");
    if (classes[i].taxonomy_path.front() != classes[0].taxonomy_path.front()) {
      throw std::invalid_argument("taxonomy paths of " + name + " do not share a root");
    }
    ids.insert(classes[i].id);
  }
  std::vector<std::size_t> train(classes.size(), 0), test(classes.size(), 0);
  for (const auto& s : samples) {
    if (s.class_id >= classes.size()) {
      throw std::invalid_argument("sample refers to unknown class " + std::to_string(s.class_id));
    }
    if (s.tokens.rows() != n_tokens || s.tokens.cols() != dim) {
      throw ShapeError("sample token grid " + shape_string(s.tokens.shape()) + " in " + name);
    }
    (s.split == Split::kTrain ? train : test)[s.class_id]++;
  }
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (train[c] == 0 || test[c] == 0) {
      throw std::invalid_argument("class " + classes[c].name + " of " + name +
                                  " lacks train or test samples");
    }
  }
}

std::vector<std::string> MultimodalDataset::class_names() const {
  std::vector<std::string> out;
  for (const auto& c : classes) out.push_back(c.name);
  return out;
}

std::vector<std::string> MultimodalDataset::vocab() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& c : classes) {
    std::istringstream is(c.name);
    std::string w;
    while (is >> w)
      if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

std::vector<std::size_t> MultimodalDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) out.push_back(i);
  return out;
}

std::vector<std::size_t> MultimodalDataset::indices(Split split, std::uint32_t class_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split && samples[i].class_id == class_id) out.push_back(i);
  return out;
}

std::size_t MultimodalDataset::count(Split split) const {
  return std::size_t(std::count_if(samples.begin(), samples.end(),
                                   [&](const Sample& s) { return s.split == split; }));
}

// ---------------------------------------------------------------------------

void GeneratorConfig::validate() const {
  if (name.empty() || name.find_first_of(" /\\,") != std::string::npos) {
    throw std::invalid_argument("generator: dataset name must be a nonempty token");
  }
  if (branch.empty()) throw std::invalid_argument("generator: branch must name a domain");
  std::size_t leaves = 1;
  for (int b : branching) {
    if (b < 1 || b > 15) throw std::invalid_argument("generator: branching factors must be in [1,15]");
    leaves *= std::size_t(b);
  }
  for (int b : branch)
    if (b < 0 || b > 14) throw std::invalid_argument("generator: branch indices must be in [0,14]");
  if (n_classes == 0 || n_classes > leaves) {
    throw std::invalid_argument("generator: n_classes must be in [1, product(branching)]");
  }
  if (train_per_class == 0 || test_per_class == 0) {
    throw std::invalid_argument("generator: each split needs samples for every class");
  }
  if (n_tokens == 0 || dim == 0) throw std::invalid_argument("generator: empty token grid");
  if (active.empty()) {
    if (active_dims == 0 || active_dims > dim) throw std::invalid_argument("generator: bad active_dims");
  } else {
    std::set<std::size_t> seen;
    for (std::size_t j : active) {
      if (j >= dim || !seen.insert(j).second) {
        throw std::invalid_argument("generator: active coordinates must be distinct and < dim");
      }
    }
  }
  if (!(sigma_within >= 0.0) || !(sigma_between > sigma_within)) {
    throw std::invalid_argument("generator: need sigma_between > sigma_within >= 0");
  }
  if (!(domain_spread >= 0.0)) throw std::invalid_argument("generator: domain_spread must be >= 0");
}

std::int64_t child_node(std::int64_t parent, int index) { return parent * 16 + index + 1; }

std::string node_word(std::int64_t node_id) {
  static const char* kSyllables[16] = {"ka", "lo", "mi", "nu", "pe", "ra", "si", "to",
                                       "vu", "be", "do", "fa", "gi", "ho", "ju", "ze"};
  if (node_id < 0) throw std::invalid_argument("node_word: negative id");
  std::string digits;
  std::int64_t v = node_id;
  do {
    digits.insert(0, kSyllables[v % 16]);
    v /= 16;
  } while (v > 0);
  return digits;
}

namespace {

constexpr std::uint64_t kOffsetTag = 0x6f6666736574ULL;
constexpr std::uint64_t kActiveTag = 0x616374697665ULL;

std::vector<double> node_offset(std::uint64_t seed, std::int64_t node, std::size_t dim, double scale,
                                const std::vector<std::size_t>* active) {
  Rng rng(mix_seed(mix_seed(seed, kOffsetTag), std::uint64_t(node)));
  std::vector<double> off(dim, 0.0);
  if (active) {
    for (std::size_t j : *active) off[j] = rng.normal(0.0, scale);
  } else {
    for (double& v : off) v = rng.normal(0.0, scale);
  }
  return off;
}

}  // namespace

MultimodalDataset generate(const GeneratorConfig& config) {
  config.validate();
  MultimodalDataset ds;
  ds.name = config.name;
  ds.n_tokens = config.n_tokens;
  ds.dim = config.dim;

  // Path from the root to the dataset node; depth 1 is the domain.
  std::vector<std::int64_t> prefix = {0};
  for (int b : config.branch) prefix.push_back(child_node(prefix.back(), b));
  const std::int64_t domain = prefix[1];
  Rng active_rng(mix_seed(mix_seed(config.seed, kActiveTag), std::uint64_t(domain)));
  auto active = config.active.empty() ? active_rng.sample_without_replacement(config.dim, config.active_dims)
                                      : config.active;
  std::sort(active.begin(), active.end());

  std::vector<double> base(config.dim, 0.0);
  for (std::size_t depth = 1; depth < prefix.size(); ++depth) {
    const double scale = depth == 1 ? config.domain_spread : 0.5 * config.domain_spread;
    const auto off = node_offset(config.seed, prefix[depth], config.dim, scale, &active);
    for (std::size_t j = 0; j < config.dim; ++j) base[j] += off[j];
  }

  // Leaves below the dataset node in depth-first order.
  std::vector<std::vector<std::int64_t>> leaves;
  std::vector<std::int64_t> path = prefix;
  auto walk = [&](auto&& self, std::size_t level) -> void {
    if (leaves.size() == config.n_classes) return;
    if (level == config.branching.size()) {
      leaves.push_back(path);
      return;
    }
    for (int i = 0; i < config.branching[level]; ++i) {
      path.push_back(child_node(path.back(), i));
      self(self, level + 1);
      path.pop_back();
    }
  };
  walk(walk, 0);

  std::vector<std::vector<double>> prototypes;
  for (std::size_t c = 0; c < leaves.size(); ++c) {
    const auto& leaf = leaves[c];
    std::vector<double> proto = base;
    for (std::size_t depth = prefix.size(); depth < leaf.size(); ++depth) {
      const auto off = node_offset(config.seed, leaf[depth], config.dim, config.sigma_between, &active);
      for (std::size_t j = 0; j < config.dim; ++j) proto[j] += off[j];
    }
    prototypes.push_back(std::move(proto));
    ds.classes.push_back({std::uint32_t(c), node_word(leaf.back()), leaf});
  }

  Rng noise(mix_seed(config.seed, fnv1a64(config.name)));
  for (std::size_t c = 0; c < leaves.size(); ++c) {
    for (Split split : {Split::kTrain, Split::kTest}) {
      const std::size_t n = split == Split::kTrain ? config.train_per_class : config.test_per_class;
      for (std::size_t i = 0; i < n; ++i) {
        Tensor tokens = Tensor::matrix(config.n_tokens, config.dim);
        for (std::size_t t = 0; t < config.n_tokens; ++t)
          for (std::size_t j = 0; j < config.dim; ++j)
            tokens(t, j) = double(float(prototypes[c][j] + noise.normal(0.0, config.sigma_within)));
        ds.samples.push_back({std::uint32_t(c), split, std::move(tokens)});
      }
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------

std::string encode_samples(const MultimodalDataset& ds) {
  std::string out = "MMDS";
  detail::put_u32(out, 1);
  detail::put_u32(out, std::uint32_t(ds.samples.size()));
  detail::put_u32(out, std::uint32_t(ds.n_tokens));
  detail::put_u32(out, std::uint32_t(ds.dim));
  out.reserve(out.size() + ds.samples.size() * (5 + 4 * ds.n_tokens * ds.dim));
  for (const auto& s : ds.samples) {
    detail::put_u32(out, s.class_id);
    detail::put_u8(out, std::uint8_t(s.split));
    for (double v : s.tokens.data()) detail::put_f32(out, float(v));
  }
  return out;
}

std::uint64_t dataset_fingerprint(const MultimodalDataset& ds) { return fnv1a64(encode_samples(ds)); }

void save_dataset(const MultimodalDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);
  json classes = json::array();
  for (const auto& c : ds.classes) {
    classes.push_back({{"id", c.id}, {"name", c.name}, {"taxonomy_path", c.taxonomy_path}});
  }
  json manifest = {{"name", ds.name},
                   {"n_e", ds.n_tokens},
                   {"D", ds.dim},
                   {"classes", classes},
                   {"splits", {{"train", ds.count(Split::kTrain)}, {"test", ds.count(Split::kTest)}}},
                   {"vocab", ds.vocab()}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  std::ofstream bin(dir / "samples.bin", std::ios::binary);
  const std::string bytes = encode_samples(ds);
  bin.write(bytes.data(), std::streamsize(bytes.size()));
  if (!bin) throw std::runtime_error("failed to write " + (dir / "samples.bin").string());
}

namespace {
std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
}  // namespace

MultimodalDataset load_dataset(const std::filesystem::path& dir) {
  const json manifest = json::parse(read_file(dir / "manifest.json"));
  MultimodalDataset ds;
  ds.name = manifest.at("name").get<std::string>();
  ds.n_tokens = manifest.at("n_e").get<std::size_t>();
  ds.dim = manifest.at("D").get<std::size_t>();
  for (const auto& c : manifest.at("classes")) {
    ds.classes.push_back({c.at("id").get<std::uint32_t>(), c.at("name").get<std::string>(),
                          c.at("taxonomy_path").get<std::vector<std::int64_t>>()});
  }
  const std::string bytes = read_file(dir / "samples.bin");
  detail::Reader r(bytes, "samples.bin");
  if (r.take(4) != "MMDS") throw std::runtime_error("samples.bin: bad magic");
  if (r.u32() != 1) throw std::runtime_error("samples.bin: unsupported version");
  const std::uint32_t n = r.u32();
  const std::uint32_t tokens = r.u32();
  const std::uint32_t dim = r.u32();
  if (tokens != ds.n_tokens || dim != ds.dim) {
    throw std::runtime_error("samples.bin grid does not match manifest");
  }
  ds.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Sample s;
    s.class_id = r.u32();
    const std::uint8_t split = r.u8();
    if (split > 1) throw std::runtime_error("samples.bin: bad split tag");
    s.split = Split(split);
    s.tokens = Tensor::matrix(tokens, dim);
    for (double& v : s.tokens.data()) v = double(r.f32());
    ds.samples.push_back(std::move(s));
  }
  if (!r.done()) throw std::runtime_error("samples.bin: trailing bytes");
  const auto& splits = manifest.at("splits");
  if (splits.at("train").get<std::size_t>() != ds.count(Split::kTrain) ||
      splits.at("test").get<std::size_t>() != ds.count(Split::kTest)) {
    throw std::runtime_error("manifest split counts do not match samples.bin");
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------

std::size_t FewShotEpisode::label_of(std::uint32_t class_id) const {
  auto it = std::find(classes.begin(), classes.end(), class_id);
  if (it == classes.end()) throw std::out_of_range("class not in episode");
  return std::size_t(it - classes.begin());
}

FewShotEpisode sample_episode(const MultimodalDataset& ds, std::size_t m, std::size_t k,
                              std::uint64_t seed) {
  if (m == 0 || m > ds.classes.size()) {
    throw std::invalid_argument("sample_episode: m must be in [1, " +
                                std::to_string(ds.classes.size()) + "]");
  }
  Rng rng(seed);
  FewShotEpisode ep;
  ep.seed = seed;
  if (m == ds.classes.size()) {
    for (const auto& c : ds.classes) ep.classes.push_back(c.id);
  } else {
    for (std::size_t i : rng.sample_without_replacement(ds.classes.size(), m)) {
      ep.classes.push_back(std::uint32_t(i));
    }
    std::sort(ep.classes.begin(), ep.classes.end());
  }
  for (std::uint32_t c : ep.classes) {
    const auto pool = ds.indices(Split::kTrain, c);
    if (pool.size() < k) {
      throw std::invalid_argument("sample_episode: class " + ds.classes[c].name + " has " +
                                  std::to_string(pool.size()) + " train samples, need " +
                                  std::to_string(k));
    }
    for (std::size_t i : rng.sample_without_replacement(pool.size(), k)) ep.support.push_back(pool[i]);
  }
  for (std::uint32_t c : ep.classes) {
    for (std::size_t i : ds.indices(Split::kTest, c)) ep.query.push_back(i);
  }
  return ep;
}

std::size_t leaf_distance(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
  std::size_t common = 0;
  while (common < a.size() && common < b.size() && a[common] == b[common]) ++common;
  if (common == 0) throw std::invalid_argument("taxonomy paths do not share a root");
  return (a.size() - common) + (b.size() - common);
}

double taxonomy_distance(const MultimodalDataset& a, const MultimodalDataset& b) {
  if (a.classes.empty() || b.classes.empty()) throw std::invalid_argument("taxonomy_distance: no classes");
  if (a.classes[0].taxonomy_path.front() != b.classes[0].taxonomy_path.front()) {
    throw std::invalid_argument("taxonomy_distance: disjoint taxonomies");
  }
  double total = 0.0;
  for (const auto& ca : a.classes)
    for (const auto& cb : b.classes) total += double(leaf_distance(ca.taxonomy_path, cb.taxonomy_path));
  return total / double(a.classes.size() * b.classes.size());
}

}  // namespace ifsl
