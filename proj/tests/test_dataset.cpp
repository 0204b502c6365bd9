#include <algorithm>
#include <deque>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "ifsl/dataset.hpp"

using namespace ifsl;
using testing::toy_generator;

namespace {

// Flattened squared distance between two token grids.
double sq_dist(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Shortest path between two taxonomy nodes by breadth-first search over the
// tree implied by the paths themselves.
std::size_t bfs_distance(const std::vector<std::vector<std::int64_t>>& paths, std::int64_t from, std::int64_t to) {
  std::map<std::int64_t, std::set<std::int64_t>> adj;
  for (const auto& p : paths)
    for (std::size_t i = 1; i < p.size(); ++i) {
      adj[p[i - 1]].insert(p[i]);
      adj[p[i]].insert(p[i - 1]);
    }
  std::map<std::int64_t, std::size_t> dist{{from, 0}};
  std::deque<std::int64_t> q{from};
  while (!q.empty()) {
    auto n = q.front();
    q.pop_front();
    if (n == to) return dist[n];
    for (auto m : adj[n])
      if (!dist.count(m)) {
        dist[m] = dist[n] + 1;
        q.push_back(m);
      }
  }
  throw std::logic_error("unreachable");
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  const auto g = toy_generator("det", 0);
  CHECK(encode_samples(generate(g)) == encode_samples(generate(g)));
  auto g2 = g;
  g2.seed = g.seed + 1;
  CHECK(encode_samples(generate(g)) != encode_samples(generate(g2)));
}

TEST_CASE("zero within-class noise makes samples of a class identical") {
  auto g = toy_generator("quiet", 0);
  g.sigma_within = 0.0;
  const auto ds = generate(g);
  for (const auto& c : ds.classes) {
    std::vector<std::size_t> idx = ds.indices(Split::kTrain, c.id);
    for (std::size_t i : ds.indices(Split::kTest, c.id)) idx.push_back(i);
    for (std::size_t i : idx) CHECK(ds.samples[i].tokens == ds.samples[idx.front()].tokens);
  }
}

TEST_CASE("well separated classes are nearest-centroid separable") {
  auto g = toy_generator("sep", 0, 8);
  g.sigma_within = 0.2;
  g.sigma_between = 1.0;
  const auto ds = generate(g);
  std::vector<Tensor> centroids;
  for (const auto& c : ds.classes) {
    const auto idx = ds.indices(Split::kTrain, c.id);
    Tensor m(ds.samples[idx[0]].tokens.shape());
    for (std::size_t i : idx)
      for (std::size_t j = 0; j < m.size(); ++j) m[j] += ds.samples[i].tokens[j] / double(idx.size());
    centroids.push_back(m);
  }
  std::size_t correct = 0, total = 0;
  for (std::size_t i : ds.indices(Split::kTest)) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < centroids.size(); ++c)
      if (sq_dist(ds.samples[i].tokens, centroids[c]) < sq_dist(ds.samples[i].tokens, centroids[best])) best = c;
    correct += best == ds.samples[i].class_id;
    ++total;
  }
  CHECK(double(correct) / double(total) >= 0.99);
}

TEST_CASE("class names are unique words and paths follow the node numbering") {
  const auto ds = generate(toy_generator("names", 3, 8));
  std::set<std::string> names;
  for (const auto& c : ds.classes) {
    CHECK(names.insert(c.name).second);
    CHECK(c.name.find(' ') == std::string::npos);
    CHECK(c.name == node_word(c.taxonomy_path.back()));
    CHECK(c.taxonomy_path.front() == 0);
    for (std::size_t i = 1; i < c.taxonomy_path.size(); ++i) {
      const auto rel = c.taxonomy_path[i] - 16 * c.taxonomy_path[i - 1] - 1;
      CHECK(rel >= 0);
      CHECK(rel < 16);
    }
  }
  CHECK(child_node(0, 0) == 1);
  CHECK(child_node(1, 2) == 19);
}

TEST_CASE("explicit active coordinates confine class structure") {
  auto g = toy_generator("act", 0, 4);
  g.active = {1, 4, 9};
  g.sigma_within = 0.0;
  g.domain_spread = 0.0;
  const auto ds = generate(g);
  // Without noise or domain offset, every inactive coordinate agrees across classes.
  const Tensor& ref = ds.samples[ds.indices(Split::kTrain, 0)[0]].tokens;
  for (const auto& c : ds.classes) {
    const Tensor& t = ds.samples[ds.indices(Split::kTrain, c.id)[0]].tokens;
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t j = 0; j < t.cols(); ++j)
        if (j != 1 && j != 4 && j != 9) CHECK(t(r, j) == ref(r, j));
  }
  g.active = {1, 1};
  CHECK_THROWS_AS(generate(g), std::invalid_argument);
}

TEST_CASE("episode sampling") {
  const auto ds = generate(toy_generator("epi", 0, 6));
  SUBCASE("support size is m*k and grouped by class") {
    const auto ep = sample_episode(ds, 3, 2, 1);
    CHECK(ep.support.size() == 6);
    for (std::size_t i = 0; i < ep.support.size(); ++i) {
      CHECK(ds.samples[ep.support[i]].class_id == ep.classes[i / 2]);
      CHECK(ds.samples[ep.support[i]].split == Split::kTrain);
    }
    for (std::size_t q : ep.query) CHECK(ds.samples[q].split == Split::kTest);
  }
  SUBCASE("a class with a single train sample forces that sample") {
    auto g = toy_generator("one", 0, 3);
    g.train_per_class = 1;
    const auto small = generate(g);
    const auto ep = sample_episode(small, 3, 1, 7);
    for (std::size_t i = 0; i < 3; ++i) CHECK(ep.support[i] == small.indices(Split::kTrain, ep.classes[i])[0]);
    CHECK_THROWS_AS(sample_episode(small, 3, 2, 7), std::invalid_argument);
  }
  SUBCASE("distinct seeds give distinct supports") {
    std::set<std::vector<std::size_t>> seen;
    for (std::uint64_t s = 0; s < 20; ++s) seen.insert(sample_episode(ds, 6, 2, s).support);
    CHECK(seen.size() == 20);
  }
  SUBCASE("same seed, same episode") {
    CHECK(sample_episode(ds, 4, 3, 11).support == sample_episode(ds, 4, 3, 11).support);
  }
}

TEST_CASE("taxonomy distance") {
  const auto a = generate(toy_generator("ta", 0, 8));
  SUBCASE("single class against itself is zero") {
    MultimodalDataset one = a;
    one.classes.resize(1);
    CHECK(taxonomy_distance(one, one) == 0.0);
  }
  SUBCASE("sibling leaves are two edges apart") {
    CHECK(leaf_distance({0, 1, 17, 273}, {0, 1, 17, 274}) == 2);
  }
  SUBCASE("matches a breadth-first search over 3x3 class sets") {
    const auto b = generate(toy_generator("tb", 2, 8));
    MultimodalDataset a3 = a, b3 = b;
    a3.classes = {a.classes[0], a.classes[3], a.classes[6]};
    b3.classes = {b.classes[1], b.classes[2], b.classes[7]};
    std::vector<std::vector<std::int64_t>> paths;
    for (const auto& c : a3.classes) paths.push_back(c.taxonomy_path);
    for (const auto& c : b3.classes) paths.push_back(c.taxonomy_path);
    double sum = 0.0;
    for (const auto& x : a3.classes)
      for (const auto& y : b3.classes)
        sum += double(bfs_distance(paths, x.taxonomy_path.back(), y.taxonomy_path.back()));
    CHECK(taxonomy_distance(a3, b3) == doctest::Approx(sum / 9.0).epsilon(1e-12));
  }
}

TEST_CASE("save and load round-trip") {
  const auto ds = generate(toy_generator("disk", 1, 5));
  const auto dir = std::filesystem::temp_directory_path() / "ifsl_test_dataset";
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);
  const auto back = load_dataset(dir);
  CHECK(back.name == ds.name);
  CHECK(back.class_names() == ds.class_names());
  CHECK(encode_samples(back) == encode_samples(ds));
  CHECK(dataset_fingerprint(back) == dataset_fingerprint(ds));
  std::filesystem::remove_all(dir);
  CHECK_THROWS(load_dataset(dir));
}
