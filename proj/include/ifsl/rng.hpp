#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ifsl {

// mt19937_64 with hand-written distributions. The standard library leaves
// distribution algorithms implementation-defined, which would break
// cross-platform reproducibility of generated datasets.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = std::size_t(index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable 64-bit mixing helpers for deriving child seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace ifsl
