#pragma once

#include <cstdint>
#include <vector>

namespace dgl {

/// Deterministic, platform-independent generator (splitmix64 core). The
/// standard distributions are implementation-defined, so uniform draws are
/// built from raw bits here.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream; children with distinct tags never collide.
  Rng split(std::uint64_t tag) {
    std::uint64_t s = state_ ^ (0xd1342543de82ef95ULL * (tag + 1));
    Rng child(s);
    child.next_u64();
    return child;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::uint64_t state_;
};

}  // namespace dgl
