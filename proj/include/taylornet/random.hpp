// Self-contained splitmix64-based RNG. Standard-library distributions are
// implementation-defined, so uniform/normal are spelled out here to keep
// generated data and parameter initialization stable across toolchains.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "taylornet/tensor.hpp"

namespace taylornet {

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Independent stream; tag keeps substreams (data, init, mode, ...) disjoint.
  Rng fork(uint64_t tag) {
    uint64_t s = next_u64();
    return Rng(s ^ (tag * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
  }

  double uniform01() {
    // 53 random mantissa bits in [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  int uniform_int(int n) {  // [0, n)
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  bool bernoulli(double p) { return uniform01() < p; }

  double normal() {
    // Box-Muller; one value per call keeps the stream position obvious.
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void fill_uniform(Tensor<T>& t, double lo, double hi) {
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
  }

 private:
  uint64_t state_;
};

inline uint64_t hash_str(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

}  // namespace taylornet
