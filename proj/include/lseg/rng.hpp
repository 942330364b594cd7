#pragma once

#include <cstdint>
#include <random>

#include "lseg/mat.hpp"

namespace lseg {

// Deterministic generator. The mt19937_64 bit stream is pinned by the
// standard; the value transforms are hand-rolled so sequences are identical
// across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive bounds.
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw shape_error("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  // Standard normal via Box-Muller (cosine branch only).
  double normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  void fill_normal(Mat& m, double stddev = 1.0) {
    for (int i = 0; i < m.size(); ++i) m[i] = stddev * normal();
  }

  void fill_uniform(Mat& m, double lo, double hi) {
    for (int i = 0; i < m.size(); ++i) m[i] = uniform(lo, hi);
  }

  // Independent child stream; advances this generator.
  Rng fork() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace lseg
