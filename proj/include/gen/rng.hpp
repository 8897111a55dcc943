#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace gen {

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distributions below are hand-rolled because the std distribution objects
// are implementation-defined and would break cross-toolchain reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Unbiased integer in [0, n). n must be > 0.
  uint64_t uniform_index(uint64_t n) {
    // rejection sampling over the top multiple of n
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform in [0, 1) with 53 bits.
  double uniform01() { return double(eng_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = (double(eng_() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    double u2 = double(eng_() >> 11) * 0x1.0p-53;
    double m = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = m * std::sin(a);
    has_spare_ = true;
    return m * std::cos(a);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), uniform, order randomized.
  std::vector<uint64_t> sample_without_replacement(uint64_t n, uint64_t k);

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over bytes; stable across platforms.
uint64_t stable_hash(std::string_view s);

// Module-level seed derivation: one master seed fans out to independent
// streams keyed by a label plus up to two indices.
uint64_t derive_seed(uint64_t master, std::string_view label, uint64_t a = 0,
                     uint64_t b = 0);

}  // namespace gen
