#include "gen/rng.hpp"

namespace gen {

std::vector<uint64_t> Rng::sample_without_replacement(uint64_t n, uint64_t k) {
  // Partial Fisher-Yates over an index vector; O(n) memory is fine at the
  // vocabulary sizes this project handles.
  std::vector<uint64_t> idx(n);
  for (uint64_t i = 0; i < n; ++i) idx[i] = i;
  std::vector<uint64_t> out;
  out.reserve(k);
  for (uint64_t i = 0; i < k; ++i) {
    uint64_t j = i + uniform_index(n - i);
    std::swap(idx[i], idx[j]);
    out.push_back(idx[i]);
  }
  return out;
}

uint64_t stable_hash(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

static uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, std::string_view label, uint64_t a,
                     uint64_t b) {
  uint64_t h = stable_hash(label);
  h = splitmix64(h ^ splitmix64(master));
  h = splitmix64(h ^ splitmix64(a + 0x517cc1b727220a95ull));
  h = splitmix64(h ^ splitmix64(b + 0x2545f4914f6cdd1dull));
  return h;
}

}  // namespace gen
