#pragma once

#include <cstdint>
#include <vector>

#include "gen/graph.hpp"

namespace gen {

// Planted-structure benchmark graph: entities carry a latent (cluster, tag)
// pair, relations link balanced cluster pairs, and each cluster-compatible,
// tag-matched entity pair becomes an edge independently with edge_prob.
// Cluster membership is recoverable from any neighbor, so link prediction on
// the result is learnable from local structure, which is what the synthetic
// training benchmarks rely on. Tags refine the candidate pool so that good
// models can rank well above the cluster-only baseline.
struct SynthConfig {
  std::size_t entities = 300;
  std::size_t relations = 8;
  std::size_t clusters = 8;
  std::size_t tags = 2;
  double edge_prob = 0.8;
  uint64_t seed = 7;
};

std::vector<NameTriple> synth_rows(const SynthConfig& cfg);

}  // namespace gen
