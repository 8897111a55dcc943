#pragma once

// Shared toy fixtures for the unit and acceptance suites.

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gen/graph.hpp"
#include "gen/split.hpp"
#include "gen/train.hpp"

namespace fixtures {

// Small random multi-relational graph over `entities` entities and
// `relations` relations; density is edges per entity.
inline std::vector<gen::NameTriple> random_rows(std::size_t entities,
                                                std::size_t relations,
                                                std::size_t edges,
                                                uint64_t seed) {
  gen::Rng rng(seed);
  std::vector<gen::NameTriple> rows;
  for (std::size_t i = 0; i < edges; ++i) {
    std::size_t h = rng.uniform_index(entities);
    std::size_t t = rng.uniform_index(entities);
    std::size_t r = rng.uniform_index(relations);
    rows.push_back({"e" + std::to_string(h), "r" + std::to_string(r),
                    "e" + std::to_string(t)});
  }
  return rows;
}

inline std::string temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("gen_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << content;
}

// A dense toy split for episode/model/train tests: every entity in one
// relation band, a few unseen.
struct ToyWorld {
  gen::Vocabulary vocab;
  gen::GraphStore graph;
  gen::OOGSplit split;
  gen::Manifest manifest;  // vocab + split + in-graph store
};

inline ToyWorld toy_world(std::size_t entities = 14, std::size_t relations = 2,
                          std::size_t edges = 60, uint64_t seed = 11,
                          std::size_t n_unseen = 4) {
  ToyWorld w;
  auto rows = random_rows(entities, relations, edges, seed);
  auto [vocab, graph] = gen::build_graph(rows, false);
  w.vocab = vocab;
  gen::SplitConfig cfg;
  cfg.min_degree = 2;
  cfg.max_degree = 1000;
  cfg.n_unseen = n_unseen;
  cfg.ratios = {2, 1, 1};
  cfg.seed = seed;
  w.split = gen::make_split(graph, vocab, cfg);
  w.manifest.vocab = w.vocab;
  w.manifest.split = w.split;
  w.manifest.in_graph_store =
      gen::graph_from_triplets(w.vocab, w.split.in_graph);
  w.graph = std::move(graph);
  return w;
}

}  // namespace fixtures
