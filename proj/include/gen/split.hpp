#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gen/graph.hpp"
#include "gen/rng.hpp"

namespace gen {

enum class MetaSet : int { Train = 0, Valid = 1, Test = 2 };
inline const char* meta_set_name(MetaSet s) {
  switch (s) {
    case MetaSet::Train: return "meta_train";
    case MetaSet::Valid: return "meta_valid";
    default: return "meta_test";
  }
}

struct SplitConfig {
  uint64_t min_degree = 10;
  uint64_t max_degree = 100;
  std::size_t n_unseen = 5000;
  // Meta-set sizes are proportional to these; the integer remainder goes to
  // train. Using absolute counts that sum to n_unseen reproduces them exactly.
  std::array<uint64_t, 3> ratios = {5, 2, 3};
  uint64_t seed = 42;

  void validate() const;
};

struct UnseenEntity {
  EntityId entity;
  std::vector<Triplet> associated;  // every kept graph triplet touching it
};

struct SplitStats {
  std::size_t cross_set_reassigned = 0;  // triplets moved to the smaller-id set
  std::size_t dropped_entities = 0;      // left with <2 associated triplets
  std::vector<Triplet> dropped_triplets; // lost entirely with their entity
};

// Out-of-graph benchmark: the in-graph plus three disjoint meta-sets of
// unseen entities with their associated triplets.
struct OOGSplit {
  std::vector<Triplet> in_graph;
  std::array<std::vector<UnseenEntity>, 3> meta_sets;
  SplitConfig config;
  uint64_t vocab_hash = 0;
  SplitStats stats;
  std::vector<EntityId> dropped;  // selected as unseen but left unevaluable

  const std::vector<UnseenEntity>& meta(MetaSet s) const {
    return meta_sets[std::size_t(s)];
  }
  // Union over all three meta-sets.
  std::vector<EntityId> all_unseen() const;
  bool is_unseen(EntityId e) const;

  // Populated by the constructor helpers below.
  std::vector<uint8_t> unseen_mask;  // entity id -> 1 if in any meta-set
  void rebuild_mask(std::size_t entity_count);
};

// Uniform sample of n_unseen distinct entities whose raw triplet count lies
// in [min_degree, max_degree]. Counts come from the non-inverse graph.
std::vector<EntityId> select_unseen(const GraphStore& g,
                                    const SplitConfig& cfg, Rng& rng);

// Shuffles then slices proportionally to cfg ratios; remainder goes to train.
std::array<std::vector<EntityId>, 3> partition_meta_sets(
    std::vector<EntityId> unseen, const std::array<uint64_t, 3>& ratios,
    Rng& rng);

// Separates in-graph triplets from unseen-associated ones. A triplet whose
// unseen endpoints span two meta-sets is assigned to the set of its smallest
// unseen entity id and counted in stats. Entities left with fewer than two
// associated triplets are dropped; triplets that thereby vanish from every
// list are recorded in stats.dropped_triplets.
OOGSplit build_split(const GraphStore& g, const Vocabulary& vocab,
                     const std::array<std::vector<EntityId>, 3>& partition,
                     const SplitConfig& cfg);

// One-call pipeline used by the CLI.
OOGSplit make_split(const GraphStore& g, const Vocabulary& vocab,
                    const SplitConfig& cfg);

// Manifest directory layout: meta.json, vocab_entities.txt,
// vocab_relations.txt, in_graph.tsv, meta_{train,valid,test}.tsv and
// meta_{train,valid,test}.entities.txt. Checksums of the data files live in
// meta.json; read verifies them and the format version.
void write_manifest(const OOGSplit& split, const Vocabulary& vocab,
                    const std::string& dir);

struct Manifest {
  Vocabulary vocab;
  OOGSplit split;
  GraphStore in_graph_store;  // indexed store over split.in_graph
};

Manifest read_manifest(const std::string& dir);

}  // namespace gen
