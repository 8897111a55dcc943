#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace gen {

// Dense ids. Entities and relations are interned in first-appearance order,
// so id assignment is a pure function of the input row sequence.
using EntityId = uint32_t;
using RelationId = uint32_t;

struct Triplet {
  EntityId head;
  RelationId rel;
  EntityId tail;

  bool operator==(const Triplet&) const = default;
};

enum class Direction : uint8_t { Outgoing, Incoming };

struct NeighborEdge {
  RelationId rel;
  EntityId neighbor;
  Direction dir;

  bool operator==(const NeighborEdge&) const = default;
};

class Vocabulary {
 public:
  EntityId intern_entity(const std::string& name);
  RelationId intern_relation(const std::string& name);

  bool has_entity(const std::string& name) const {
    return entity_ids_.count(name) > 0;
  }
  bool has_relation(const std::string& name) const {
    return relation_ids_.count(name) > 0;
  }
  EntityId entity_id(const std::string& name) const;
  RelationId relation_id(const std::string& name) const;
  const std::string& entity_name(EntityId id) const;
  const std::string& relation_name(RelationId id) const;

  std::size_t entity_count() const { return entity_names_.size(); }
  std::size_t relation_count() const { return relation_names_.size(); }

  // Number of relations before inverse augmentation. Inverse ids occupy the
  // contiguous block [raw_relation_count, 2*raw_relation_count).
  std::size_t raw_relation_count() const { return raw_relation_count_; }
  void set_raw_relation_count(std::size_t n) { raw_relation_count_ = n; }
  bool is_inverse(RelationId r) const { return r >= raw_relation_count_; }
  RelationId inverse_of(RelationId r) const;

  const std::vector<std::string>& entity_names() const { return entity_names_; }
  const std::vector<std::string>& relation_names() const {
    return relation_names_;
  }

  // Order-sensitive content hash; used as the provenance guard between
  // manifests, checkpoints and reports.
  uint64_t content_hash() const;

 private:
  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::unordered_map<std::string, EntityId> entity_ids_;
  std::unordered_map<std::string, RelationId> relation_ids_;
  std::size_t raw_relation_count_ = 0;
};

// Immutable multi-relational triplet store with a per-entity neighbor index.
// Construction is single-threaded; afterwards safe for concurrent reads.
class GraphStore {
 public:
  GraphStore() = default;
  GraphStore(std::vector<Triplet> triplets, std::size_t entity_count,
             std::size_t relation_count);

  const std::vector<Triplet>& triplets() const { return triplets_; }
  std::size_t size() const { return triplets_.size(); }
  std::size_t entity_count() const { return entity_count_; }
  std::size_t relation_count() const { return relation_count_; }

  bool contains(const Triplet& t) const {
    return triplet_set_.count(pack(t)) > 0;
  }
  bool contains(EntityId h, RelationId r, EntityId t) const {
    return contains(Triplet{h, r, t});
  }

  // Insertion-ordered; isolated entities yield an empty list.
  const std::vector<NeighborEdge>& neighbors(EntityId e) const;

  // Triplet count per entity; each triplet counts at head and tail, so a
  // self-loop contributes 2 to its entity.
  std::vector<uint64_t> entity_frequency() const;

  uint64_t pack(const Triplet& t) const {
    return (uint64_t(t.head) * relation_count_ + t.rel) * entity_count_ +
           t.tail;
  }

 private:
  std::vector<Triplet> triplets_;
  std::unordered_set<uint64_t> triplet_set_;
  std::vector<std::vector<NeighborEdge>> neighbor_index_;
  std::size_t entity_count_ = 0;
  std::size_t relation_count_ = 0;
};

struct NameTriple {
  std::string head;
  std::string rel;
  std::string tail;
};

// One triplet per line, exactly one tab between the three fields, order
// head / relation / tail. Empty lines and lines starting with '#' skip.
// Malformed lines raise with the 1-based line number.
std::vector<NameTriple> parse_triplet_file(const std::string& path);

// Interns names in first-appearance order, drops exact duplicate triplets,
// and optionally stores the inverse triplet (t, r+raw_count, h) for every
// raw one. Duplicate suppression applies before inverse augmentation.
std::pair<Vocabulary, GraphStore> build_graph(
    const std::vector<NameTriple>& rows, bool add_inverses);

// Graph over the same vocabulary from pre-interned triplets.
GraphStore graph_from_triplets(const Vocabulary& vocab,
                               std::vector<Triplet> triplets);

void write_triplet_file(const std::string& path, const Vocabulary& vocab,
                        const std::vector<Triplet>& triplets);

}  // namespace gen
