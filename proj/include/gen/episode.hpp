#pragma once

#include <bit>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "gen/graph.hpp"
#include "gen/rng.hpp"
#include "gen/split.hpp"

namespace gen {

// One simulated unseen entity inside a task: its support (<= K triplets) and
// the remaining associated triplets as queries.
struct TaskEntity {
  EntityId entity;
  std::vector<Triplet> support;
  std::vector<Triplet> query;
};

struct Task {
  std::vector<TaskEntity> entities;
  std::size_t shot_size = 0;  // requested K; support may be capped at M_i - 1
};

// Membership view over known-true triplets. Training filters against
// in-graph + meta-train only so validation/test facts never steer sampling;
// evaluation filters against everything.
class TripletFilter {
 public:
  TripletFilter(std::size_t entity_count, std::size_t relation_count)
      : entities_(entity_count), relations_(relation_count) {
    set_.reserve(1024);
  }
  void add(const Triplet& t) { set_.insert(pack(t)); }
  void add_all(const std::vector<Triplet>& ts) {
    for (const Triplet& t : ts) add(t);
  }
  bool contains(EntityId h, RelationId r, EntityId t) const {
    return set_.count(pack(Triplet{h, r, t})) > 0;
  }
  bool contains(const Triplet& t) const { return set_.count(pack(t)) > 0; }
  std::size_t size() const { return set_.size(); }

 private:
  uint64_t pack(const Triplet& t) const {
    return (uint64_t(t.head) * relations_ + t.rel) * entities_ + t.tail;
  }
  std::size_t entities_;
  std::size_t relations_;
  std::unordered_set<uint64_t> set_;
};

// N distinct entities with >= 2 associated triplets each; support is a
// uniform subset of min(K, M_i - 1) triplets, the rest become the query.
Task sample_task(const std::vector<UnseenEntity>& meta_set, std::size_t n,
                 std::size_t k, Rng& rng);

// Uniform corruptions of the non-task slot with seen entities, rejecting the
// original entity and anything in known_positives. Fails after 1000 draws
// per sample.
std::vector<Triplet> corrupt(const Triplet& q, EntityId task_entity,
                             const std::vector<EntityId>& seen_pool,
                             const TripletFilter& known_positives,
                             std::size_t num_neg, Rng& rng);

// All entities never selected as unseen, ascending id.
std::vector<EntityId> seen_entity_pool(const OOGSplit& split,
                                       std::size_t entity_count);

struct CurriculumState {
  uint64_t iteration = 1;       // 1-based
  uint64_t max_iteration = 1;
  std::size_t target_shots = 1;  // K at the end of the schedule
  bool enabled = true;
};

// floor(log2(max_iteration / iteration)) + K while enabled; plain K when
// disabled. Monotone non-increasing in the iteration, never below K.
std::size_t curriculum_shots(const CurriculumState& c);

}  // namespace gen
