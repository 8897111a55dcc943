#include "gen/episode.hpp"

#include <algorithm>

#include "gen/error.hpp"

namespace gen {

Task sample_task(const std::vector<UnseenEntity>& meta_set, std::size_t n,
                 std::size_t k, Rng& rng) {
  if (k == 0) fail(ErrorKind::Config, "sample_task: shot size must be >= 1");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < meta_set.size(); ++i)
    if (meta_set[i].associated.size() >= 2) eligible.push_back(i);
  if (eligible.size() < n)
    fail(ErrorKind::Data, "sample_task: need " + std::to_string(n) +
                              " entities with >=2 triplets, meta-set has " +
                              std::to_string(eligible.size()));
  std::vector<uint64_t> picks =
      rng.sample_without_replacement(eligible.size(), n);

  Task task;
  task.shot_size = k;
  task.entities.reserve(n);
  for (uint64_t pi : picks) {
    const UnseenEntity& u = meta_set[eligible[pi]];
    TaskEntity te;
    te.entity = u.entity;
    std::vector<Triplet> pool = u.associated;
    rng.shuffle(pool);
    // query must stay non-empty, so support caps at M_i - 1
    std::size_t s = std::min(k, pool.size() - 1);
    te.support.assign(pool.begin(), pool.begin() + s);
    te.query.assign(pool.begin() + s, pool.end());
    task.entities.push_back(std::move(te));
  }
  return task;
}

std::vector<Triplet> corrupt(const Triplet& q, EntityId task_entity,
                             const std::vector<EntityId>& seen_pool,
                             const TripletFilter& known_positives,
                             std::size_t num_neg, Rng& rng) {
  if (q.head != task_entity && q.tail != task_entity)
    fail(ErrorKind::Data, "corrupt: query does not contain the task entity");
  if (seen_pool.empty()) fail(ErrorKind::Data, "corrupt: empty entity pool");
  // corrupt the slot holding the non-task entity; for self-loops the tail
  const bool corrupt_tail = q.head == task_entity;
  const EntityId original = corrupt_tail ? q.tail : q.head;

  std::vector<Triplet> out;
  out.reserve(num_neg);
  for (std::size_t i = 0; i < num_neg; ++i) {
    bool found = false;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      EntityId cand = seen_pool[rng.uniform_index(seen_pool.size())];
      if (cand == original) continue;
      Triplet neg = q;
      (corrupt_tail ? neg.tail : neg.head) = cand;
      if (known_positives.contains(neg)) continue;
      out.push_back(neg);
      found = true;
      break;
    }
    if (!found)
      fail(ErrorKind::Data,
           "corrupt: rejection cap exceeded, candidate pool exhausted");
  }
  return out;
}

std::vector<EntityId> seen_entity_pool(const OOGSplit& split,
                                       std::size_t entity_count) {
  std::vector<EntityId> pool;
  pool.reserve(entity_count);
  for (EntityId e = 0; e < entity_count; ++e)
    if (!split.is_unseen(e)) pool.push_back(e);
  return pool;
}

std::size_t curriculum_shots(const CurriculumState& c) {
  if (c.iteration < 1 || c.iteration > c.max_iteration)
    fail(ErrorKind::Config, "curriculum: iteration out of [1, max_iteration]");
  if (!c.enabled) return c.target_shots;
  // floor(log2(x)) for real x >= 1 equals the bit width of floor(x) minus 1
  uint64_t q = c.max_iteration / c.iteration;
  return std::size_t(std::bit_width(q)) - 1 + c.target_shots;
}

}  // namespace gen
