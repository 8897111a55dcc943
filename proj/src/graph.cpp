#include "gen/graph.hpp"

#include <fstream>

#include "gen/error.hpp"
#include "gen/rng.hpp"

namespace gen {

EntityId Vocabulary::intern_entity(const std::string& name) {
  auto it = entity_ids_.find(name);
  if (it != entity_ids_.end()) return it->second;
  EntityId id = EntityId(entity_names_.size());
  entity_names_.push_back(name);
  entity_ids_.emplace(name, id);
  return id;
}

RelationId Vocabulary::intern_relation(const std::string& name) {
  auto it = relation_ids_.find(name);
  if (it != relation_ids_.end()) return it->second;
  RelationId id = RelationId(relation_names_.size());
  relation_names_.push_back(name);
  relation_ids_.emplace(name, id);
  return id;
}

EntityId Vocabulary::entity_id(const std::string& name) const {
  auto it = entity_ids_.find(name);
  if (it == entity_ids_.end())
    fail(ErrorKind::Data, "unknown entity name: " + name);
  return it->second;
}

RelationId Vocabulary::relation_id(const std::string& name) const {
  auto it = relation_ids_.find(name);
  if (it == relation_ids_.end())
    fail(ErrorKind::Data, "unknown relation name: " + name);
  return it->second;
}

const std::string& Vocabulary::entity_name(EntityId id) const {
  if (id >= entity_names_.size()) fail(ErrorKind::Data, "entity id out of range");
  return entity_names_[id];
}

const std::string& Vocabulary::relation_name(RelationId id) const {
  if (id >= relation_names_.size())
    fail(ErrorKind::Data, "relation id out of range");
  return relation_names_[id];
}

RelationId Vocabulary::inverse_of(RelationId r) const {
  if (raw_relation_count_ == 0 ||
      relation_names_.size() != 2 * raw_relation_count_)
    fail(ErrorKind::Data, "vocabulary has no inverse relation block");
  return r < raw_relation_count_ ? RelationId(r + raw_relation_count_)
                                 : RelationId(r - raw_relation_count_);
}

uint64_t Vocabulary::content_hash() const {
  uint64_t h = stable_hash("vocab-v1");
  auto mix = [&h](const std::string& s) {
    h = derive_seed(h, s, s.size());
  };
  mix("entities");
  for (const auto& n : entity_names_) mix(n);
  mix("relations");
  for (const auto& n : relation_names_) mix(n);
  h = derive_seed(h, "raw", raw_relation_count_);
  return h;
}

GraphStore::GraphStore(std::vector<Triplet> triplets, std::size_t entity_count,
                       std::size_t relation_count)
    : triplets_(std::move(triplets)),
      entity_count_(entity_count),
      relation_count_(relation_count) {
  neighbor_index_.resize(entity_count_);
  triplet_set_.reserve(triplets_.size() * 2);
  for (const Triplet& t : triplets_) {
    if (t.head >= entity_count_ || t.tail >= entity_count_ ||
        t.rel >= relation_count_)
      fail(ErrorKind::Data, "triplet id out of vocabulary range");
    if (!triplet_set_.insert(pack(t)).second)
      fail(ErrorKind::Data, "duplicate triplet in GraphStore construction");
    neighbor_index_[t.head].push_back({t.rel, t.tail, Direction::Outgoing});
    neighbor_index_[t.tail].push_back({t.rel, t.head, Direction::Incoming});
  }
}

const std::vector<NeighborEdge>& GraphStore::neighbors(EntityId e) const {
  if (e >= entity_count_) fail(ErrorKind::Data, "entity id out of range");
  return neighbor_index_[e];
}

std::vector<uint64_t> GraphStore::entity_frequency() const {
  std::vector<uint64_t> freq(entity_count_, 0);
  for (const Triplet& t : triplets_) {
    freq[t.head] += 1;
    freq[t.tail] += 1;
  }
  return freq;
}

std::vector<NameTriple> parse_triplet_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open triplet file: " + path);
  std::vector<NameTriple> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = t1 == std::string::npos ? std::string::npos
                                             : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos ||
        line.find('\t', t2 + 1) != std::string::npos)
      fail(ErrorKind::Parse, path + ": line " + std::to_string(lineno) +
                                 ": expected exactly 3 tab-separated fields");
    NameTriple row{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1),
                   line.substr(t2 + 1)};
    if (row.head.empty() || row.rel.empty() || row.tail.empty())
      fail(ErrorKind::Parse, path + ": line " + std::to_string(lineno) +
                                 ": empty field");
    rows.push_back(std::move(row));
  }
  if (in.bad()) fail(ErrorKind::Io, "read failure on " + path);
  return rows;
}

std::pair<Vocabulary, GraphStore> build_graph(
    const std::vector<NameTriple>& rows, bool add_inverses) {
  if (rows.empty()) fail(ErrorKind::Data, "no triplet rows to build graph");
  Vocabulary vocab;
  std::vector<Triplet> raw;
  raw.reserve(rows.size());
  for (const NameTriple& r : rows) {
    Triplet t{vocab.intern_entity(r.head), vocab.intern_relation(r.rel),
              vocab.intern_entity(r.tail)};
    raw.push_back(t);
  }
  std::size_t raw_rel = vocab.relation_count();
  vocab.set_raw_relation_count(raw_rel);
  if (add_inverses) {
    for (std::size_t r = 0; r < raw_rel; ++r) {
      std::string inv = vocab.relation_names()[r] + "_inv";
      if (vocab.has_relation(inv))
        fail(ErrorKind::Data, "inverse relation name collides: " + inv);
      vocab.intern_relation(inv);
    }
  }
  // de-duplicate raw triplets preserving first appearance
  std::unordered_set<uint64_t> seen;
  seen.reserve(raw.size() * 2);
  std::vector<Triplet> kept;
  kept.reserve(raw.size());
  const uint64_t rel_total = vocab.relation_count();
  const uint64_t ent_total = vocab.entity_count();
  for (const Triplet& t : raw) {
    uint64_t key = (uint64_t(t.head) * rel_total + t.rel) * ent_total + t.tail;
    if (seen.insert(key).second) kept.push_back(t);
  }
  if (add_inverses) {
    std::size_t n = kept.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Triplet& t = kept[i];
      kept.push_back(
          {t.tail, RelationId(t.rel + raw_rel), t.head});
    }
  }
  GraphStore g(std::move(kept), vocab.entity_count(), vocab.relation_count());
  return {std::move(vocab), std::move(g)};
}

GraphStore graph_from_triplets(const Vocabulary& vocab,
                               std::vector<Triplet> triplets) {
  return GraphStore(std::move(triplets), vocab.entity_count(),
                    vocab.relation_count());
}

void write_triplet_file(const std::string& path, const Vocabulary& vocab,
                        const std::vector<Triplet>& triplets) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write triplet file: " + path);
  for (const Triplet& t : triplets) {
    out << vocab.entity_name(t.head) << '\t' << vocab.relation_name(t.rel)
        << '\t' << vocab.entity_name(t.tail) << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failure on " + path);
}

}  // namespace gen
