#include "gen/split.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "gen/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gen {

namespace {

constexpr int kManifestVersion = 1;

uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open for checksum: " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

uint64_t parse_hex64(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

}  // namespace

void SplitConfig::validate() const {
  if (min_degree == 0 || min_degree > max_degree)
    fail(ErrorKind::Config, "split: need 0 < min_degree <= max_degree");
  if (n_unseen == 0) fail(ErrorKind::Config, "split: n_unseen must be > 0");
  if (ratios[0] + ratios[1] + ratios[2] == 0)
    fail(ErrorKind::Config, "split: ratios must sum to > 0");
}

std::vector<EntityId> OOGSplit::all_unseen() const {
  std::vector<EntityId> out;
  for (const auto& set : meta_sets)
    for (const auto& u : set) out.push_back(u.entity);
  return out;
}

bool OOGSplit::is_unseen(EntityId e) const {
  return e < unseen_mask.size() && unseen_mask[e] != 0;
}

void OOGSplit::rebuild_mask(std::size_t entity_count) {
  unseen_mask.assign(entity_count, 0);
  for (const auto& set : meta_sets)
    for (const auto& u : set) unseen_mask[u.entity] = 1;
}

std::vector<EntityId> select_unseen(const GraphStore& g,
                                    const SplitConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<uint64_t> freq = g.entity_frequency();
  std::vector<EntityId> eligible;
  for (EntityId e = 0; e < g.entity_count(); ++e)
    if (freq[e] >= cfg.min_degree && freq[e] <= cfg.max_degree)
      eligible.push_back(e);
  if (eligible.size() < cfg.n_unseen)
    fail(ErrorKind::Data,
         "split: only " + std::to_string(eligible.size()) +
             " entities fall in degree band [" + std::to_string(cfg.min_degree) +
             ", " + std::to_string(cfg.max_degree) + "], need " +
             std::to_string(cfg.n_unseen));
  std::vector<uint64_t> picks =
      rng.sample_without_replacement(eligible.size(), cfg.n_unseen);
  std::vector<EntityId> out;
  out.reserve(cfg.n_unseen);
  for (uint64_t i : picks) out.push_back(eligible[i]);
  return out;
}

std::array<std::vector<EntityId>, 3> partition_meta_sets(
    std::vector<EntityId> unseen, const std::array<uint64_t, 3>& ratios,
    Rng& rng) {
  const uint64_t total = ratios[0] + ratios[1] + ratios[2];
  if (total == 0) fail(ErrorKind::Config, "split: ratios must sum to > 0");
  rng.shuffle(unseen);
  const std::size_t n = unseen.size();
  std::size_t sizes[3];
  for (int i = 0; i < 3; ++i)
    sizes[i] = std::size_t(uint64_t(n) * ratios[i] / total);
  sizes[0] += n - sizes[0] - sizes[1] - sizes[2];  // remainder -> train
  std::array<std::vector<EntityId>, 3> out;
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    out[i].assign(unseen.begin() + pos, unseen.begin() + pos + sizes[i]);
    pos += sizes[i];
  }
  return out;
}

OOGSplit build_split(const GraphStore& g, const Vocabulary& vocab,
                     const std::array<std::vector<EntityId>, 3>& partition,
                     const SplitConfig& cfg) {
  OOGSplit split;
  split.config = cfg;
  split.vocab_hash = vocab.content_hash();

  // entity -> meta-set index, or -1 when seen
  std::vector<int8_t> set_of(g.entity_count(), -1);
  for (int s = 0; s < 3; ++s)
    for (EntityId e : partition[s]) {
      if (e >= g.entity_count())
        fail(ErrorKind::Data, "split: partition entity not in graph");
      if (set_of[e] != -1)
        fail(ErrorKind::Data, "split: entity in two meta-sets");
      set_of[e] = int8_t(s);
    }

  std::array<std::unordered_map<EntityId, std::vector<Triplet>>, 3> assoc;
  for (int s = 0; s < 3; ++s)
    for (EntityId e : partition[s]) assoc[s][e];  // ensure entry exists

  for (const Triplet& t : g.triplets()) {
    int8_t hs = set_of[t.head];
    int8_t ts = set_of[t.tail];
    if (hs == -1 && ts == -1) {
      split.in_graph.push_back(t);
      continue;
    }
    int owner;
    if (hs != -1 && ts != -1 && hs != ts) {
      // spans two meta-sets: the smaller entity id keeps it
      owner = t.head < t.tail ? hs : ts;
      split.stats.cross_set_reassigned += 1;
    } else {
      owner = hs != -1 ? hs : ts;
    }
    if (hs == owner) assoc[owner][t.head].push_back(t);
    if (ts == owner && t.tail != t.head) assoc[owner][t.tail].push_back(t);
  }

  // drop pass: an entity needs at least one support and one query triplet;
  // collect the surviving triplet set first so lost triplets are exactly the
  // ones appearing in no kept entity's list
  std::unordered_set<uint64_t> surviving;
  for (int s = 0; s < 3; ++s)
    for (EntityId e : partition[s]) {
      const auto& list = assoc[s][e];
      if (list.size() >= 2)
        for (const Triplet& t : list) surviving.insert(g.pack(t));
    }
  std::unordered_set<uint64_t> lost_seen;
  for (int s = 0; s < 3; ++s) {
    std::vector<EntityId> order = partition[s];
    std::sort(order.begin(), order.end());
    for (EntityId e : order) {
      auto& list = assoc[s][e];
      if (list.size() >= 2) {
        split.meta_sets[s].push_back({e, std::move(list)});
        continue;
      }
      split.stats.dropped_entities += 1;
      for (const Triplet& t : list)
        if (!surviving.count(g.pack(t)) && lost_seen.insert(g.pack(t)).second)
          split.stats.dropped_triplets.push_back(t);
    }
  }

  split.rebuild_mask(g.entity_count());
  // dropped entities stay marked unseen: their leftover triplets must not
  // leak into the in-graph or the candidate pools
  for (int s = 0; s < 3; ++s)
    for (EntityId e : partition[s]) {
      if (!split.unseen_mask[e]) split.dropped.push_back(e);
      split.unseen_mask[e] = 1;
    }
  std::sort(split.dropped.begin(), split.dropped.end());
  return split;
}

OOGSplit make_split(const GraphStore& g, const Vocabulary& vocab,
                    const SplitConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "split"));
  std::vector<EntityId> unseen = select_unseen(g, cfg, rng);
  auto partition = partition_meta_sets(std::move(unseen), cfg.ratios, rng);
  return build_split(g, vocab, partition, cfg);
}

namespace {

std::vector<Triplet> dedup_set_triplets(const std::vector<UnseenEntity>& set,
                                        const GraphStore& g) {
  std::unordered_set<uint64_t> seen;
  std::vector<Triplet> out;
  for (const auto& u : set)
    for (const Triplet& t : u.associated)
      if (seen.insert(g.pack(t)).second) out.push_back(t);
  return out;
}

void write_entity_list(const std::string& path, const Vocabulary& vocab,
                       const std::vector<UnseenEntity>& set) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  for (const auto& u : set) out << vocab.entity_name(u.entity) << '\n';
  if (!out) fail(ErrorKind::Io, "write failure on " + path);
}

}  // namespace

void write_manifest(const OOGSplit& split, const Vocabulary& vocab,
                    const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create manifest dir: " + dir);

  // The in-graph store only exists transiently for key packing here; build a
  // packer over the full vocabulary instead.
  GraphStore packer({}, vocab.entity_count(), vocab.relation_count());

  auto path = [&dir](const char* name) { return dir + "/" + name; };

  {
    std::ofstream out(path("vocab_entities.txt"),
                      std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write vocab_entities.txt");
    for (const auto& n : vocab.entity_names()) out << n << '\n';
  }
  {
    std::ofstream out(path("vocab_relations.txt"),
                      std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write vocab_relations.txt");
    for (const auto& n : vocab.relation_names()) out << n << '\n';
  }
  write_triplet_file(path("in_graph.tsv"), vocab, split.in_graph);
  const char* tsv_names[3] = {"meta_train.tsv", "meta_valid.tsv",
                              "meta_test.tsv"};
  const char* ent_names[3] = {"meta_train.entities.txt",
                              "meta_valid.entities.txt",
                              "meta_test.entities.txt"};
  for (int s = 0; s < 3; ++s) {
    write_triplet_file(path(tsv_names[s]), vocab,
                       dedup_set_triplets(split.meta_sets[s], packer));
    write_entity_list(path(ent_names[s]), vocab, split.meta_sets[s]);
  }
  {
    std::ofstream out(path("dropped.entities.txt"),
                      std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write dropped.entities.txt");
    for (EntityId e : split.dropped) out << vocab.entity_name(e) << '\n';
  }

  json meta;
  meta["format_version"] = kManifestVersion;
  meta["seed"] = split.config.seed;
  meta["config"] = {{"min_degree", split.config.min_degree},
                    {"max_degree", split.config.max_degree},
                    {"n_unseen", split.config.n_unseen},
                    {"ratios", split.config.ratios}};
  meta["vocab_hash"] = hex64(split.vocab_hash);
  meta["raw_relation_count"] = vocab.raw_relation_count();
  json counts;
  counts["in_graph_triplets"] = split.in_graph.size();
  for (int s = 0; s < 3; ++s) {
    json c;
    c["entities"] = split.meta_sets[s].size();
    std::size_t nt = 0;
    for (const auto& u : split.meta_sets[s]) nt += u.associated.size();
    c["entity_triplet_links"] = nt;
    counts[meta_set_name(MetaSet(s))] = c;
  }
  meta["counts"] = counts;
  meta["stats"] = {{"cross_set_reassigned", split.stats.cross_set_reassigned},
                   {"dropped_entities", split.stats.dropped_entities},
                   {"dropped_triplets", split.stats.dropped_triplets.size()}};
  json sums;
  const char* files[] = {"vocab_entities.txt", "vocab_relations.txt",
                         "in_graph.tsv",       "meta_train.tsv",
                         "meta_valid.tsv",     "meta_test.tsv",
                         "meta_train.entities.txt", "meta_valid.entities.txt",
                         "meta_test.entities.txt",  "dropped.entities.txt"};
  for (const char* f : files) sums[f] = hex64(file_checksum(path(f)));
  meta["checksums"] = sums;

  std::ofstream out(path("meta.json"), std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write meta.json");
  out << meta.dump(2) << '\n';
  if (!out) fail(ErrorKind::Io, "write failure on meta.json");
}

Manifest read_manifest(const std::string& dir) {
  auto path = [&dir](const char* name) { return dir + "/" + name; };
  std::ifstream in(path("meta.json"), std::ios::binary);
  if (!in) fail(ErrorKind::Io, "manifest meta.json not found in " + dir);
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("meta.json: ") + e.what());
  }
  if (meta.value("format_version", -1) != kManifestVersion)
    fail(ErrorKind::Data, "manifest format version mismatch");

  for (auto& [file, sum] : meta.at("checksums").items()) {
    uint64_t expect = parse_hex64(sum.get<std::string>());
    uint64_t actual = file_checksum(path(file.c_str()));
    if (expect != actual)
      fail(ErrorKind::Data, "manifest checksum mismatch on " + file);
  }

  Manifest m;
  auto read_lines = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot open " + p);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) lines.push_back(line);
    }
    return lines;
  };
  for (const auto& name : read_lines(path("vocab_entities.txt")))
    m.vocab.intern_entity(name);
  for (const auto& name : read_lines(path("vocab_relations.txt")))
    m.vocab.intern_relation(name);
  m.vocab.set_raw_relation_count(
      meta.at("raw_relation_count").get<std::size_t>());

  uint64_t stored_hash = parse_hex64(meta.at("vocab_hash").get<std::string>());
  if (m.vocab.content_hash() != stored_hash)
    fail(ErrorKind::Data, "manifest vocabulary hash mismatch");

  auto intern_file = [&](const char* name) {
    std::vector<Triplet> out;
    for (const NameTriple& r : parse_triplet_file(path(name)))
      out.push_back({m.vocab.entity_id(r.head), m.vocab.relation_id(r.rel),
                     m.vocab.entity_id(r.tail)});
    return out;
  };

  OOGSplit& split = m.split;
  split.in_graph = intern_file("in_graph.tsv");
  split.vocab_hash = stored_hash;
  const auto& cfg = meta.at("config");
  split.config.min_degree = cfg.at("min_degree").get<uint64_t>();
  split.config.max_degree = cfg.at("max_degree").get<uint64_t>();
  split.config.n_unseen = cfg.at("n_unseen").get<std::size_t>();
  auto rat = cfg.at("ratios");
  for (int i = 0; i < 3; ++i) split.config.ratios[i] = rat.at(i).get<uint64_t>();
  split.config.seed = meta.at("seed").get<uint64_t>();
  split.stats.cross_set_reassigned =
      meta.at("stats").at("cross_set_reassigned").get<std::size_t>();
  split.stats.dropped_entities =
      meta.at("stats").at("dropped_entities").get<std::size_t>();

  const char* tsv_names[3] = {"meta_train.tsv", "meta_valid.tsv",
                              "meta_test.tsv"};
  const char* ent_names[3] = {"meta_train.entities.txt",
                              "meta_valid.entities.txt",
                              "meta_test.entities.txt"};
  for (int s = 0; s < 3; ++s) {
    std::vector<Triplet> triplets = intern_file(tsv_names[s]);
    for (const auto& name : read_lines(path(ent_names[s]))) {
      UnseenEntity u;
      u.entity = m.vocab.entity_id(name);
      for (const Triplet& t : triplets)
        if (t.head == u.entity || t.tail == u.entity) u.associated.push_back(t);
      split.meta_sets[s].push_back(std::move(u));
    }
  }
  split.rebuild_mask(m.vocab.entity_count());
  for (const auto& name : read_lines(path("dropped.entities.txt"))) {
    EntityId e = m.vocab.entity_id(name);
    split.dropped.push_back(e);
    split.unseen_mask[e] = 1;
  }
  m.in_graph_store = graph_from_triplets(m.vocab, split.in_graph);
  return m;
}

}  // namespace gen
