#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <unordered_set>

#include "gen/error.hpp"
#include "gen/split.hpp"
#include "support/fixtures.hpp"

using namespace gen;

namespace {

// conservation: in_graph + associated + stats.dropped_triplets == original
void check_conservation(const GraphStore& g, const OOGSplit& split) {
  std::unordered_set<uint64_t> rebuilt;
  for (const Triplet& t : split.in_graph) rebuilt.insert(g.pack(t));
  for (const auto& set : split.meta_sets)
    for (const auto& u : set)
      for (const Triplet& t : u.associated) rebuilt.insert(g.pack(t));
  for (const Triplet& t : split.stats.dropped_triplets)
    rebuilt.insert(g.pack(t));
  CHECK(rebuilt.size() == g.size());
  for (const Triplet& t : g.triplets()) CHECK(rebuilt.count(g.pack(t)) == 1);
}

}  // namespace

TEST_CASE("select_unseen respects the degree band") {
  auto rows = fixtures::random_rows(30, 3, 200, 17);
  auto [vocab, g] = build_graph(rows, false);
  auto freq = g.entity_frequency();

  SplitConfig cfg;
  cfg.min_degree = 5;
  cfg.max_degree = 20;
  cfg.seed = 3;
  std::size_t eligible = 0;
  for (uint64_t f : freq) eligible += (f >= 5 && f <= 20);

  SUBCASE("returns exactly n distinct entities in band") {
    cfg.n_unseen = eligible / 2;
    Rng rng(1);
    auto sel = select_unseen(g, cfg, rng);
    CHECK(sel.size() == cfg.n_unseen);
    std::unordered_set<EntityId> uniq(sel.begin(), sel.end());
    CHECK(uniq.size() == sel.size());
    for (EntityId e : sel) {
      CHECK(freq[e] >= cfg.min_degree);
      CHECK(freq[e] <= cfg.max_degree);
    }
  }
  SUBCASE("n equal to the eligible count returns the full band") {
    cfg.n_unseen = eligible;
    Rng rng(1);
    CHECK(select_unseen(g, cfg, rng).size() == eligible);
  }
  SUBCASE("insufficient band reports the eligible count") {
    cfg.n_unseen = eligible + 1;
    Rng rng(1);
    try {
      select_unseen(g, cfg, rng);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find(std::to_string(eligible)) !=
            std::string::npos);
    }
  }
  SUBCASE("deterministic under a fixed seed") {
    cfg.n_unseen = eligible / 2;
    Rng r1(9), r2(9);
    CHECK(select_unseen(g, cfg, r1) == select_unseen(g, cfg, r2));
  }
}

TEST_CASE("partition_meta_sets proportions") {
  std::vector<EntityId> ids(5000);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = EntityId(i);

  SUBCASE("paper-style absolute counts") {
    Rng rng(2);
    auto parts = partition_meta_sets(ids, {2500, 1000, 1500}, rng);
    CHECK(parts[0].size() == 2500);
    CHECK(parts[1].size() == 1000);
    CHECK(parts[2].size() == 1500);
  }
  SUBCASE("degenerate ratios put everything in train") {
    Rng rng(2);
    auto parts = partition_meta_sets(ids, {1, 0, 0}, rng);
    CHECK(parts[0].size() == 5000);
    CHECK(parts[1].empty());
    CHECK(parts[2].empty());
  }
  SUBCASE("floor allocation sends the remainder to train") {
    std::vector<EntityId> ten(10);
    for (std::size_t i = 0; i < 10; ++i) ten[i] = EntityId(i);
    Rng rng(2);
    auto parts = partition_meta_sets(ten, {1, 1, 1}, rng);
    CHECK(parts[0].size() == 4);
    CHECK(parts[1].size() == 3);
    CHECK(parts[2].size() == 3);
  }
  SUBCASE("disjoint union preserves the input") {
    Rng rng(5);
    auto parts = partition_meta_sets(ids, {3, 2, 2}, rng);
    std::unordered_set<EntityId> all;
    for (auto& p : parts)
      for (EntityId e : p) CHECK(all.insert(e).second);
    CHECK(all.size() == ids.size());
  }
}

TEST_CASE("build_split separates in-graph from associated triplets") {
  SUBCASE("single unseen tail") {
    auto [vocab, g] = build_graph({{"a", "r", "b"}, {"b", "r", "c"}}, false);
    // unseen = {c} in test; c has only one triplet, so it drops
    std::array<std::vector<EntityId>, 3> part;
    part[2] = {vocab.entity_id("c")};
    SplitConfig cfg;
    auto split = build_split(g, vocab, part, cfg);
    CHECK(split.in_graph.size() == 1);
    CHECK(split.in_graph[0] == Triplet{0, 0, 1});
    CHECK(split.meta(MetaSet::Test).empty());  // dropped: < 2 triplets
    CHECK(split.stats.dropped_entities == 1);
    CHECK(split.stats.dropped_triplets.size() == 1);
  }
  SUBCASE("star hub keeps all its triplets") {
    auto [vocab, g] = build_graph(
        {{"hub", "r", "x"}, {"hub", "r", "y"}, {"z", "r", "hub"}}, false);
    std::array<std::vector<EntityId>, 3> part;
    part[2] = {vocab.entity_id("hub")};
    SplitConfig cfg;
    auto split = build_split(g, vocab, part, cfg);
    CHECK(split.in_graph.empty());
    REQUIRE(split.meta(MetaSet::Test).size() == 1);
    CHECK(split.meta(MetaSet::Test)[0].associated.size() == 3);
    check_conservation(g, split);
  }
  SUBCASE("empty partition keeps the full graph") {
    auto rows = fixtures::random_rows(10, 2, 30, 4);
    auto [vocab, g] = build_graph(rows, false);
    std::array<std::vector<EntityId>, 3> part;
    SplitConfig cfg;
    auto split = build_split(g, vocab, part, cfg);
    CHECK(split.in_graph.size() == g.size());
    for (auto& s : split.meta_sets) CHECK(s.empty());
  }
  SUBCASE("cross-set triplet goes to the smaller entity id") {
    auto [vocab, g] = build_graph({{"a", "r", "b"},
                                   {"a", "r", "c"},
                                   {"a", "r", "d"},
                                   {"b", "r", "c"},
                                   {"b", "r", "d"}},
                                  false);
    EntityId a = vocab.entity_id("a"), b = vocab.entity_id("b");
    REQUIRE(a < b);
    std::array<std::vector<EntityId>, 3> part;
    part[0] = {a};
    part[2] = {b};
    SplitConfig cfg;
    auto split = build_split(g, vocab, part, cfg);
    CHECK(split.stats.cross_set_reassigned == 1);
    // (a, r, b) must live with a (meta-train), not with b
    bool in_train = false;
    for (const Triplet& t : split.meta(MetaSet::Train)[0].associated)
      if (t == Triplet{a, 0, b}) in_train = true;
    CHECK(in_train);
    for (const auto& u : split.meta(MetaSet::Test))
      for (const Triplet& t : u.associated) CHECK(t != Triplet{a, 0, b});
    check_conservation(g, split);
  }
}

TEST_CASE("split invariants on random graphs") {
  for (uint64_t seed : {21u, 22u, 23u}) {
    auto rows = fixtures::random_rows(40, 4, 500, seed);
    auto [vocab, g] = build_graph(rows, false);
    SplitConfig cfg;
    cfg.min_degree = 2;
    cfg.max_degree = 10000;
    cfg.n_unseen = 10;
    cfg.ratios = {2, 1, 1};
    cfg.seed = seed;
    auto split = make_split(g, vocab, cfg);

    // no in-graph triplet touches an unseen entity
    for (const Triplet& t : split.in_graph) {
      CHECK(!split.is_unseen(t.head));
      CHECK(!split.is_unseen(t.tail));
    }
    // every associated triplet contains its own entity, which is unseen
    for (int s = 0; s < 3; ++s)
      for (const auto& u : split.meta_sets[s])
        for (const Triplet& t : u.associated) {
          CHECK((t.head == u.entity || t.tail == u.entity));
          CHECK(u.associated.size() >= 2);
        }
    check_conservation(g, split);

    // purity: same config, same split
    auto split2 = make_split(g, vocab, cfg);
    CHECK(split.in_graph == split2.in_graph);
    for (int s = 0; s < 3; ++s) {
      REQUIRE(split.meta_sets[s].size() == split2.meta_sets[s].size());
      for (std::size_t i = 0; i < split.meta_sets[s].size(); ++i) {
        CHECK(split.meta_sets[s][i].entity == split2.meta_sets[s][i].entity);
        CHECK(split.meta_sets[s][i].associated ==
              split2.meta_sets[s][i].associated);
      }
    }
  }
}

TEST_CASE("manifest round-trip") {
  auto rows = fixtures::random_rows(30, 3, 260, 31);
  auto [vocab, g] = build_graph(rows, false);
  SplitConfig cfg;
  cfg.min_degree = 2;
  cfg.max_degree = 10000;
  cfg.n_unseen = 8;
  cfg.ratios = {2, 1, 1};
  cfg.seed = 31;
  auto split = make_split(g, vocab, cfg);

  std::string dir = fixtures::temp_dir("manifest");
  write_manifest(split, vocab, dir);

  SUBCASE("read reproduces the split exactly") {
    Manifest m = read_manifest(dir);
    CHECK(m.vocab.content_hash() == vocab.content_hash());
    CHECK(m.split.in_graph == split.in_graph);
    for (int s = 0; s < 3; ++s) {
      REQUIRE(m.split.meta_sets[s].size() == split.meta_sets[s].size());
      for (std::size_t i = 0; i < split.meta_sets[s].size(); ++i) {
        CHECK(m.split.meta_sets[s][i].entity == split.meta_sets[s][i].entity);
        std::unordered_set<uint64_t> a, b;
        for (const Triplet& t : split.meta_sets[s][i].associated)
          a.insert(g.pack(t));
        for (const Triplet& t : m.split.meta_sets[s][i].associated)
          b.insert(g.pack(t));
        CHECK(a == b);
      }
    }
    CHECK(m.split.unseen_mask == split.unseen_mask);
  }
  SUBCASE("same seed produces a byte-identical manifest") {
    auto split2 = make_split(g, vocab, cfg);
    std::string dir2 = fixtures::temp_dir("manifest2");
    write_manifest(split2, vocab, dir2);
    for (const char* f :
         {"meta.json", "in_graph.tsv", "meta_train.tsv", "meta_valid.tsv",
          "meta_test.tsv", "vocab_entities.txt", "vocab_relations.txt"}) {
      std::ifstream f1(dir + "/" + f, std::ios::binary);
      std::ifstream f2(dir2 + "/" + f, std::ios::binary);
      std::string s1((std::istreambuf_iterator<char>(f1)), {});
      std::string s2((std::istreambuf_iterator<char>(f2)), {});
      CHECK(s1 == s2);
    }
  }
  SUBCASE("corrupted data file fails the checksum") {
    std::string dir3 = fixtures::temp_dir("manifest3");
    write_manifest(split, vocab, dir3);
    std::ofstream f(dir3 + "/in_graph.tsv", std::ios::app | std::ios::binary);
    f << "x\tr0\ty\n";
    f.close();
    try {
      read_manifest(dir3);
      FAIL("expected checksum error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("checksum") != std::string::npos);
    }
  }
  SUBCASE("doctored vocabulary fails the hash guard") {
    std::string dir4 = fixtures::temp_dir("manifest4");
    write_manifest(split, vocab, dir4);
    // swap two vocab lines and fix the file checksum in meta.json so only
    // the vocabulary hash can catch it
    std::ifstream in(dir4 + "/meta.json");
    std::string meta((std::istreambuf_iterator<char>(in)), {});
    in.close();
    // replace hash with a wrong one
    auto pos = meta.find("\"vocab_hash\"");
    REQUIRE(pos != std::string::npos);
    meta[pos + 16] = meta[pos + 16] == '0' ? '1' : '0';
    fixtures::write_file(dir4 + "/meta.json", meta);
    CHECK_THROWS_AS(read_manifest(dir4), Error);
  }
}
