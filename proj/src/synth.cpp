#include "gen/synth.hpp"

#include <cstdio>

#include "gen/error.hpp"
#include "gen/rng.hpp"

namespace gen {

std::vector<NameTriple> synth_rows(const SynthConfig& cfg) {
  if (cfg.entities == 0 || cfg.relations == 0 || cfg.clusters == 0 ||
      cfg.tags == 0 || cfg.edge_prob <= 0 || cfg.edge_prob > 1)
    fail(ErrorKind::Config, "synth: invalid generator configuration");
  Rng rng(derive_seed(cfg.seed, "synth"));

  std::vector<std::size_t> cluster(cfg.entities), tag(cfg.entities);
  for (std::size_t e = 0; e < cfg.entities; ++e) {
    cluster[e] = e % cfg.clusters;
    tag[e] = (e / cfg.clusters) % cfg.tags;
  }

  // balanced cluster-pair assignment: every cluster appears in roughly
  // 2*relations/clusters relation slots
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < 2 * cfg.relations; ++i)
    slots.push_back(i % cfg.clusters);
  rng.shuffle(slots);
  std::vector<std::pair<std::size_t, std::size_t>> pair_of(cfg.relations);
  for (std::size_t r = 0; r < cfg.relations; ++r)
    pair_of[r] = {slots[2 * r], slots[2 * r + 1]};

  auto ename = [](std::size_t e) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "e%04zu", e);
    return std::string(buf);
  };
  auto rname = [](std::size_t r) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "r%zu", r);
    return std::string(buf);
  };

  std::vector<NameTriple> rows;
  for (std::size_t r = 0; r < cfg.relations; ++r) {
    auto [a, b] = pair_of[r];
    for (std::size_t h = 0; h < cfg.entities; ++h) {
      for (std::size_t t = h + 1; t < cfg.entities; ++t) {
        bool compat = (cluster[h] == a && cluster[t] == b) ||
                      (cluster[h] == b && cluster[t] == a);
        if (!compat || tag[h] != tag[t]) continue;
        if (rng.uniform01() >= cfg.edge_prob) continue;
        if (rng.uniform_index(2) == 0)
          rows.push_back({ename(h), rname(r), ename(t)});
        else
          rows.push_back({ename(t), rname(r), ename(h)});
      }
    }
  }
  if (rows.empty()) fail(ErrorKind::Data, "synth: generated an empty graph");
  return rows;
}

}  // namespace gen
