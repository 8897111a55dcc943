#pragma once

// Shared gradient-check harness: a hand-built toy split whose unseen
// entities link to seen entities and to each other (so the transductive
// path has task-mate neighbors), plus a full finite-difference sweep over
// every parameter entry.

#include <string>
#include <vector>

#include "gen/model.hpp"
#include "gen/split.hpp"
#include "gen/train.hpp"
#include "support/oracles.hpp"

namespace gradcheck {

struct ToySplit {
  gen::OOGSplit split;
  std::size_t entities = 12;
  std::size_t raw_relations = 2;
  std::vector<gen::EntityId> seen_pool;
  gen::TripletFilter filter{12, 4};
};

inline ToySplit toy_split() {
  using gen::Triplet;
  ToySplit ts;
  // seen: 0..7, unseen (meta-train): 8..11; unseen pairs (8,9) and (10,11)
  // are linked so transductive aggregation sees task mates
  auto& train = ts.split.meta_sets[0];
  train.resize(4);
  train[0].entity = 8;
  train[0].associated = {{8, 0, 1}, {2, 1, 8}, {8, 1, 9}, {8, 0, 3}};
  train[1].entity = 9;
  train[1].associated = {{9, 0, 2}, {4, 1, 9}, {8, 1, 9}, {9, 1, 5}};
  train[2].entity = 10;
  train[2].associated = {{10, 0, 5}, {6, 0, 10}, {10, 1, 11}};
  train[3].entity = 11;
  train[3].associated = {{11, 1, 7}, {10, 1, 11}, {3, 0, 11}};
  ts.split.in_graph = {{0, 0, 1}, {1, 1, 2}, {2, 0, 3},
                       {4, 0, 5}, {6, 1, 7}, {0, 1, 4}};
  ts.split.rebuild_mask(ts.entities);

  for (gen::EntityId e = 0; e < 8; ++e) ts.seen_pool.push_back(e);
  ts.filter = gen::TripletFilter(ts.entities, 2 * ts.raw_relations);
  ts.filter.add_all(ts.split.in_graph);
  for (const auto& u : train) ts.filter.add_all(u.associated);
  return ts;
}

struct CheckCase {
  const char* name;
  gen::EmbedMode mode;
  bool stochastic;
  gen::TaskKind task;
  double dropout;
  uint64_t seed;
};

inline std::vector<CheckCase> standard_cases() {
  using gen::EmbedMode;
  using gen::TaskKind;
  return {
      {"inductive-hinge", EmbedMode::Inductive, false,
       TaskKind::EntityPrediction, 0.0, 101},
      {"transductive-deterministic-hinge", EmbedMode::Transductive, false,
       TaskKind::EntityPrediction, 0.0, 102},
      {"transductive-stochastic-hinge", EmbedMode::Transductive, true,
       TaskKind::EntityPrediction, 0.2, 103},
      {"inductive-bce", EmbedMode::Inductive, false,
       TaskKind::RelationPrediction, 0.0, 104},
      {"transductive-stochastic-bce", EmbedMode::Transductive, true,
       TaskKind::RelationPrediction, 0.2, 105},
  };
}

struct CheckResult {
  std::size_t entries_checked = 0;
  double max_rel_err = 0;
  std::string worst_tensor;
  double loss = 0;
};

// Full finite-difference sweep (h = 1e-5, central) against the analytic
// episode gradients, d=3, B=2, N=3, K=2.
inline CheckResult run_case(const CheckCase& c) {
  using namespace gen;
  ToySplit ts = toy_split();

  InitConfig ic;
  ic.entities = ts.entities;
  ic.raw_relations = ts.raw_relations;
  ic.dim = 3;
  ic.n_basis = 2;
  ic.score_kind = c.task == TaskKind::RelationPrediction ? ScoreKind::Linear
                                                         : ScoreKind::DistMult;
  ic.dropout_rate = c.dropout;
  std::vector<EntityId> unseen = {8, 9, 10, 11};
  Rng init_rng(derive_seed(c.seed, "init"));
  ModelParams p = init_params(ic, unseen, init_rng);

  Rng ep_rng(derive_seed(c.seed, "episode"));
  const std::size_t num_neg =
      c.task == TaskKind::EntityPrediction ? 2 : 0;
  EpisodeData data = sample_episode(ts.split.meta_sets[0], 3, 2, num_neg,
                                    ts.seen_pool, ts.filter, ep_rng);
  Rng noise_rng(derive_seed(c.seed, "noise"));
  EpisodeNoise noise = sample_noise(data.task.entities.size(), p.dim,
                                    c.stochastic, c.dropout,
                                    c.dropout > 0, noise_rng);
  EpisodeContext ctx;
  ctx.unseen_mask = &ts.split.unseen_mask;
  ctx.label_filter = &ts.filter;
  EpisodeConfig cfg;
  cfg.mode = c.mode;
  cfg.stochastic = c.stochastic;
  cfg.task_kind = c.task;
  cfg.margin = 1.0;

  GradientSet grads(p);
  CheckResult res;
  res.loss = episode_loss_backward(p, ctx, data, noise, cfg, grads);

  auto grad_of = [&](const std::string& name) -> Mat* {
    if (name == "entity_emb") return &grads.entity_emb;
    if (name == "relation_emb") return &grads.relation_emb;
    if (name == "ind.bases") return &grads.inductive.bases;
    if (name == "ind.coeffs") return &grads.inductive.coeffs;
    if (name == "mu.bases") return &grads.mu.bases;
    if (name == "mu.coeffs") return &grads.mu.coeffs;
    if (name == "mu.self") return &grads.mu_self;
    if (name == "sigma.bases") return &grads.sigma.bases;
    if (name == "sigma.coeffs") return &grads.sigma.coeffs;
    if (name == "sigma.self") return &grads.sigma_self;
    if (name == "head.w1") return &grads.head_w1;
    if (name == "head.b1") return &grads.head_b1;
    if (name == "head.w2") return &grads.head_w2;
    if (name == "head.b2") return &grads.head_b2;
    return nullptr;
  };

  const double h = 1e-5;
  for (auto& [name, mat] : p.tensors()) {
    Mat* g = grad_of(name);
    for (std::size_t i = 0; i < mat->data.size(); ++i) {
      double fd = oracle::central_diff(
          [&] { return episode_loss(p, ctx, data, noise, cfg); },
          &mat->data[i], h);
      double err = oracle::rel_err(g->data[i], fd);
      res.entries_checked += 1;
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst_tensor = name;
      }
    }
  }
  return res;
}

}  // namespace gradcheck
