#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gen/episode.hpp"
#include "gen/model.hpp"
#include "gen/split.hpp"

namespace gen {

enum class TieRule { Optimistic, Pessimistic, Mean };
TieRule tie_rule_from_string(const std::string& s);
const char* tie_rule_name(TieRule r);

// Raw comparison counts of one filtered ranking; every tie rule derives its
// rank from these, so one pass serves all three.
struct RankResult {
  Triplet query;
  bool corrupt_tail = true;      // which slot was corrupted
  uint32_t n_greater = 0;        // surviving candidates scoring strictly higher
  uint32_t n_tied = 0;           // surviving candidates with an equal score
  bool unseen_unseen = false;    // both endpoints unseen
};

// optimistic: 1 + greater; pessimistic: 1 + greater + tied;
// mean: 1 + greater + tied/2 (may be half-integral)
double rank_of(const RankResult& r, TieRule rule);

struct RankSummary {
  double mrr = 0;
  std::map<int, double> hits;  // n -> fraction with rank <= n, n in {1,3,10}
  std::size_t count = 0;
};

struct MetricReport {
  RankSummary total;
  RankSummary seen_unseen;    // valid only if has_su
  RankSummary unseen_unseen;  // valid only if has_uu
  bool has_su = false;
  bool has_uu = false;
};

MetricReport aggregate(const std::vector<RankResult>& results, TieRule rule);

// Scores the true triplet and every surviving corrupted candidate; candidates
// forming known-true triplets are filtered out (the true one is always kept).
// `cand_score` scores a candidate entity placed in the corrupted slot.
RankResult filtered_rank(const Triplet& query, bool corrupt_tail,
                         EntityId true_partner, double true_score,
                         const std::vector<EntityId>& candidates,
                         const std::function<double(EntityId)>& cand_score,
                         const std::function<bool(EntityId)>& is_known);

// ---- relation-prediction metrics ----

struct DDIReport {
  double roc_auc = 0;
  double pr_auc = 0;
  double accuracy = 0;
  bool has_auc = false;  // absent when all labels agree
  std::size_t query_count = 0;
};

// Micro-averaged ROC/PR over the flattened (query x relation) matrix with
// sigmoid scores; accuracy is argmax-in-label-set per query. ROC uses the
// tie-aware Mann-Whitney formulation.
DDIReport ddi_metrics(const std::vector<Vec>& logits,
                      const std::vector<std::vector<uint8_t>>& labels);

// ---- full-split evaluation ----

struct EvalOptions {
  MetaSet which = MetaSet::Test;
  EmbedMode mode = EmbedMode::Transductive;
  bool stochastic = true;
  std::size_t shots = 3;      // K support triplets per entity
  std::size_t mc_samples = 10;
  uint64_t seed = 42;
  int threads = 1;
};

struct EvalOutput {
  TaskKind kind = TaskKind::EntityPrediction;
  std::vector<RankResult> results;  // entity prediction
  DDIReport ddi;                    // relation prediction
  std::size_t entities_evaluated = 0;
  std::size_t entities_skipped = 0;  // fewer than 2 associated triplets
  MetricReport report(TieRule rule) const { return aggregate(results, rule); }
};

// Embeds every meta-set entity from a seeded K-shot support and ranks each
// remaining query triplet in the slot holding its partner (or classifies the
// pair, for relation prediction). Identical output for any thread count.
EvalOutput evaluate_split(const ModelParams& p, const Manifest& m,
                          const EvalOptions& opts, TaskKind kind);

// Per-query CSV (one row per rank result, all three tie rules).
void write_ranks_csv(const std::string& path, const Vocabulary& vocab,
                     const std::vector<RankResult>& results);

}  // namespace gen
