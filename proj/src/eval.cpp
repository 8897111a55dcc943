#include "gen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "gen/error.hpp"
#include "gen/kernels.hpp"

namespace gen {

TieRule tie_rule_from_string(const std::string& s) {
  if (s == "optimistic") return TieRule::Optimistic;
  if (s == "pessimistic") return TieRule::Pessimistic;
  if (s == "mean") return TieRule::Mean;
  fail(ErrorKind::Config, "unknown tie rule: " + s);
}

const char* tie_rule_name(TieRule r) {
  switch (r) {
    case TieRule::Optimistic: return "optimistic";
    case TieRule::Pessimistic: return "pessimistic";
    default: return "mean";
  }
}

double rank_of(const RankResult& r, TieRule rule) {
  switch (rule) {
    case TieRule::Optimistic: return 1.0 + r.n_greater;
    case TieRule::Pessimistic: return 1.0 + r.n_greater + r.n_tied;
    default: return 1.0 + r.n_greater + 0.5 * r.n_tied;
  }
}

namespace {

RankSummary summarize(const std::vector<const RankResult*>& rs, TieRule rule) {
  RankSummary s;
  s.count = rs.size();
  s.hits = {{1, 0.0}, {3, 0.0}, {10, 0.0}};
  if (rs.empty()) return s;
  double mrr = 0;
  for (const RankResult* r : rs) {
    double rank = rank_of(*r, rule);
    mrr += 1.0 / rank;
    for (auto& [n, h] : s.hits)
      if (rank <= n) h += 1.0;
  }
  s.mrr = mrr / double(rs.size());
  for (auto& [n, h] : s.hits) h /= double(rs.size());
  return s;
}

}  // namespace

MetricReport aggregate(const std::vector<RankResult>& results, TieRule rule) {
  if (results.empty()) fail(ErrorKind::Data, "aggregate: no rank results");
  std::vector<const RankResult*> all, su, uu;
  for (const RankResult& r : results) {
    all.push_back(&r);
    (r.unseen_unseen ? uu : su).push_back(&r);
  }
  MetricReport rep;
  rep.total = summarize(all, rule);
  rep.has_su = !su.empty();
  rep.has_uu = !uu.empty();
  if (rep.has_su) rep.seen_unseen = summarize(su, rule);
  if (rep.has_uu) rep.unseen_unseen = summarize(uu, rule);
  return rep;
}

RankResult filtered_rank(const Triplet& query, bool corrupt_tail,
                         EntityId true_partner, double true_score,
                         const std::vector<EntityId>& candidates,
                         const std::function<double(EntityId)>& cand_score,
                         const std::function<bool(EntityId)>& is_known) {
  RankResult r;
  r.query = query;
  r.corrupt_tail = corrupt_tail;
  for (EntityId c : candidates) {
    if (c == true_partner) continue;  // that is the ranked triplet itself
    if (is_known(c)) continue;        // filtered setting
    double s = cand_score(c);
    if (s > true_score)
      r.n_greater += 1;
    else if (s == true_score)
      r.n_tied += 1;
  }
  return r;
}

// ---------------------------------------------------------------------------
// relation-prediction metrics

DDIReport ddi_metrics(const std::vector<Vec>& logits,
                      const std::vector<std::vector<uint8_t>>& labels) {
  if (logits.size() != labels.size() || logits.empty())
    fail(ErrorKind::Data, "ddi_metrics: shape mismatch or empty input");
  DDIReport rep;
  rep.query_count = logits.size();

  std::size_t correct = 0;
  std::vector<std::pair<double, uint8_t>> flat;
  for (std::size_t q = 0; q < logits.size(); ++q) {
    if (logits[q].size() != labels[q].size())
      fail(ErrorKind::Data, "ddi_metrics: per-query shape mismatch");
    std::size_t argmax = 0;
    for (std::size_t k = 1; k < logits[q].size(); ++k)
      if (logits[q][k] > logits[q][argmax]) argmax = k;
    if (labels[q][argmax]) correct += 1;
    for (std::size_t k = 0; k < logits[q].size(); ++k)
      flat.emplace_back(logits[q][k], labels[q][k]);
  }
  rep.accuracy = double(correct) / double(logits.size());

  std::size_t pos = 0;
  for (auto& [s, y] : flat) pos += y;
  std::size_t neg = flat.size() - pos;
  if (pos == 0 || neg == 0) {
    rep.has_auc = false;
    return rep;
  }
  rep.has_auc = true;

  // ROC-AUC via midranks; equals the Mann-Whitney pair count exactly
  std::vector<std::size_t> order(flat.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return flat[a].first < flat[b].first;
  });
  double pos_rank_sum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() &&
           flat[order[j]].first == flat[order[i]].first)
      ++j;
    double midrank = 0.5 * double(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (flat[order[k]].second) pos_rank_sum += midrank;
    i = j;
  }
  double u = pos_rank_sum - 0.5 * double(pos) * double(pos + 1);
  rep.roc_auc = u / (double(pos) * double(neg));

  // PR-AUC: tie-grouped average precision
  double ap = 0;
  std::size_t tp = 0, seen = 0;
  i = order.size();
  while (i > 0) {
    std::size_t j = i;  // process the tie group [k, j) descending by score
    std::size_t k = i;
    while (k > 0 && flat[order[k - 1]].first == flat[order[j - 1]].first) --k;
    std::size_t group_tp = 0;
    for (std::size_t t = k; t < j; ++t)
      if (flat[order[t]].second) group_tp += 1;
    tp += group_tp;
    seen += j - k;
    if (group_tp > 0) {
      double precision = double(tp) / double(seen);
      ap += (double(group_tp) / double(pos)) * precision;
    }
    i = k;
  }
  rep.pr_auc = ap;
  return rep;
}

// ---------------------------------------------------------------------------
// split evaluation

namespace {

struct EvalEntity {
  EntityId entity;
  std::vector<Triplet> support;
  std::vector<Triplet> queries;
  std::vector<AggEdge> edges;
};

// Embeddings for every meta-set entity, one row set per MC pass. The final
// scoring embedding is phi for the inductive mode and phi' (or mu) for the
// transductive one.
struct PassEmbeddings {
  std::vector<Mat> out;  // out[pass] is n x d
};

PassEmbeddings embed_entities(const ModelParams& p,
                              const std::vector<EvalEntity>& ents,
                              const EvalOptions& opts) {
  const std::size_t d = p.dim;
  const std::size_t n = ents.size();
  const bool trans = opts.mode == EmbedMode::Transductive;
  const bool stochastic = trans && opts.stochastic;
  const std::size_t passes = stochastic ? opts.mc_samples : 1;

  PassEmbeddings pe;
  pe.out.assign(passes, Mat(n, d));
  WeightCache w_ind(p.inductive), w_mu(p.trans_mu.basis),
      w_sigma(p.trans_sigma.basis);
  Mat phi(n, d);   // post-dropout inductive embeddings for one pass
  Vec agg(d), sigma_raw(d), z(d);
  std::vector<uint8_t> keep;

  for (std::size_t pass = 0; pass < passes; ++pass) {
    Mat& out = pe.out[pass];
    // inductive pass; with stochastic inference MC dropout stays active and
    // is resampled per pass
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<SupportEdge> edges;
      edges.reserve(ents[i].edges.size());
      for (const AggEdge& e : ents[i].edges)
        edges.push_back(
            {e.agg_rel, e.neighbor,
             e.seen ? p.entity_emb.row(e.neighbor) : nullptr});
      aggregate_support(p, w_ind, edges, phi.row(i));
      if (stochastic && p.dropout_rate > 0) {
        Rng rng(derive_seed(opts.seed, "eval-mc-phi", pass, ents[i].entity));
        sample_keep_mask(d, p.dropout_rate, rng, keep);
        apply_dropout_mask(phi.row(i), d, p.dropout_rate, keep.data());
      }
    }
    if (!trans) {
      out.data = phi.data;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<SupportEdge> edges;
      edges.reserve(ents[i].edges.size());
      for (const AggEdge& e : ents[i].edges) {
        const double* ev = nullptr;
        if (e.seen)
          ev = p.entity_emb.row(e.neighbor);
        else if (e.task_idx >= 0)
          ev = phi.row(e.task_idx);
        edges.push_back({e.agg_rel, e.neighbor, ev});
      }
      // mu head
      std::fill(agg.begin(), agg.end(), 0.0);
      aggregate_support(p, w_mu, edges, agg.data());
      kernels::gemv_acc(p.trans_mu.self_weight.data.data(), d, d, phi.row(i),
                        agg.data());
      if (stochastic && p.dropout_rate > 0) {
        Rng rng(derive_seed(opts.seed, "eval-mc-mu", pass, ents[i].entity));
        sample_keep_mask(d, p.dropout_rate, rng, keep);
        apply_dropout_mask(agg.data(), d, p.dropout_rate, keep.data());
      }
      double* mu = out.row(i);
      std::copy(agg.begin(), agg.end(), mu);
      if (!stochastic) continue;  // deterministic transductive: output is mu
      // sigma head + reparameterized sample
      std::fill(sigma_raw.begin(), sigma_raw.end(), 0.0);
      aggregate_support(p, w_sigma, edges, sigma_raw.data());
      kernels::gemv_acc(p.trans_sigma.self_weight.data.data(), d, d,
                        phi.row(i), sigma_raw.data());
      Rng rng(derive_seed(opts.seed, "eval-mc-z", pass, ents[i].entity));
      if (p.dropout_rate > 0) {
        Rng drng(derive_seed(opts.seed, "eval-mc-sigma", pass, ents[i].entity));
        sample_keep_mask(d, p.dropout_rate, drng, keep);
        apply_dropout_mask(sigma_raw.data(), d, p.dropout_rate, keep.data());
      }
      for (std::size_t k = 0; k < d; ++k)
        mu[k] += softplus_floor(sigma_raw[k]) * rng.normal();
    }
  }
  return pe;
}

struct QueryJob {
  std::size_t entity_index;
  Triplet pos;
  bool corrupt_tail;
  EntityId partner;
};

}  // namespace

EvalOutput evaluate_split(const ModelParams& p, const Manifest& m,
                          const EvalOptions& opts, TaskKind kind) {
  if (p.entity_emb.rows != m.vocab.entity_count())
    fail(ErrorKind::Data, "evaluate_split: model/vocabulary size mismatch");
  const OOGSplit& split = m.split;
  const auto& meta = split.meta(opts.which);
  if (meta.empty()) fail(ErrorKind::Data, "evaluate_split: empty meta-set");
  const std::size_t d = p.dim;

  EvalOutput out;
  out.kind = kind;

  // deterministic per-entity support selection: first K of a seeded shuffle
  std::vector<EvalEntity> ents;
  std::unordered_map<EntityId, int> index;
  for (const UnseenEntity& u : meta) {
    if (u.associated.size() < 2) {
      out.entities_skipped += 1;
      continue;
    }
    EvalEntity ee;
    ee.entity = u.entity;
    std::vector<Triplet> pool = u.associated;
    Rng rng(derive_seed(opts.seed, "eval-support", u.entity));
    rng.shuffle(pool);
    std::size_t s = std::min(opts.shots, pool.size() - 1);
    ee.support.assign(pool.begin(), pool.begin() + s);
    ee.queries.assign(pool.begin() + s, pool.end());
    index[u.entity] = int(ents.size());
    ents.push_back(std::move(ee));
  }
  out.entities_evaluated = ents.size();
  for (EvalEntity& ee : ents)
    ee.edges = build_agg_edges(ee.entity, ee.support, split.unseen_mask, index,
                               p.raw_relations());

  PassEmbeddings pe = embed_entities(p, ents, opts);
  const std::size_t passes = pe.out.size();
  const double inv_l = 1.0 / double(passes);

  // filtering set: everything known anywhere (train, valid, test)
  TripletFilter known(m.vocab.entity_count(), p.relation_emb.rows);
  known.add_all(split.in_graph);
  for (const auto& set : split.meta_sets)
    for (const auto& u : set) known.add_all(u.associated);

  // candidate pool: all seen entities plus this meta-set's entities
  std::vector<EntityId> candidates =
      seen_entity_pool(split, m.vocab.entity_count());
  for (const EvalEntity& ee : ents) candidates.push_back(ee.entity);

  // Partner/candidate embedding resolution. The inductive scheme cannot
  // reach other unseen entities: they stay zero vectors, which is what makes
  // its unseen-unseen metrics collapse. The transductive scheme scores task
  // mates through their phi'.
  Vec zeros(d, 0.0);
  auto emb_of = [&](EntityId e, std::size_t pass) -> const double* {
    if (!split.is_unseen(e)) return p.entity_emb.row(e);
    if (opts.mode == EmbedMode::Transductive) {
      auto it = index.find(e);
      if (it != index.end()) return pe.out[pass].row(it->second);
    }
    return zeros.data();
  };

  std::vector<QueryJob> jobs;
  for (std::size_t i = 0; i < ents.size(); ++i)
    for (const Triplet& q : ents[i].queries) {
      QueryJob job;
      job.entity_index = i;
      job.pos = q;
      job.corrupt_tail = q.head == ents[i].entity;
      job.partner = job.corrupt_tail ? q.tail : q.head;
      jobs.push_back(job);
    }

  if (kind == TaskKind::EntityPrediction) {
    out.results.resize(jobs.size());
    auto run_job = [&](std::size_t ji) {
      const QueryJob& job = jobs[ji];
      // true score averaged over MC passes
      double true_score = 0;
      for (std::size_t l = 0; l < passes; ++l) {
        const double* own = pe.out[l].row(job.entity_index);
        const double* partner = emb_of(job.partner, l);
        const double* hv = job.corrupt_tail ? own : partner;
        const double* tv = job.corrupt_tail ? partner : own;
        true_score += inv_l * score_triplet(p, hv, job.pos.rel, tv);
      }
      auto cand_score = [&](EntityId c) {
        double s = 0;
        for (std::size_t l = 0; l < passes; ++l) {
          const double* own = pe.out[l].row(job.entity_index);
          const double* cv = emb_of(c, l);
          s += inv_l * (job.corrupt_tail
                            ? score_triplet(p, own, job.pos.rel, cv)
                            : score_triplet(p, cv, job.pos.rel, own));
        }
        return s;
      };
      auto is_known = [&](EntityId c) {
        return job.corrupt_tail ? known.contains(job.pos.head, job.pos.rel, c)
                                : known.contains(c, job.pos.rel, job.pos.tail);
      };
      RankResult r = filtered_rank(job.pos, job.corrupt_tail, job.partner,
                                   true_score, candidates, cand_score,
                                   is_known);
      r.unseen_unseen = split.is_unseen(job.partner);
      out.results[ji] = r;
    };
    if (opts.threads > 1) {
      std::vector<std::thread> workers;
      std::size_t nw = std::size_t(opts.threads);
      for (std::size_t w = 0; w < nw; ++w)
        workers.emplace_back([&, w] {
          for (std::size_t ji = w; ji < jobs.size(); ji += nw) run_job(ji);
        });
      for (auto& t : workers) t.join();
    } else {
      for (std::size_t ji = 0; ji < jobs.size(); ++ji) run_job(ji);
    }
  } else {
    // relation prediction: average sigmoid scores over passes, label with
    // every known-true relation of the pair
    std::vector<Vec> scores(jobs.size());
    std::vector<std::vector<uint8_t>> labels(jobs.size());
    auto run_job = [&](std::size_t ji) {
      const QueryJob& job = jobs[ji];
      Vec acc(p.raw_relations(), 0.0);
      Vec logits;
      for (std::size_t l = 0; l < passes; ++l) {
        const double* own = pe.out[l].row(job.entity_index);
        const double* partner = emb_of(job.partner, l);
        const double* hv = job.corrupt_tail ? own : partner;
        const double* tv = job.corrupt_tail ? partner : own;
        score_logits(p, hv, tv, logits);
        for (std::size_t k = 0; k < acc.size(); ++k) {
          double x = logits[k];
          double sig = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                              : std::exp(x) / (1.0 + std::exp(x));
          acc[k] += inv_l * sig;
        }
      }
      std::vector<uint8_t> lab(p.raw_relations(), 0);
      for (RelationId r = 0; r < p.raw_relations(); ++r)
        if (known.contains(job.pos.head, r, job.pos.tail)) lab[r] = 1;
      lab[job.pos.rel] = 1;
      scores[ji] = std::move(acc);
      labels[ji] = std::move(lab);
    };
    if (opts.threads > 1) {
      std::vector<std::thread> workers;
      std::size_t nw = std::size_t(opts.threads);
      for (std::size_t w = 0; w < nw; ++w)
        workers.emplace_back([&, w] {
          for (std::size_t ji = w; ji < jobs.size(); ji += nw) run_job(ji);
        });
      for (auto& t : workers) t.join();
    } else {
      for (std::size_t ji = 0; ji < jobs.size(); ++ji) run_job(ji);
    }
    out.ddi = ddi_metrics(scores, labels);
  }
  return out;
}

void write_ranks_csv(const std::string& path, const Vocabulary& vocab,
                     const std::vector<RankResult>& results) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::Io, "cannot write ranks csv: " + path);
  f << "head,relation,tail,corrupted_slot,category,rank_optimistic,"
       "rank_pessimistic,rank_mean\n";
  for (const RankResult& r : results) {
    f << vocab.entity_name(r.query.head) << ','
      << vocab.relation_name(r.query.rel) << ','
      << vocab.entity_name(r.query.tail) << ','
      << (r.corrupt_tail ? "tail" : "head") << ','
      << (r.unseen_unseen ? "unseen-unseen" : "seen-unseen") << ','
      << rank_of(r, TieRule::Optimistic) << ','
      << rank_of(r, TieRule::Pessimistic) << ',' << rank_of(r, TieRule::Mean)
      << '\n';
  }
  if (!f) fail(ErrorKind::Io, "write failure on " + path);
}

}  // namespace gen
