#include "gen/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gen/error.hpp"
#include "gen/eval.hpp"
#include "gen/kernels.hpp"

using nlohmann::json;

namespace gen {

void HyperParams::validate() const {
  std::vector<std::string> bad;
  if (dim == 0) bad.push_back("model.dim");
  if (n_basis == 0) bad.push_back("model.n_basis");
  if (lr <= 0) bad.push_back("train.lr");
  if (task_kind == TaskKind::EntityPrediction && margin <= 0)
    bad.push_back("train.margin");
  if (task_kind == TaskKind::EntityPrediction && num_neg < 1)
    bad.push_back("train.num_neg");
  if (l_train < 1) bad.push_back("train.l_train");
  if (l_test < 1) bad.push_back("eval.l_test");
  if (shots < 1) bad.push_back("train.shots");
  if (entities_per_episode < 1) bad.push_back("train.n_entities");
  if (dropout < 0 || dropout >= 1) bad.push_back("model.dropout");
  if (!bad.empty()) {
    std::string msg = "invalid hyperparameters:";
    for (const auto& b : bad) msg += " " + b;
    fail(ErrorKind::Config, msg);
  }
}

// ---------------------------------------------------------------------------
// losses

double hinge_loss(const std::vector<double>& pos_scores,
                  const std::vector<std::vector<double>>& neg_scores,
                  double margin) {
  if (pos_scores.size() != neg_scores.size())
    fail(ErrorKind::Data, "hinge_loss: positive/negative shape mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < pos_scores.size(); ++i) {
    if (neg_scores[i].empty())
      fail(ErrorKind::Data, "hinge_loss: positive without negatives");
    for (double sn : neg_scores[i])
      loss += std::max(margin - pos_scores[i] + sn, 0.0);
  }
  return loss;
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// softplus(-|x|) + relu(x) - x*y, elementwise stable BCE-with-logits
double bce_elem(double x, double y) {
  return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

double bce_loss(const Vec& logits, const std::vector<uint8_t>& labels) {
  if (logits.size() != labels.size() || logits.empty())
    fail(ErrorKind::Data, "bce_loss: shape mismatch or empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    s += bce_elem(logits[i], labels[i] ? 1.0 : 0.0);
  return s / double(logits.size());
}

// ---------------------------------------------------------------------------
// gradients

GradientSet::GradientSet(const ModelParams& p)
    : entity_emb(p.entity_emb.rows, p.entity_emb.cols),
      relation_emb(p.relation_emb.rows, p.relation_emb.cols),
      inductive{Mat(p.inductive.bases.rows, p.inductive.bases.cols),
                Mat(p.inductive.coeffs.rows, p.inductive.coeffs.cols)},
      mu{Mat(p.trans_mu.basis.bases.rows, p.trans_mu.basis.bases.cols),
         Mat(p.trans_mu.basis.coeffs.rows, p.trans_mu.basis.coeffs.cols)},
      sigma{Mat(p.trans_sigma.basis.bases.rows, p.trans_sigma.basis.bases.cols),
            Mat(p.trans_sigma.basis.coeffs.rows,
                p.trans_sigma.basis.coeffs.cols)},
      mu_self(p.trans_mu.self_weight.rows, p.trans_mu.self_weight.cols),
      sigma_self(p.trans_sigma.self_weight.rows, p.trans_sigma.self_weight.cols),
      entity_touched(p.entity_emb.rows, 0),
      relation_touched(p.relation_emb.rows, 0) {
  if (p.score_kind == ScoreKind::Linear) {
    head_w1 = Mat(p.head.w1.rows, p.head.w1.cols);
    head_b1 = Mat(p.head.b1.rows, p.head.b1.cols);
    head_w2 = Mat(p.head.w2.rows, p.head.w2.cols);
    head_b2 = Mat(p.head.b2.rows, p.head.b2.cols);
  }
}

void GradientSet::zero() {
  for (Mat* m : {&entity_emb, &relation_emb, &inductive.bases,
                 &inductive.coeffs, &mu.bases, &mu.coeffs, &sigma.bases,
                 &sigma.coeffs, &mu_self, &sigma_self, &head_w1, &head_b1,
                 &head_w2, &head_b2})
    m->zero();
  std::fill(entity_touched.begin(), entity_touched.end(), 0);
  std::fill(relation_touched.begin(), relation_touched.end(), 0);
}

bool GradientSet::all_finite(std::string* offender) const {
  auto check = [&](const Mat& m, const char* name) {
    for (double x : m.data)
      if (!std::isfinite(x)) {
        if (offender) *offender = name;
        return false;
      }
    return true;
  };
  return check(entity_emb, "entity_emb") &&
         check(relation_emb, "relation_emb") &&
         check(inductive.bases, "ind.bases") &&
         check(inductive.coeffs, "ind.coeffs") && check(mu.bases, "mu.bases") &&
         check(mu.coeffs, "mu.coeffs") && check(mu_self, "mu.self") &&
         check(sigma.bases, "sigma.bases") &&
         check(sigma.coeffs, "sigma.coeffs") &&
         check(sigma_self, "sigma.self") && check(head_w1, "head.w1") &&
         check(head_b1, "head.b1") && check(head_w2, "head.w2") &&
         check(head_b2, "head.b2");
}

// ---------------------------------------------------------------------------
// episode sampling

EpisodeData sample_episode(const std::vector<UnseenEntity>& meta_set,
                           std::size_t n_entities, std::size_t shots,
                           std::size_t num_neg,
                           const std::vector<EntityId>& seen_pool,
                           const TripletFilter& known_positives, Rng& rng) {
  EpisodeData data;
  data.task = sample_task(meta_set, n_entities, shots, rng);
  data.queries.resize(data.task.entities.size());
  for (std::size_t i = 0; i < data.task.entities.size(); ++i) {
    const TaskEntity& te = data.task.entities[i];
    for (const Triplet& q : te.query) {
      QueryItem item;
      item.pos = q;
      item.task_at_head = q.head == te.entity;
      if (num_neg > 0) {
        std::vector<Triplet> negs =
            corrupt(q, te.entity, seen_pool, known_positives, num_neg, rng);
        item.negatives.reserve(negs.size());
        for (const Triplet& t : negs)
          item.negatives.push_back(item.task_at_head ? t.tail : t.head);
      }
      data.queries[i].push_back(std::move(item));
    }
  }
  return data;
}

EpisodeNoise sample_noise(std::size_t n_entities, std::size_t dim,
                          bool stochastic, double dropout_rate,
                          bool dropout_on, Rng& rng) {
  EpisodeNoise noise;
  noise.has_z = stochastic;
  noise.dropout_active = dropout_on && dropout_rate > 0;
  if (stochastic) noise.z.resize(n_entities);
  if (noise.dropout_active) {
    noise.keep_phi.resize(n_entities);
    noise.keep_mu.resize(n_entities);
    noise.keep_sigma.resize(n_entities);
  }
  for (std::size_t i = 0; i < n_entities; ++i) {
    if (stochastic) {
      noise.z[i].resize(dim);
      for (std::size_t k = 0; k < dim; ++k) noise.z[i][k] = rng.normal();
    }
    if (noise.dropout_active) {
      sample_keep_mask(dim, dropout_rate, rng, noise.keep_phi[i]);
      sample_keep_mask(dim, dropout_rate, rng, noise.keep_mu[i]);
      sample_keep_mask(dim, dropout_rate, rng, noise.keep_sigma[i]);
    }
  }
  return noise;
}

// ---------------------------------------------------------------------------
// episode forward/backward

namespace {

struct EntityTape {
  std::vector<AggEdge> edges;
  Vec agg_ind, phi;
  Vec agg_mu, mu;
  Vec agg_sigma, sigma_raw, sigma;
  Vec phi_prime;
};

struct Tape {
  std::vector<EntityTape> ents;
  std::unordered_map<EntityId, int> task_idx;
  WeightCache w_ind, w_mu, w_sigma;
  std::vector<std::vector<double>> pos_scores;
  std::vector<std::vector<std::vector<double>>> neg_scores;
  std::vector<std::vector<Vec>> logits;
  std::vector<std::vector<std::vector<uint8_t>>> labels;
  Vec zeros;

  explicit Tape(const ModelParams& p)
      : w_ind(p.inductive),
        w_mu(p.trans_mu.basis),
        w_sigma(p.trans_sigma.basis),
        zeros(p.dim, 0.0) {}
};

// entity half of C for one edge in the given layer
const double* edge_entity_vec(const ModelParams& p, const Tape& tape,
                              const AggEdge& e, bool trans_layer) {
  if (e.seen) return p.entity_emb.row(e.neighbor);
  if (trans_layer && e.task_idx >= 0)
    return tape.ents[e.task_idx].phi.data();
  return nullptr;  // unseen and unreachable: zero vector
}

std::vector<SupportEdge> resolve_edges(const ModelParams& p, const Tape& tape,
                                       const std::vector<AggEdge>& edges,
                                       bool trans_layer) {
  std::vector<SupportEdge> out;
  out.reserve(edges.size());
  for (const AggEdge& e : edges)
    out.push_back({e.agg_rel, e.neighbor,
                   edge_entity_vec(p, tape, e, trans_layer)});
  return out;
}

double run_forward(const ModelParams& p, const EpisodeContext& ctx,
                   const EpisodeData& data, const EpisodeNoise& noise,
                   const EpisodeConfig& cfg, Tape& tape) {
  const std::size_t d = p.dim;
  const std::size_t n = data.task.entities.size();
  const bool trans = cfg.mode == EmbedMode::Transductive;
  const std::vector<uint8_t>& mask = *ctx.unseen_mask;

  tape.ents.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    tape.task_idx[data.task.entities[i].entity] = int(i);

  // inductive pass for every entity first (two-phase order: the transductive
  // layer needs every task mate's phi)
  for (std::size_t i = 0; i < n; ++i) {
    EntityTape& et = tape.ents[i];
    et.edges = build_agg_edges(data.task.entities[i].entity,
                               data.task.entities[i].support, mask,
                               tape.task_idx, p.raw_relations());
    et.agg_ind.resize(d);
    auto edges = resolve_edges(p, tape, et.edges, false);
    aggregate_support(p, tape.w_ind, edges, et.agg_ind.data());
    et.phi = et.agg_ind;
    if (noise.dropout_active)
      apply_dropout_mask(et.phi.data(), d, p.dropout_rate,
                         noise.keep_phi[i].data());
  }

  if (trans) {
    for (std::size_t i = 0; i < n; ++i) {
      EntityTape& et = tape.ents[i];
      auto edges = resolve_edges(p, tape, et.edges, true);
      et.agg_mu.resize(d);
      aggregate_support(p, tape.w_mu, edges, et.agg_mu.data());
      kernels::gemv_acc(p.trans_mu.self_weight.data.data(), d, d,
                        et.phi.data(), et.agg_mu.data());
      et.mu = et.agg_mu;
      if (noise.dropout_active)
        apply_dropout_mask(et.mu.data(), d, p.dropout_rate,
                           noise.keep_mu[i].data());
      if (cfg.stochastic) {
        et.agg_sigma.resize(d);
        aggregate_support(p, tape.w_sigma, edges, et.agg_sigma.data());
        kernels::gemv_acc(p.trans_sigma.self_weight.data.data(), d, d,
                          et.phi.data(), et.agg_sigma.data());
        et.sigma_raw = et.agg_sigma;
        if (noise.dropout_active)
          apply_dropout_mask(et.sigma_raw.data(), d, p.dropout_rate,
                             noise.keep_sigma[i].data());
        et.sigma.resize(d);
        for (std::size_t k = 0; k < d; ++k)
          et.sigma[k] = softplus_floor(et.sigma_raw[k]);
        et.phi_prime.resize(d);
        for (std::size_t k = 0; k < d; ++k)
          et.phi_prime[k] = et.mu[k] + et.sigma[k] * noise.z[i][k];
      } else {
        et.phi_prime = et.mu;
      }
    }
  }

  // scoring embedding of the task entity itself
  auto own_vec = [&](std::size_t i) -> const double* {
    return trans ? tape.ents[i].phi_prime.data() : tape.ents[i].phi.data();
  };
  // partner resolution: the inductive scheme treats other unseen entities as
  // zero vectors; the transductive one reaches task mates through phi'
  auto partner_vec = [&](EntityId e) -> const double* {
    if (!mask[e]) return p.entity_emb.row(e);
    if (trans) {
      auto it = tape.task_idx.find(e);
      if (it != tape.task_idx.end())
        return tape.ents[it->second].phi_prime.data();
    }
    return tape.zeros.data();
  };

  double loss = 0.0;
  tape.pos_scores.assign(n, {});
  tape.neg_scores.assign(n, {});
  tape.logits.assign(n, {});
  tape.labels.assign(n, {});
  const double inv_n = 1.0 / double(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& queries = data.queries[i];
    if (queries.empty()) fail(ErrorKind::Data, "episode entity without queries");
    const double inv_q = 1.0 / double(queries.size());
    for (const QueryItem& q : queries) {
      const double* hv =
          q.task_at_head ? own_vec(i) : partner_vec(q.pos.head);
      const double* tv =
          q.task_at_head ? partner_vec(q.pos.tail) : own_vec(i);
      if (cfg.task_kind == TaskKind::EntityPrediction) {
        double sp = score_triplet(p, hv, q.pos.rel, tv);
        std::vector<double> sns;
        sns.reserve(q.negatives.size());
        if (q.negatives.empty())
          fail(ErrorKind::Data, "entity-prediction query without negatives");
        for (EntityId neg : q.negatives) {
          const double* nv = p.entity_emb.row(neg);
          double sn = q.task_at_head ? score_triplet(p, hv, q.pos.rel, nv)
                                     : score_triplet(p, nv, q.pos.rel, tv);
          sns.push_back(sn);
        }
        const double w = inv_n * inv_q / double(sns.size());
        for (double sn : sns) loss += w * std::max(cfg.margin - sp + sn, 0.0);
        tape.pos_scores[i].push_back(sp);
        tape.neg_scores[i].push_back(std::move(sns));
      } else {
        Vec logits;
        score_logits(p, hv, tv, logits);
        std::vector<uint8_t> labels(p.raw_relations(), 0);
        for (RelationId r = 0; r < p.raw_relations(); ++r)
          if (ctx.label_filter->contains(q.pos.head, r, q.pos.tail))
            labels[r] = 1;
        labels[q.pos.rel] = 1;
        loss += inv_n * inv_q * bce_loss(logits, labels);
        tape.logits[i].push_back(std::move(logits));
        tape.labels[i].push_back(std::move(labels));
      }
    }
  }
  return loss;
}

void add_scaled(double* dst, const double* src, double s, std::size_t d) {
  kernels::axpy(s, src, dst, d);
}

// dL/d(h,r,t) for the scalar score kinds, routed into nullable sinks
void score_backward(const ModelParams& p, const double* hv, RelationId rel,
                    const double* tv, double ds, double* dh, double* dt,
                    GradientSet& g) {
  const std::size_t d = p.dim;
  const double* rv = p.relation_emb.row(rel);
  double* dr = g.relation_emb.row(rel);
  g.relation_touched[rel] = 1;
  switch (p.score_kind) {
    case ScoreKind::DistMult:
      for (std::size_t k = 0; k < d; ++k) {
        if (dh) dh[k] += ds * rv[k] * tv[k];
        dr[k] += ds * hv[k] * tv[k];
        if (dt) dt[k] += ds * hv[k] * rv[k];
      }
      break;
    case ScoreKind::TransE: {
      double nsq = kernels::trans_sq(hv, rv, tv, d);
      if (nsq <= 0) return;  // zero residual: subgradient 0
      double inv_norm = 1.0 / std::sqrt(nsq);
      for (std::size_t k = 0; k < d; ++k) {
        double v = (hv[k] + rv[k] - tv[k]) * inv_norm;
        // s = -||v||: d s / d h = -v/||v||
        if (dh) dh[k] += -ds * v;
        dr[k] += -ds * v;
        if (dt) dt[k] += ds * v;
      }
      break;
    }
    case ScoreKind::Linear:
      fail(ErrorKind::Data, "score_backward: Linear uses the logits path");
  }
}

// backward through the two-layer head; dlogits already includes all loss
// weighting. dh/dt nullable.
void head_backward(const ModelParams& p, const double* hv, const double* tv,
                   const Vec& dlogits, double* dh, double* dt,
                   GradientSet& g) {
  const std::size_t d = p.dim;
  const LinearHead& lh = p.head;
  const std::size_t hid = lh.hidden();
  thread_local Vec cat, x1, h1, dx1, dcat;
  cat.resize(2 * d);
  std::copy(hv, hv + d, cat.begin());
  std::copy(tv, tv + d, cat.begin() + d);
  x1.assign(hid, 0.0);
  kernels::gemv_acc(lh.w1.data.data(), hid, 2 * d, cat.data(), x1.data());
  for (std::size_t i = 0; i < hid; ++i) x1[i] += lh.b1.data[i];
  h1.resize(hid);
  for (std::size_t i = 0; i < hid; ++i) h1[i] = std::max(0.0, x1[i]);

  // logits = W2 h1 + b2
  kernels::outer_acc(g.head_w2.data.data(), lh.labels(), hid, 1.0,
                     dlogits.data(), h1.data());
  for (std::size_t i = 0; i < lh.labels(); ++i) g.head_b2.data[i] += dlogits[i];
  thread_local Vec dh1;
  dh1.assign(hid, 0.0);
  kernels::gemv_t_acc(lh.w2.data.data(), lh.labels(), hid, dlogits.data(),
                      dh1.data());
  dx1.resize(hid);
  for (std::size_t i = 0; i < hid; ++i) dx1[i] = x1[i] > 0 ? dh1[i] : 0.0;
  kernels::outer_acc(g.head_w1.data.data(), hid, 2 * d, 1.0, dx1.data(),
                     cat.data());
  for (std::size_t i = 0; i < hid; ++i) g.head_b1.data[i] += dx1[i];
  dcat.assign(2 * d, 0.0);
  kernels::gemv_t_acc(lh.w1.data.data(), hid, 2 * d, dx1.data(), dcat.data());
  if (dh) add_scaled(dh, dcat.data(), 1.0, d);
  if (dt) add_scaled(dt, dcat.data() + d, 1.0, d);
}

void run_backward(const ModelParams& p, const EpisodeContext& ctx,
                  const EpisodeData& data, const EpisodeNoise& noise,
                  const EpisodeConfig& cfg, Tape& tape, GradientSet& grads) {
  const std::size_t d = p.dim;
  const std::size_t n = data.task.entities.size();
  const bool trans = cfg.mode == EmbedMode::Transductive;
  const std::vector<uint8_t>& mask = *ctx.unseen_mask;
  const double inv_n = 1.0 / double(n);

  std::vector<Vec> dphi(n, Vec(d, 0.0));
  std::vector<Vec> dout(n, Vec(d, 0.0));  // d loss / d scoring embedding
  std::unordered_map<RelationId, Vec> gw_ind, gw_mu, gw_sigma;

  // gradient sink for one entity slot of a query
  auto partner_sink = [&](EntityId e) -> double* {
    if (!mask[e]) {
      grads.entity_touched[e] = 1;
      return grads.entity_emb.row(e);
    }
    if (trans) {
      auto it = tape.task_idx.find(e);
      if (it != tape.task_idx.end()) return dout[it->second].data();
    }
    return nullptr;
  };
  auto own_vec = [&](std::size_t i) -> const double* {
    return trans ? tape.ents[i].phi_prime.data() : tape.ents[i].phi.data();
  };
  auto partner_vec = [&](EntityId e) -> const double* {
    if (!mask[e]) return p.entity_emb.row(e);
    if (trans) {
      auto it = tape.task_idx.find(e);
      if (it != tape.task_idx.end())
        return tape.ents[it->second].phi_prime.data();
    }
    return tape.zeros.data();
  };

  // ---- loss + score backward ----
  for (std::size_t i = 0; i < n; ++i) {
    const auto& queries = data.queries[i];
    const double inv_q = 1.0 / double(queries.size());
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const QueryItem& q = queries[qi];
      const double* hv = q.task_at_head ? own_vec(i) : partner_vec(q.pos.head);
      const double* tv = q.task_at_head ? partner_vec(q.pos.tail) : own_vec(i);
      double* dh = q.task_at_head ? dout[i].data() : partner_sink(q.pos.head);
      double* dt = q.task_at_head ? partner_sink(q.pos.tail) : dout[i].data();

      if (cfg.task_kind == TaskKind::EntityPrediction) {
        const double sp = tape.pos_scores[i][qi];
        const auto& sns = tape.neg_scores[i][qi];
        const double w = inv_n * inv_q / double(sns.size());
        double dsp = 0.0;
        for (std::size_t ni = 0; ni < sns.size(); ++ni) {
          if (cfg.margin - sp + sns[ni] <= 0) continue;  // inactive pair
          dsp -= w;
          // negative triplet: task slot keeps the task embedding
          EntityId neg = q.negatives[ni];
          const double* nv = p.entity_emb.row(neg);
          grads.entity_touched[neg] = 1;
          double* dnv = grads.entity_emb.row(neg);
          if (q.task_at_head)
            score_backward(p, hv, q.pos.rel, nv, w, dout[i].data(), dnv, grads);
          else
            score_backward(p, nv, q.pos.rel, tv, w, dnv, dout[i].data(), grads);
        }
        if (dsp != 0.0)
          score_backward(p, hv, q.pos.rel, tv, dsp, dh, dt, grads);
      } else {
        const Vec& logits = tape.logits[i][qi];
        const auto& labels = tape.labels[i][qi];
        const double w = inv_n * inv_q / double(logits.size());
        Vec dlogits(logits.size());
        for (std::size_t k = 0; k < logits.size(); ++k)
          dlogits[k] = w * (stable_sigmoid(logits[k]) - (labels[k] ? 1.0 : 0.0));
        head_backward(p, hv, tv, dlogits, dh, dt, grads);
      }
    }
  }

  // accumulate dL/dW_r for one head's aggregation, plus C-half routing
  auto edge_backward = [&](const EntityTape& et, const Vec& dagg,
                           std::unordered_map<RelationId, Vec>& gw,
                           WeightCache& weights, bool trans_layer,
                           std::vector<Vec>& dphi_sink) {
    const double inv_k = 1.0 / double(et.edges.size());
    thread_local Vec sdagg, cat, dcat;
    sdagg.resize(d);
    for (std::size_t k = 0; k < d; ++k) sdagg[k] = dagg[k] * inv_k;
    cat.resize(2 * d);
    for (const AggEdge& e : et.edges) {
      const double* rv = p.relation_emb.row(e.agg_rel);
      const double* ev = edge_entity_vec(p, tape, e, trans_layer);
      std::copy(rv, rv + d, cat.begin());
      if (ev)
        std::copy(ev, ev + d, cat.begin() + d);
      else
        std::fill(cat.begin() + d, cat.end(), 0.0);
      auto [it, fresh] = gw.try_emplace(e.agg_rel);
      if (fresh) it->second.assign(2 * d * d, 0.0);
      kernels::outer_acc(it->second.data(), d, 2 * d, 1.0, sdagg.data(),
                         cat.data());
      dcat.assign(2 * d, 0.0);
      kernels::gemv_t_acc(weights.get(e.agg_rel), d, 2 * d, sdagg.data(),
                          dcat.data());
      grads.relation_touched[e.agg_rel] = 1;
      add_scaled(grads.relation_emb.row(e.agg_rel), dcat.data(), 1.0, d);
      if (e.seen) {
        grads.entity_touched[e.neighbor] = 1;
        add_scaled(grads.entity_emb.row(e.neighbor), dcat.data() + d, 1.0, d);
      } else if (trans_layer && e.task_idx >= 0) {
        add_scaled(dphi_sink[e.task_idx].data(), dcat.data() + d, 1.0, d);
      }
    }
  };

  // ---- transductive heads ----
  if (trans) {
    thread_local Vec dagg;
    for (std::size_t i = 0; i < n; ++i) {
      EntityTape& et = tape.ents[i];
      const Vec& dpp = dout[i];
      // mu head: phi' = mu + sigma*z, mu = dropout(agg_mu)
      dagg.resize(d);
      if (noise.dropout_active) {
        const double scale = 1.0 / (1.0 - p.dropout_rate);
        for (std::size_t k = 0; k < d; ++k)
          dagg[k] = noise.keep_mu[i][k] ? dpp[k] * scale : 0.0;
      } else {
        std::copy(dpp.begin(), dpp.end(), dagg.begin());
      }
      kernels::outer_acc(grads.mu_self.data.data(), d, d, 1.0, dagg.data(),
                         et.phi.data());
      kernels::gemv_t_acc(p.trans_mu.self_weight.data.data(), d, d,
                          dagg.data(), dphi[i].data());
      edge_backward(et, dagg, gw_mu, tape.w_mu, true, dphi);

      if (cfg.stochastic) {
        // sigma = softplus(sigma_raw) + eps, sigma_raw = dropout(agg_sigma)
        for (std::size_t k = 0; k < d; ++k) {
          double dsigma = dpp[k] * noise.z[i][k];
          dagg[k] = dsigma * stable_sigmoid(et.sigma_raw[k]);
        }
        if (noise.dropout_active) {
          const double scale = 1.0 / (1.0 - p.dropout_rate);
          for (std::size_t k = 0; k < d; ++k)
            dagg[k] = noise.keep_sigma[i][k] ? dagg[k] * scale : 0.0;
        }
        kernels::outer_acc(grads.sigma_self.data.data(), d, d, 1.0,
                           dagg.data(), et.phi.data());
        kernels::gemv_t_acc(p.trans_sigma.self_weight.data.data(), d, d,
                            dagg.data(), dphi[i].data());
        edge_backward(et, dagg, gw_sigma, tape.w_sigma, true, dphi);
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) dphi[i] = dout[i];
  }

  // ---- inductive layer ----
  {
    thread_local Vec dagg;
    std::vector<Vec> no_sink;
    for (std::size_t i = 0; i < n; ++i) {
      EntityTape& et = tape.ents[i];
      dagg.resize(d);
      if (noise.dropout_active) {
        const double scale = 1.0 / (1.0 - p.dropout_rate);
        for (std::size_t k = 0; k < d; ++k)
          dagg[k] = noise.keep_phi[i][k] ? dphi[i][k] * scale : 0.0;
      } else {
        std::copy(dphi[i].begin(), dphi[i].end(), dagg.begin());
      }
      edge_backward(et, dagg, gw_ind, tape.w_ind, false, no_sink);
    }
  }

  // ---- fold per-relation weight gradients into the basis blocks ----
  auto fold = [&](std::unordered_map<RelationId, Vec>& gw, const Basis& basis,
                  BasisGrad& bg) {
    const std::size_t w = basis.weight_size();
    for (auto& [rel, gwr] : gw) {
      grads.relation_touched[rel] = 1;
      for (std::size_t b = 0; b < basis.n_basis; ++b) {
        bg.coeffs.at(rel, b) +=
            kernels::dot(gwr.data(), basis.bases.row(b), w);
        kernels::axpy(basis.coeffs.at(rel, b), gwr.data(), bg.bases.row(b), w);
      }
    }
  };
  fold(gw_ind, p.inductive, grads.inductive);
  if (trans) {
    fold(gw_mu, p.trans_mu.basis, grads.mu);
    if (cfg.stochastic) fold(gw_sigma, p.trans_sigma.basis, grads.sigma);
  }
}

}  // namespace

double episode_loss(const ModelParams& p, const EpisodeContext& ctx,
                    const EpisodeData& data, const EpisodeNoise& noise,
                    const EpisodeConfig& cfg) {
  Tape tape(p);
  return run_forward(p, ctx, data, noise, cfg, tape);
}

double episode_loss_backward(const ModelParams& p, const EpisodeContext& ctx,
                             const EpisodeData& data,
                             const EpisodeNoise& noise,
                             const EpisodeConfig& cfg, GradientSet& grads) {
  Tape tape(p);
  double loss = run_forward(p, ctx, data, noise, cfg, tape);
  grads.zero();
  run_backward(p, ctx, data, noise, cfg, tape, grads);
  return loss;
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(const ModelParams& p, AdamConfig cfg_) : cfg(cfg_) {
  for (auto& [name, mat] : p.tensors()) {
    (void)name;
    m.emplace_back(mat->rows, mat->cols);
    v.emplace_back(mat->rows, mat->cols);
  }
}

namespace {

std::vector<const Mat*> grad_tensors(const GradientSet& g, bool linear) {
  std::vector<const Mat*> out = {
      &g.entity_emb, &g.relation_emb, &g.inductive.bases, &g.inductive.coeffs,
      &g.mu.bases,   &g.mu.coeffs,    &g.mu_self,         &g.sigma.bases,
      &g.sigma.coeffs, &g.sigma_self};
  if (linear) {
    out.push_back(&g.head_w1);
    out.push_back(&g.head_b1);
    out.push_back(&g.head_w2);
    out.push_back(&g.head_b2);
  }
  return out;
}

}  // namespace

void adam_update(ModelParams& p, const GradientSet& g, AdamState& st,
                 double lr) {
  auto params = p.tensors();
  auto grads = grad_tensors(g, p.score_kind == ScoreKind::Linear);
  if (params.size() != grads.size() || params.size() != st.m.size())
    fail(ErrorKind::Data, "adam_update: tensor list mismatch");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.cfg.beta1, double(st.step));
  const double bc2 = 1.0 - std::pow(st.cfg.beta2, double(st.step));

  for (std::size_t t = 0; t < params.size(); ++t) {
    Mat& pm = *params[t].second;
    const Mat& gm = *grads[t];
    Mat& m = st.m[t];
    Mat& v = st.v[t];
    const std::string& name = params[t].first;
    // row-sparse tensors move only where the episode touched them
    const std::vector<uint8_t>* touched = nullptr;
    if (name == "entity_emb") touched = &g.entity_touched;
    if (name == "relation_emb" || name == "ind.coeffs" ||
        name == "mu.coeffs" || name == "sigma.coeffs")
      touched = &g.relation_touched;
    if (touched) {
      for (std::size_t r = 0; r < pm.rows; ++r) {
        if (!(*touched)[r]) continue;
        kernels::adam_step(pm.row(r), gm.row(r), m.row(r), v.row(r), pm.cols,
                           lr, st.cfg.beta1, st.cfg.beta2, st.cfg.eps, bc1,
                           bc2);
      }
    } else {
      kernels::adam_step(pm.data.data(), gm.data.data(), m.data.data(),
                         v.data.data(), pm.data.size(), lr, st.cfg.beta1,
                         st.cfg.beta2, st.cfg.eps, bc1, bc2);
    }
  }
}

// ---------------------------------------------------------------------------
// pretraining

PretrainResult pretrain_in_graph(const Manifest& man, const HyperParams& hp,
                                 ModelParams init, const TrainLogSink* log) {
  const OOGSplit& split = man.split;
  if (split.in_graph.empty())
    fail(ErrorKind::Data, "pretrain: in-graph is empty");
  PretrainResult res;
  res.params = std::move(init);
  ModelParams& p = res.params;
  if (hp.pretrain_steps == 0) return res;

  TripletFilter filter(man.vocab.entity_count(), p.relation_emb.rows);
  filter.add_all(split.in_graph);
  std::vector<EntityId> pool =
      seen_entity_pool(split, man.vocab.entity_count());

  GradientSet grads(p);
  AdamState opt(p);
  const std::size_t window = std::max<std::size_t>(1, hp.pretrain_steps / 20);
  double window_sum = 0.0;
  std::size_t window_count = 0;

  for (std::size_t step = 1; step <= hp.pretrain_steps; ++step) {
    Rng rng(derive_seed(hp.seed, "pretrain", step));
    grads.zero();
    double loss = 0.0;

    if (hp.task_kind == TaskKind::EntityPrediction) {
      const double w = 1.0 / double(hp.pretrain_batch * hp.num_neg);
      for (std::size_t b = 0; b < hp.pretrain_batch; ++b) {
        const Triplet& pos =
            split.in_graph[rng.uniform_index(split.in_graph.size())];
        const double* hv = p.entity_emb.row(pos.head);
        const double* tv = p.entity_emb.row(pos.tail);
        double sp = score_triplet(p, hv, pos.rel, tv);
        for (std::size_t k = 0; k < hp.num_neg; ++k) {
          // corrupt one uniformly chosen slot with a seen entity
          bool corrupt_tail = rng.uniform_index(2) == 0;
          EntityId original = corrupt_tail ? pos.tail : pos.head;
          EntityId cand = 0;
          bool ok = false;
          for (int attempt = 0; attempt < 1000; ++attempt) {
            cand = pool[rng.uniform_index(pool.size())];
            if (cand == original) continue;
            Triplet neg = pos;
            (corrupt_tail ? neg.tail : neg.head) = cand;
            if (filter.contains(neg)) continue;
            ok = true;
            break;
          }
          if (!ok)
            fail(ErrorKind::Data, "pretrain: negative sampling exhausted");
          const double* nv = p.entity_emb.row(cand);
          double sn = corrupt_tail ? score_triplet(p, hv, pos.rel, nv)
                                   : score_triplet(p, nv, pos.rel, tv);
          double term = hp.margin - sp + sn;
          if (term <= 0) continue;
          loss += w * term;
          grads.entity_touched[pos.head] = 1;
          grads.entity_touched[pos.tail] = 1;
          grads.entity_touched[cand] = 1;
          score_backward(p, hv, pos.rel, tv, -w, grads.entity_emb.row(pos.head),
                         grads.entity_emb.row(pos.tail), grads);
          if (corrupt_tail)
            score_backward(p, hv, pos.rel, nv, w, grads.entity_emb.row(pos.head),
                           grads.entity_emb.row(cand), grads);
          else
            score_backward(p, nv, pos.rel, tv, w, grads.entity_emb.row(cand),
                           grads.entity_emb.row(pos.tail), grads);
        }
      }
    } else {
      const double w = 1.0 / double(hp.pretrain_batch);
      for (std::size_t b = 0; b < hp.pretrain_batch; ++b) {
        const Triplet& pos =
            split.in_graph[rng.uniform_index(split.in_graph.size())];
        const double* hv = p.entity_emb.row(pos.head);
        const double* tv = p.entity_emb.row(pos.tail);
        Vec logits;
        score_logits(p, hv, tv, logits);
        std::vector<uint8_t> labels(p.raw_relations(), 0);
        for (RelationId r = 0; r < p.raw_relations(); ++r)
          if (filter.contains(pos.head, r, pos.tail)) labels[r] = 1;
        loss += w * bce_loss(logits, labels);
        Vec dlogits(logits.size());
        const double wl = w / double(logits.size());
        for (std::size_t k = 0; k < logits.size(); ++k)
          dlogits[k] =
              wl * (stable_sigmoid(logits[k]) - (labels[k] ? 1.0 : 0.0));
        grads.entity_touched[pos.head] = 1;
        grads.entity_touched[pos.tail] = 1;
        head_backward(p, hv, tv, dlogits, grads.entity_emb.row(pos.head),
                      grads.entity_emb.row(pos.tail), grads);
      }
    }

    if (!std::isfinite(loss))
      fail(ErrorKind::Numeric, "pretrain: non-finite loss (divergence)");
    adam_update(p, grads, opt, hp.lr);

    window_sum += loss;
    window_count += 1;
    if (step % window == 0 || step == hp.pretrain_steps) {
      double mean = window_sum / double(window_count);
      res.window_losses.push_back(mean);
      if (log && log->line) {
        json rec = {{"pretrain_step", step}, {"loss", mean}};
        log->line(rec.dump());
      }
      window_sum = 0.0;
      window_count = 0;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// meta-training

TrainResult meta_train(const Manifest& man, const HyperParams& hp,
                       ModelParams init, const TrainLogSink* log) {
  hp.validate();
  const OOGSplit& split = man.split;
  const auto& train_set = split.meta(MetaSet::Train);
  if (train_set.empty()) fail(ErrorKind::Data, "meta_train: empty meta-train set");

  TrainResult res;
  res.params = std::move(init);
  ModelParams& p = res.params;

  // training-visible facts only: in-graph plus meta-train triplets
  TripletFilter filter(man.vocab.entity_count(), p.relation_emb.rows);
  filter.add_all(split.in_graph);
  for (const auto& u : train_set) filter.add_all(u.associated);
  std::vector<EntityId> pool =
      seen_entity_pool(split, man.vocab.entity_count());

  EpisodeContext ctx;
  ctx.unseen_mask = &split.unseen_mask;
  ctx.label_filter = &filter;
  EpisodeConfig cfg;
  cfg.mode = hp.mode;
  cfg.stochastic = hp.stochastic && hp.mode == EmbedMode::Transductive;
  cfg.task_kind = hp.task_kind;
  cfg.margin = hp.margin;

  GradientSet grads(p);
  AdamState opt(p);
  ModelParams best = p;
  double best_metric = -1.0;
  uint64_t best_episode = 0;
  std::size_t stale_evals = 0;

  const std::size_t num_neg =
      hp.task_kind == TaskKind::EntityPrediction ? hp.num_neg : 0;
  const std::size_t n_entities =
      std::min(hp.entities_per_episode, train_set.size());

  for (uint64_t ep = 1; ep <= hp.max_iteration; ++ep) {
    CurriculumState cur{ep, hp.max_iteration, hp.shots, hp.curriculum};
    const std::size_t shots = curriculum_shots(cur);

    Rng ep_rng(derive_seed(hp.seed, "episode", ep));
    EpisodeData data = sample_episode(train_set, n_entities, shots, num_neg,
                                      pool, filter, ep_rng);
    Rng noise_rng(derive_seed(hp.seed, "noise", ep));
    EpisodeNoise noise =
        sample_noise(data.task.entities.size(), p.dim, cfg.stochastic,
                     hp.dropout, true, noise_rng);

    double loss = episode_loss_backward(p, ctx, data, noise, cfg, grads);
    if (!std::isfinite(loss))
      fail(ErrorKind::Numeric, "meta_train: non-finite loss (divergence)");
    std::string offender;
    if (!grads.all_finite(&offender))
      fail(ErrorKind::Numeric,
           "meta_train: non-finite gradient in tensor " + offender);
    adam_update(p, grads, opt, hp.lr);

    json rec = {{"episode", ep}, {"loss", loss}, {"shots", shots}};
    if (hp.eval_every > 0 && ep % hp.eval_every == 0) {
      EvalOptions eo;
      eo.which = MetaSet::Valid;
      eo.mode = hp.mode;
      eo.stochastic = cfg.stochastic;
      eo.shots = hp.shots;
      eo.mc_samples = cfg.stochastic ? hp.l_test : 1;
      eo.seed = derive_seed(hp.seed, "valid-eval");
      EvalOutput vo = evaluate_split(p, man, eo, hp.task_kind);
      // model selection: MRR for entity prediction, ROC for relation
      double metric = hp.task_kind == TaskKind::EntityPrediction
                          ? vo.report(TieRule::Mean).total.mrr
                          : (vo.ddi.has_auc ? vo.ddi.roc_auc : vo.ddi.accuracy);
      rec["val_metric"] = metric;
      if (metric > best_metric) {
        best_metric = metric;
        best = p;
        best_episode = ep;
        stale_evals = 0;
      } else {
        stale_evals += 1;
      }
    }
    if (log && log->line) log->line(rec.dump());
    res.episodes_run = ep;
    // patience 0 disables early stopping
    if (hp.patience > 0 && hp.eval_every > 0 && stale_evals >= hp.patience)
      break;
  }

  if (best_metric >= 0) {
    res.params = std::move(best);
    res.best_metric = best_metric;
    res.best_episode = best_episode;
  } else {
    res.best_metric = 0;
    res.best_episode = res.episodes_run;
  }
  return res;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {
constexpr char kMagic[8] = {'G', 'E', 'N', 'C', 'K', 'P', 'T', '1'};
static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

std::string hex64_(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
  return buf;
}
}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& p,
                     const CheckpointMeta& meta, const AdamState* opt) {
  json j;
  j["format_version"] = 1;
  j["vocab_hash"] = hex64_(meta.vocab_hash);
  j["dim"] = p.dim;
  j["score_kind"] = score_kind_name(p.score_kind);
  j["dropout"] = p.dropout_rate;
  if (!meta.hyper_json.empty()) {
    try {
      j["hyper"] = json::parse(meta.hyper_json);
    } catch (const json::exception&) {
      j["hyper"] = meta.hyper_json;
    }
  }
  json tensors = json::array();
  for (const auto& [name, m] : p.tensors())
    tensors.push_back({{"name", name}, {"rows", m->rows}, {"cols", m->cols}});
  j["tensors"] = tensors;
  j["has_optimizer"] = opt != nullptr;
  if (opt) j["optimizer_step"] = opt->step;
  std::string header = j.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(header.data(), std::streamsize(header.size()));
  for (const auto& [name, m] : p.tensors())
    out.write(reinterpret_cast<const char*>(m->data.data()),
              std::streamsize(m->data.size() * sizeof(double)));
  if (opt) {
    for (const Mat& m : opt->m)
      out.write(reinterpret_cast<const char*>(m.data.data()),
                std::streamsize(m.data.size() * sizeof(double)));
    for (const Mat& m : opt->v)
      out.write(reinterpret_cast<const char*>(m.data.data()),
                std::streamsize(m.data.size() * sizeof(double)));
  }
  if (!out) fail(ErrorKind::Io, "write failure on checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    fail(ErrorKind::Data, "not a checkpoint file: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || len > (64ull << 20))
    fail(ErrorKind::Data, "corrupt checkpoint header: " + path);
  std::string header(len, '\0');
  in.read(header.data(), std::streamsize(len));
  if (!in) fail(ErrorKind::Data, "truncated checkpoint: " + path);
  json j;
  try {
    j = json::parse(header);
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, std::string("corrupt checkpoint metadata: ") + e.what());
  }
  if (j.value("format_version", -1) != 1)
    fail(ErrorKind::Data, "checkpoint format version mismatch");

  LoadedCheckpoint lc;
  lc.meta.vocab_hash = std::stoull(j.at("vocab_hash").get<std::string>(),
                                   nullptr, 16);
  if (j.contains("hyper")) lc.meta.hyper_json = j["hyper"].dump();

  ModelParams& p = lc.params;
  p.dim = j.at("dim").get<std::size_t>();
  p.score_kind = score_kind_from_string(j.at("score_kind").get<std::string>());
  p.dropout_rate = j.at("dropout").get<double>();

  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> shapes;
  std::vector<std::string> order;
  for (const auto& t : j.at("tensors")) {
    shapes[t.at("name")] = {t.at("rows").get<std::size_t>(),
                            t.at("cols").get<std::size_t>()};
    order.push_back(t.at("name"));
  }
  auto shape = [&](const char* name) {
    auto it = shapes.find(name);
    if (it == shapes.end())
      fail(ErrorKind::Data, std::string("checkpoint missing tensor ") + name);
    return it->second;
  };
  auto [er, ec] = shape("entity_emb");
  p.entity_emb = Mat(er, ec);
  auto [rr, rc] = shape("relation_emb");
  p.relation_emb = Mat(rr, rc);
  auto [ibr, ibc] = shape("ind.bases");
  auto [icr, icc] = shape("ind.coeffs");
  p.inductive = Basis(icr, ibr, p.dim);
  p.trans_mu = TransBlock(icr, shape("mu.bases").first, p.dim);
  p.trans_sigma = TransBlock(icr, shape("sigma.bases").first, p.dim);
  (void)ibc; (void)icc;
  if (p.score_kind == ScoreKind::Linear) {
    auto [h1r, h1c] = shape("head.w1");
    auto [h2r, h2c] = shape("head.w2");
    (void)h1c;
    p.head = LinearHead(h2r, p.dim, h1r);
    (void)h2c;
  }

  auto tensors = p.tensors();
  if (tensors.size() != order.size())
    fail(ErrorKind::Data, "checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& [name, m] = tensors[i];
    if (name != order[i])
      fail(ErrorKind::Data, "checkpoint tensor order mismatch at " + name);
    auto [want_r, want_c] = shapes[name];
    if (m->rows != want_r || m->cols != want_c)
      fail(ErrorKind::Data, "checkpoint tensor shape mismatch at " + name);
    in.read(reinterpret_cast<char*>(m->data.data()),
            std::streamsize(m->data.size() * sizeof(double)));
    if (!in) fail(ErrorKind::Data, "truncated checkpoint: " + path);
  }
  if (j.value("has_optimizer", false)) {
    AdamState opt(p);
    opt.step = j.value("optimizer_step", uint64_t(0));
    for (Mat& m : opt.m) {
      in.read(reinterpret_cast<char*>(m.data.data()),
              std::streamsize(m.data.size() * sizeof(double)));
      if (!in) fail(ErrorKind::Data, "truncated checkpoint: " + path);
    }
    for (Mat& m : opt.v) {
      in.read(reinterpret_cast<char*>(m.data.data()),
              std::streamsize(m.data.size() * sizeof(double)));
      if (!in) fail(ErrorKind::Data, "truncated checkpoint: " + path);
    }
    lc.opt = std::move(opt);
  }
  // no trailing garbage
  char extra;
  in.read(&extra, 1);
  if (!in.eof())
    fail(ErrorKind::Data, "checkpoint has trailing bytes: " + path);
  return lc;
}

}  // namespace gen
