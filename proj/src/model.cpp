#include "gen/model.hpp"

#include <algorithm>
#include <cmath>

#include "gen/error.hpp"
#include "gen/kernels.hpp"

namespace gen {

ScoreKind score_kind_from_string(const std::string& s) {
  if (s == "transe") return ScoreKind::TransE;
  if (s == "distmult") return ScoreKind::DistMult;
  if (s == "linear") return ScoreKind::Linear;
  fail(ErrorKind::Config, "unknown score function: " + s +
                              " (expected transe|distmult|linear)");
}

const char* score_kind_name(ScoreKind k) {
  switch (k) {
    case ScoreKind::TransE: return "transe";
    case ScoreKind::DistMult: return "distmult";
    default: return "linear";
  }
}

Basis::Basis(std::size_t relations, std::size_t n_basis_, std::size_t dim_)
    : n_basis(n_basis_),
      dim(dim_),
      bases(n_basis_, dim_ * 2 * dim_),
      coeffs(relations, n_basis_) {}

void Basis::materialize(RelationId r, double* out) const {
  const std::size_t w = weight_size();
  std::fill(out, out + w, 0.0);
  const double* c = coeffs.row(r);
  for (std::size_t b = 0; b < n_basis; ++b)
    kernels::axpy(c[b], bases.row(b), out, w);
}

LinearHead::LinearHead(std::size_t n_labels, std::size_t dim,
                       std::size_t hidden)
    : w1(hidden, 2 * dim), b1(1, hidden), w2(n_labels, hidden),
      b2(1, n_labels) {}

std::vector<std::pair<std::string, Mat*>> ModelParams::tensors() {
  std::vector<std::pair<std::string, Mat*>> out = {
      {"entity_emb", &entity_emb},
      {"relation_emb", &relation_emb},
      {"ind.bases", &inductive.bases},
      {"ind.coeffs", &inductive.coeffs},
      {"mu.bases", &trans_mu.basis.bases},
      {"mu.coeffs", &trans_mu.basis.coeffs},
      {"mu.self", &trans_mu.self_weight},
      {"sigma.bases", &trans_sigma.basis.bases},
      {"sigma.coeffs", &trans_sigma.basis.coeffs},
      {"sigma.self", &trans_sigma.self_weight},
  };
  if (score_kind == ScoreKind::Linear) {
    out.push_back({"head.w1", &head.w1});
    out.push_back({"head.b1", &head.b1});
    out.push_back({"head.w2", &head.w2});
    out.push_back({"head.b2", &head.b2});
  }
  return out;
}

std::vector<std::pair<std::string, const Mat*>> ModelParams::tensors() const {
  auto mut = const_cast<ModelParams*>(this)->tensors();
  std::vector<std::pair<std::string, const Mat*>> out;
  out.reserve(mut.size());
  for (auto& [name, m] : mut) out.emplace_back(name, m);
  return out;
}

namespace {

void glorot_fill(Mat& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  for (double& x : m.data) x = (2.0 * rng.uniform01() - 1.0) * limit;
}

}  // namespace

ModelParams init_params(const InitConfig& cfg,
                        const std::vector<EntityId>& unseen, Rng& rng) {
  if (cfg.dim == 0 || cfg.n_basis == 0)
    fail(ErrorKind::Config, "model: dim and n_basis must be positive");
  ModelParams p;
  p.dim = cfg.dim;
  p.score_kind = cfg.score_kind;
  p.dropout_rate = cfg.dropout_rate;
  p.entity_emb = Mat(cfg.entities, cfg.dim);
  p.relation_emb = Mat(2 * cfg.raw_relations, cfg.dim);
  p.inductive = Basis(2 * cfg.raw_relations, cfg.n_basis, cfg.dim);
  p.trans_mu = TransBlock(2 * cfg.raw_relations, cfg.n_basis, cfg.dim);
  p.trans_sigma = TransBlock(2 * cfg.raw_relations, cfg.n_basis, cfg.dim);

  glorot_fill(p.entity_emb, cfg.dim, cfg.dim, rng);
  glorot_fill(p.relation_emb, cfg.dim, cfg.dim, rng);
  auto init_basis = [&rng, &cfg](Basis& b) {
    glorot_fill(b.bases, 2 * cfg.dim, cfg.dim, rng);
    glorot_fill(b.coeffs, cfg.n_basis, cfg.n_basis, rng);
  };
  init_basis(p.inductive);
  init_basis(p.trans_mu.basis);
  glorot_fill(p.trans_mu.self_weight, cfg.dim, cfg.dim, rng);
  init_basis(p.trans_sigma.basis);
  glorot_fill(p.trans_sigma.self_weight, cfg.dim, cfg.dim, rng);

  if (cfg.score_kind == ScoreKind::Linear) {
    std::size_t hidden = cfg.linear_hidden ? cfg.linear_hidden : 2 * cfg.dim;
    p.head = LinearHead(cfg.raw_relations, cfg.dim, hidden);
    glorot_fill(p.head.w1, 2 * cfg.dim, hidden, rng);
    glorot_fill(p.head.w2, hidden, cfg.raw_relations, rng);
  }

  for (EntityId e : unseen)
    std::fill(p.entity_emb.row(e), p.entity_emb.row(e) + p.dim, 0.0);
  return p;
}

double score_triplet(const ModelParams& p, const double* h, RelationId r,
                     const double* t) {
  const double* rv = p.relation_emb.row(r);
  const std::size_t d = p.dim;
  switch (p.score_kind) {
    case ScoreKind::TransE:
      return -std::sqrt(kernels::trans_sq(h, rv, t, d));
    case ScoreKind::DistMult:
      return kernels::dot3(h, rv, t, d);
    case ScoreKind::Linear: {
      thread_local Vec logits;
      score_logits(p, h, t, logits);
      return logits[r];
    }
  }
  return 0.0;
}

void score_logits(const ModelParams& p, const double* h, const double* t,
                  Vec& out) {
  const std::size_t d = p.dim;
  const LinearHead& lh = p.head;
  thread_local Vec cat, hid;
  cat.resize(2 * d);
  std::copy(h, h + d, cat.begin());
  std::copy(t, t + d, cat.begin() + d);
  hid.assign(lh.hidden(), 0.0);
  kernels::gemv_acc(lh.w1.data.data(), lh.hidden(), 2 * d, cat.data(),
                    hid.data());
  for (std::size_t i = 0; i < lh.hidden(); ++i)
    hid[i] = std::max(0.0, hid[i] + lh.b1.data[i]);
  out.assign(lh.labels(), 0.0);
  kernels::gemv_acc(lh.w2.data.data(), lh.labels(), lh.hidden(), hid.data(),
                    out.data());
  for (std::size_t i = 0; i < lh.labels(); ++i) out[i] += lh.b2.data[i];
}

void canonicalize_support(std::vector<SupportEdge>& support) {
  std::sort(support.begin(), support.end(),
            [](const SupportEdge& a, const SupportEdge& b) {
              if (a.agg_rel != b.agg_rel) return a.agg_rel < b.agg_rel;
              return a.neighbor < b.neighbor;
            });
}

std::vector<AggEdge> build_agg_edges(
    EntityId self, const std::vector<Triplet>& support,
    const std::vector<uint8_t>& unseen_mask,
    const std::unordered_map<EntityId, int>& task_index,
    std::size_t raw_relations) {
  std::vector<AggEdge> edges;
  edges.reserve(support.size());
  for (const Triplet& t : support) {
    AggEdge e;
    if (t.head == self) {
      e.agg_rel = t.rel;
      e.neighbor = t.tail;
    } else {
      e.agg_rel = RelationId(t.rel + raw_relations);
      e.neighbor = t.head;
    }
    auto it = task_index.find(e.neighbor);
    e.task_idx = it == task_index.end() ? -1 : it->second;
    e.seen = !unseen_mask[e.neighbor];
    edges.push_back(e);
  }
  std::sort(edges.begin(), edges.end(), [](const AggEdge& a, const AggEdge& b) {
    if (a.agg_rel != b.agg_rel) return a.agg_rel < b.agg_rel;
    return a.neighbor < b.neighbor;
  });
  return edges;
}

const double* WeightCache::get(RelationId r) {
  auto it = cache_.find(r);
  if (it != cache_.end()) return it->second.data();
  std::vector<double> w(basis_->weight_size());
  basis_->materialize(r, w.data());
  return cache_.emplace(r, std::move(w)).first->second.data();
}

void aggregate_support(const ModelParams& p, WeightCache& weights,
                       const std::vector<SupportEdge>& support, double* out) {
  if (support.empty())
    fail(ErrorKind::Data, "embedding layer: empty support set");
  const std::size_t d = p.dim;
  std::fill(out, out + d, 0.0);
  thread_local Vec cat;
  cat.resize(2 * d);
  for (const SupportEdge& e : support) {
    const double* w = weights.get(e.agg_rel);
    const double* rv = p.relation_emb.row(e.agg_rel);
    std::copy(rv, rv + d, cat.begin());
    if (e.entity_vec)
      std::copy(e.entity_vec, e.entity_vec + d, cat.begin() + d);
    else
      std::fill(cat.begin() + d, cat.end(), 0.0);
    kernels::gemv_acc(w, d, 2 * d, cat.data(), out);
  }
  const double inv_k = 1.0 / double(support.size());
  for (std::size_t k = 0; k < d; ++k) out[k] *= inv_k;
}

void inductive_embed(const ModelParams& p,
                     const std::vector<SupportEdge>& support, double* out) {
  WeightCache cache(p.inductive);
  aggregate_support(p, cache, support, out);
}

void transductive_embed(const ModelParams& p, const TransBlock& block,
                        const std::vector<SupportEdge>& support,
                        const double* phi_self, double* out) {
  WeightCache cache(block.basis);
  aggregate_support(p, cache, support, out);
  kernels::gemv_acc(block.self_weight.data.data(), p.dim, p.dim, phi_self,
                    out);
}

double softplus_floor(double x) {
  // softplus in overflow-safe form
  double sp = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return sp + kSigmaFloor;
}

void sample_embedding(const double* mu, const double* sigma, std::size_t d,
                      Rng& rng, double* out) {
  for (std::size_t k = 0; k < d; ++k) out[k] = mu[k] + sigma[k] * rng.normal();
}

double stochastic_score(const ModelParams& p, const Vec& mu, const Vec& sigma,
                        bool task_at_head, RelationId rel,
                        const double* partner, std::size_t mc_samples,
                        Rng& rng) {
  if (mc_samples < 1)
    fail(ErrorKind::Config, "stochastic_score: need at least one MC sample");
  const std::size_t d = p.dim;
  Vec phi(d);
  double acc = 0.0;
  for (std::size_t l = 0; l < mc_samples; ++l) {
    sample_embedding(mu.data(), sigma.data(), d, rng, phi.data());
    acc += task_at_head ? score_triplet(p, phi.data(), rel, partner)
                        : score_triplet(p, partner, rel, phi.data());
  }
  return acc / double(mc_samples);
}

void apply_dropout(double* v, std::size_t d, double rate, DropoutMode mode,
                   Rng& rng) {
  if (mode == DropoutMode::Off || rate == 0.0) return;
  const double scale = 1.0 / (1.0 - rate);
  for (std::size_t k = 0; k < d; ++k)
    v[k] = rng.uniform01() < rate ? 0.0 : v[k] * scale;
}

void apply_dropout_mask(double* v, std::size_t d, double rate,
                        const uint8_t* keep) {
  if (rate == 0.0) return;
  const double scale = 1.0 / (1.0 - rate);
  for (std::size_t k = 0; k < d; ++k) v[k] = keep[k] ? v[k] * scale : 0.0;
}

void sample_keep_mask(std::size_t d, double rate, Rng& rng,
                      std::vector<uint8_t>& keep) {
  keep.resize(d);
  for (std::size_t k = 0; k < d; ++k)
    keep[k] = rng.uniform01() < rate ? 0 : 1;
}

}  // namespace gen
