#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gen/graph.hpp"
#include "gen/rng.hpp"
#include "gen/tensor.hpp"

namespace gen {

enum class ScoreKind { TransE, DistMult, Linear };
enum class EmbedMode { Inductive, Transductive };
enum class DropoutMode { Off, Train, McTest };
// Entity prediction ranks corrupted entity slots (hinge training); relation
// prediction classifies the relation of a pair (BCE training).
enum class TaskKind { EntityPrediction, RelationPrediction };

ScoreKind score_kind_from_string(const std::string& s);
const char* score_kind_name(ScoreKind k);

// Per-relation weights factored through shared bases:
// W_r = sum_b coeffs[r,b] * bases[b], each basis d x 2d.
struct Basis {
  std::size_t n_basis = 0;
  std::size_t dim = 0;       // output rows d; input is 2d
  Mat bases;                 // n_basis x (d*2d), each row a flattened matrix
  Mat coeffs;                // n_relations x n_basis

  Basis() = default;
  Basis(std::size_t relations, std::size_t n_basis, std::size_t dim);

  std::size_t weight_size() const { return dim * 2 * dim; }
  // out (d x 2d flattened) = sum_b coeffs[r,b] * bases[b]
  void materialize(RelationId r, double* out) const;
};

struct TransBlock {
  Basis basis;
  Mat self_weight;  // d x d

  TransBlock() = default;
  TransBlock(std::size_t relations, std::size_t n_basis, std::size_t dim)
      : basis(relations, n_basis, dim), self_weight(dim, dim) {}
};

// Two dense layers with a ReLU between; maps the 2d pair concatenation to
// one logit per raw relation. Biases are 1-row matrices so every parameter
// shares the Mat checkpoint path.
struct LinearHead {
  Mat w1;   // hidden x 2d
  Mat b1;   // 1 x hidden
  Mat w2;   // n_labels x hidden
  Mat b2;   // 1 x n_labels

  LinearHead() = default;
  LinearHead(std::size_t n_labels, std::size_t dim, std::size_t hidden);
  std::size_t hidden() const { return b1.cols; }
  std::size_t labels() const { return b2.cols; }
};

struct ModelParams {
  std::size_t dim = 0;
  ScoreKind score_kind = ScoreKind::DistMult;
  double dropout_rate = 0.0;
  Mat entity_emb;     // |E| x d
  Mat relation_emb;   // 2*|R_raw| x d; inverse rows in the upper half
  Basis inductive;
  TransBlock trans_mu;
  TransBlock trans_sigma;
  LinearHead head;    // populated only for ScoreKind::Linear

  std::size_t raw_relations() const { return relation_emb.rows / 2; }

  // Tensors in canonical checkpoint order, paired with stable names.
  std::vector<std::pair<std::string, Mat*>> tensors();
  std::vector<std::pair<std::string, const Mat*>> tensors() const;
};

struct InitConfig {
  std::size_t entities = 0;
  std::size_t raw_relations = 0;
  std::size_t dim = 100;
  std::size_t n_basis = 100;
  std::size_t linear_hidden = 0;  // 0 -> 2*dim
  ScoreKind score_kind = ScoreKind::DistMult;
  double dropout_rate = 0.0;
};

// Glorot-uniform init for all tensors, then the rows of every entity listed
// in `unseen` are zeroed; they stay zero because no gradient path reaches
// them.
ModelParams init_params(const InitConfig& cfg, const std::vector<EntityId>& unseen,
                        Rng& rng);

// ---- score functions ----

// TransE: -||h + r - t||_2, DistMult: sum_k h_k r_k t_k. For the Linear kind
// use score_logits and index the relation. Vectors are length d.
double score_triplet(const ModelParams& p, const double* h, RelationId r,
                     const double* t);

// Linear head logits over raw relations for the pair (h, t).
void score_logits(const ModelParams& p, const double* h, const double* t,
                  Vec& out);

// ---- embedding layers ----

// One support edge resolved for aggregation: incoming edges carry the
// inverse relation id so one formula covers both directions. entity_vec is
// the neighbor's embedding source (entity table row, a task mate's inductive
// embedding, or nullptr for the zero vector used on unreachable unseen
// neighbors).
struct SupportEdge {
  RelationId agg_rel;        // raw id for outgoing, inverse id for incoming
  EntityId neighbor;
  const double* entity_vec;  // length d, or nullptr for zero
};

// Sorts by (agg_rel, neighbor). Aggregation order is canonical so the layer
// output is exactly permutation-invariant in the support.
void canonicalize_support(std::vector<SupportEdge>& support);

// Support triplet resolved for aggregation, with gradient-routing metadata.
// Outgoing triplets keep their relation id, incoming ones fold in through
// the inverse id (the upper relation block); self-loops count as outgoing.
struct AggEdge {
  RelationId agg_rel;
  EntityId neighbor;
  int task_idx;  // >= 0 when the neighbor is a task entity
  bool seen;     // neighbor embedding comes from the entity table
};

// Builds the canonical (sorted) edge list for one entity's support.
std::vector<AggEdge> build_agg_edges(
    EntityId self, const std::vector<Triplet>& support,
    const std::vector<uint8_t>& unseen_mask,
    const std::unordered_map<EntityId, int>& task_index,
    std::size_t raw_relations);

// Materialized per-relation weights, built lazily. One cache per basis
// block; forward, backward and evaluation share it so every path sees
// identical floating-point weight values.
class WeightCache {
 public:
  explicit WeightCache(const Basis& basis) : basis_(&basis) {}
  const double* get(RelationId r);
  const std::unordered_map<RelationId, std::vector<double>>& entries() const {
    return cache_;
  }
  void clear() { cache_.clear(); }

 private:
  const Basis* basis_;
  std::unordered_map<RelationId, std::vector<double>> cache_;
};

// out = (1/K) sum_e W[agg_rel(e)] * [rel_emb(agg_rel(e)) ; entity_vec(e)]
// over the (already canonicalized) support. Empty support is an error.
void aggregate_support(const ModelParams& p, WeightCache& weights,
                       const std::vector<SupportEdge>& support, double* out);

// Eq.-3-style inductive embedding: aggregate_support over the inductive
// basis. Callers resolve unseen neighbors to nullptr (zero vector).
void inductive_embed(const ModelParams& p,
                     const std::vector<SupportEdge>& support, double* out);

// Same aggregation with the block's own weights plus the self-connection
// W0 * phi_self. Callers resolve unseen task mates' entity_vec to their
// inductive embedding. Output is the raw pre-activation; the sigma head
// applies softplus_floor on top.
void transductive_embed(const ModelParams& p, const TransBlock& block,
                        const std::vector<SupportEdge>& support,
                        const double* phi_self, double* out);

// softplus(x) + eps, the positivity map for the sigma head
double softplus_floor(double x);
constexpr double kSigmaFloor = 1e-4;

// phi' = mu + sigma ⊙ z with z ~ N(0, I)
void sample_embedding(const double* mu, const double* sigma, std::size_t d,
                      Rng& rng, double* out);

// Monte Carlo score: mean over `mc_samples` draws of the task-entity
// embedding phi' ~ N(mu, diag(sigma^2)) scored against a fixed partner.
double stochastic_score(const ModelParams& p, const Vec& mu, const Vec& sigma,
                        bool task_at_head, RelationId rel,
                        const double* partner, std::size_t mc_samples,
                        Rng& rng);

// Elementwise inverted dropout. Train and McTest behave identically (that is
// the MC-dropout point); Off is the identity.
void apply_dropout(double* v, std::size_t d, double rate, DropoutMode mode,
                   Rng& rng);
// Mask-explicit form used by the training tape: keep[i]=0 drops, survivors
// scale by 1/(1-rate).
void apply_dropout_mask(double* v, std::size_t d, double rate,
                        const uint8_t* keep);
void sample_keep_mask(std::size_t d, double rate, Rng& rng,
                      std::vector<uint8_t>& keep);

}  // namespace gen
