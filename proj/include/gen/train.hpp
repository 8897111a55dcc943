#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gen/episode.hpp"
#include "gen/model.hpp"
#include "gen/split.hpp"
#include "gen/tensor.hpp"

namespace gen {

struct HyperParams {
  std::size_t dim = 100;
  std::size_t n_basis = 100;
  std::size_t linear_hidden = 0;  // 0 -> 2*dim
  double lr = 1e-3;
  double margin = 1.0;
  std::size_t num_neg = 32;
  std::size_t l_train = 1;
  std::size_t l_test = 10;
  std::size_t shots = 3;                   // K at test time
  std::size_t entities_per_episode = 500;  // N
  uint64_t max_iteration = 10000;
  bool curriculum = true;
  double dropout = 0.3;
  ScoreKind score_kind = ScoreKind::DistMult;
  EmbedMode mode = EmbedMode::Transductive;
  bool stochastic = true;  // sample phi' ~ N(mu, diag(sigma^2)) in transductive mode
  TaskKind task_kind = TaskKind::EntityPrediction;
  uint64_t seed = 42;
  std::size_t eval_every = 250;   // validation cadence in episodes
  std::size_t patience = 10;      // early stop after this many stale evals
  std::size_t pretrain_steps = 2000;
  std::size_t pretrain_batch = 256;

  void validate() const;
};

// ---- losses ----

// sum over (pos, neg) pairs of max{margin - pos + neg, 0}
double hinge_loss(const std::vector<double>& pos_scores,
                  const std::vector<std::vector<double>>& neg_scores,
                  double margin);

// mean over elements of the stabilized binary cross-entropy with logits
double bce_loss(const Vec& logits, const std::vector<uint8_t>& labels);

// ---- gradients ----

struct BasisGrad {
  Mat bases;
  Mat coeffs;
};

struct GradientSet {
  Mat entity_emb;
  Mat relation_emb;
  BasisGrad inductive, mu, sigma;
  Mat mu_self, sigma_self;
  Mat head_w1, head_b1, head_w2, head_b2;
  // Rows that received gradient this episode; Adam only updates these for
  // the row-sparse tensors (entity/relation embeddings, basis coefficients).
  std::vector<uint8_t> entity_touched;
  std::vector<uint8_t> relation_touched;

  explicit GradientSet(const ModelParams& p);
  void zero();
  // max |g|, and the name of the first non-finite tensor if any
  bool all_finite(std::string* offender) const;
};

// ---- episodes ----

struct QueryItem {
  Triplet pos;
  bool task_at_head;                 // task entity sits in the head slot
  std::vector<EntityId> negatives;   // corrupted partner entities (seen)
};

// Everything sampled for one episode; model-independent.
struct EpisodeData {
  Task task;
  std::vector<std::vector<QueryItem>> queries;  // parallel to task.entities
};

// Noise drawn up front so the forward pass is a pure function of
// (params, data, noise); the finite-difference oracle re-evaluates it.
struct EpisodeNoise {
  std::vector<Vec> z;                          // per entity, length d
  std::vector<std::vector<uint8_t>> keep_phi;  // dropout keep masks
  std::vector<std::vector<uint8_t>> keep_mu;
  std::vector<std::vector<uint8_t>> keep_sigma;
  bool dropout_active = false;
  bool has_z = false;
};

struct EpisodeConfig {
  EmbedMode mode = EmbedMode::Transductive;
  bool stochastic = true;
  TaskKind task_kind = TaskKind::EntityPrediction;
  double margin = 1.0;
};

struct EpisodeContext {
  const std::vector<uint8_t>* unseen_mask = nullptr;
  // known-true triplets visible during training; provides BCE labels
  const TripletFilter* label_filter = nullptr;
};

EpisodeData sample_episode(const std::vector<UnseenEntity>& meta_set,
                           std::size_t n_entities, std::size_t shots,
                           std::size_t num_neg,
                           const std::vector<EntityId>& seen_pool,
                           const TripletFilter& known_positives, Rng& rng);

EpisodeNoise sample_noise(std::size_t n_entities, std::size_t dim,
                          bool stochastic, double dropout_rate,
                          bool dropout_on, Rng& rng);

// Normalized episode loss: mean over entities, queries, and (for hinge)
// negatives. Pure given its arguments.
double episode_loss(const ModelParams& p, const EpisodeContext& ctx,
                    const EpisodeData& data, const EpisodeNoise& noise,
                    const EpisodeConfig& cfg);

// Same forward plus exact adjoints accumulated into `grads` (zeroed first).
double episode_loss_backward(const ModelParams& p, const EpisodeContext& ctx,
                             const EpisodeData& data, const EpisodeNoise& noise,
                             const EpisodeConfig& cfg, GradientSet& grads);

// ---- optimizer ----

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  uint64_t step = 0;
  std::vector<Mat> m, v;  // aligned with ModelParams::tensors() order

  explicit AdamState(const ModelParams& p, AdamConfig cfg = {});
  AdamState() = default;
};

// Standard Adam with bias correction. Row-sparse tensors only move where the
// episode touched them; everything else updates densely (their moments stay
// zero while their gradients stay zero, so untouched tensors never move).
void adam_update(ModelParams& p, const GradientSet& g, AdamState& st,
                 double lr);

// ---- training loops ----

struct TrainLogSink {
  std::function<void(const std::string&)> line;  // one NDJSON record
};

struct PretrainResult {
  ModelParams params;
  std::vector<double> window_losses;  // mean loss per logging window
};

// Score-function training on the in-graph only; GEN layer weights and
// unseen entity rows are untouched.
PretrainResult pretrain_in_graph(const Manifest& m, const HyperParams& hp,
                                 ModelParams init, const TrainLogSink* log);

struct TrainResult {
  ModelParams params;       // best-validation parameters
  double best_metric = 0;   // MRR (entity task) or ROC (relation task)
  uint64_t best_episode = 0;
  uint64_t episodes_run = 0;
};

TrainResult meta_train(const Manifest& m, const HyperParams& hp,
                       ModelParams init, const TrainLogSink* log);

// ---- checkpoints ----

struct CheckpointMeta {
  uint64_t vocab_hash = 0;
  std::string hyper_json;  // config echo, stored verbatim
};

void save_checkpoint(const std::string& path, const ModelParams& p,
                     const CheckpointMeta& meta,
                     const AdamState* opt = nullptr);

struct LoadedCheckpoint {
  ModelParams params;
  CheckpointMeta meta;
  std::optional<AdamState> opt;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace gen
