// Command-line front end: split / pretrain / train / eval / predict.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "gen/config.hpp"
#include "gen/error.hpp"
#include "gen/eval.hpp"
#include "gen/kernels.hpp"
#include "gen/split.hpp"
#include "gen/synth.hpp"
#include "gen/train.hpp"

#ifndef GEN_BUILD_ID
#define GEN_BUILD_ID "unversioned"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gen;

namespace {

int log_level() {
  // GEN_LOG: off|error|warn|info|debug (default warn)
  const char* env = std::getenv("GEN_LOG");
  if (!env) return 2;
  std::string v = env;
  if (v == "off") return 0;
  if (v == "error") return 1;
  if (v == "warn") return 2;
  if (v == "info") return 3;
  if (v == "debug") return 4;
  return 2;
}

void log_line(int level, const std::string& msg) {
  if (log_level() >= level) std::cerr << "[gen] " << msg << "\n";
}

std::string require_path(const Config& cfg, const std::string& key) {
  const std::string& v = cfg.get(key);
  if (v.empty())
    fail(ErrorKind::Config, "missing required config key: " + key);
  return v;
}

// the checkpoint carries the training config echo; differing eval-side model
// settings usually mean a mistyped invocation
void warn_on_config_drift(const LoadedCheckpoint& lc, const Config& cfg) {
  if (lc.meta.hyper_json.empty()) return;
  json trained;
  try {
    trained = json::parse(lc.meta.hyper_json);
  } catch (const json::exception&) {
    return;
  }
  for (const char* key : {"model.mode", "model.stochastic", "model.score"}) {
    if (!trained.contains(key) || !trained[key].is_string()) continue;
    std::string was = trained[key].get<std::string>();
    if (was != cfg.get(key))
      log_line(2, std::string("checkpoint was trained with ") + key + " = " +
                      was + ", evaluating with " + cfg.get(key));
  }
}

void ensure_out_dir(const Config& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.get("out"), ec);
  if (ec) fail(ErrorKind::Io, "cannot create output dir: " + cfg.get("out"));
}

ModelParams fresh_params(const Manifest& m, const HyperParams& hp) {
  InitConfig ic;
  ic.entities = m.vocab.entity_count();
  ic.raw_relations = m.vocab.relation_count();
  ic.dim = hp.dim;
  ic.n_basis = hp.n_basis;
  ic.linear_hidden = hp.linear_hidden;
  ic.score_kind = hp.score_kind;
  ic.dropout_rate = hp.dropout;
  Rng rng(derive_seed(hp.seed, "init"));
  return init_params(ic, m.split.all_unseen(), rng);
}

json summary_of(const RankSummary& s) {
  return {{"mrr", s.mrr},
          {"hits1", s.hits.at(1)},
          {"hits3", s.hits.at(3)},
          {"hits10", s.hits.at(10)},
          {"count", s.count}};
}

json report_json(const EvalOutput& out, const Config& cfg,
                 uint64_t vocab_hash) {
  json j;
  j["build_id"] = GEN_BUILD_ID;
  j["config"] = json::parse(cfg.echo_json());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)vocab_hash);
  j["vocab_hash"] = buf;
  j["entities_evaluated"] = out.entities_evaluated;
  j["entities_skipped"] = out.entities_skipped;
  if (out.kind == TaskKind::EntityPrediction) {
    j["task"] = "entity";
    json metrics;
    for (TieRule rule :
         {TieRule::Optimistic, TieRule::Pessimistic, TieRule::Mean}) {
      MetricReport rep = out.report(rule);
      json r;
      r["total"] = summary_of(rep.total);
      if (rep.has_su) r["seen_unseen"] = summary_of(rep.seen_unseen);
      if (rep.has_uu) r["unseen_unseen"] = summary_of(rep.unseen_unseen);
      metrics[tie_rule_name(rule)] = r;
    }
    j["metrics"] = metrics;
    j["query_count"] = out.results.size();
  } else {
    j["task"] = "relation";
    json d;
    d["accuracy"] = out.ddi.accuracy;
    if (out.ddi.has_auc) {
      d["roc_auc"] = out.ddi.roc_auc;
      d["pr_auc"] = out.ddi.pr_auc;
    }
    d["query_count"] = out.ddi.query_count;
    j["metrics"] = d;
  }
  return j;
}

// ---- subcommands ----

int cmd_split(const Config& cfg) {
  std::string triplets = require_path(cfg, "data.triplets");
  if (!fs::exists(triplets))
    fail(ErrorKind::Config, "triplet file does not exist: " + triplets);
  auto rows = parse_triplet_file(triplets);
  auto [vocab, graph] = build_graph(rows, false);
  log_line(3, "graph: " + std::to_string(vocab.entity_count()) + " entities, " +
                  std::to_string(vocab.relation_count()) + " relations, " +
                  std::to_string(graph.size()) + " triplets");
  OOGSplit split = make_split(graph, vocab, cfg.split_config());
  ensure_out_dir(cfg);
  write_manifest(split, vocab, cfg.get("out"));

  std::cout << "manifest: " << cfg.get("out") << "\n";
  std::cout << "entities: " << vocab.entity_count()
            << "  relations: " << vocab.relation_count()
            << "  triplets: " << graph.size() << "\n";
  std::cout << "in_graph triplets: " << split.in_graph.size() << "\n";
  const char* names[3] = {"meta_train", "meta_valid", "meta_test"};
  for (int s = 0; s < 3; ++s) {
    std::size_t nt = 0;
    for (const auto& u : split.meta_sets[s]) nt += u.associated.size();
    std::cout << names[s] << ": " << split.meta_sets[s].size()
              << " unseen entities, " << nt << " associated triplets\n";
  }
  if (split.stats.dropped_entities)
    std::cout << "dropped entities (<2 triplets): "
              << split.stats.dropped_entities << "\n";
  if (split.stats.cross_set_reassigned)
    std::cout << "cross-set triplets reassigned: "
              << split.stats.cross_set_reassigned << "\n";
  return 0;
}

int cmd_pretrain(const Config& cfg) {
  Manifest m = read_manifest(require_path(cfg, "data.manifest"));
  HyperParams hp = cfg.hyper_params();
  hp.validate();
  ensure_out_dir(cfg);

  std::ofstream log(cfg.get("out") + "/pretrain_log.ndjson",
                    std::ios::binary | std::ios::trunc);
  TrainLogSink sink{[&](const std::string& l) { log << l << "\n"; }};
  auto res = pretrain_in_graph(m, hp, fresh_params(m, hp), &sink);

  CheckpointMeta meta;
  meta.vocab_hash = m.vocab.content_hash();
  meta.hyper_json = cfg.echo_json();
  std::string path = cfg.get("out") + "/pretrain.ckpt";
  save_checkpoint(path, res.params, meta);
  std::cout << "checkpoint: " << path << "\n";
  if (!res.window_losses.empty())
    std::cout << "pretrain loss: first " << res.window_losses.front()
              << "  last " << res.window_losses.back() << "\n";
  return 0;
}

int cmd_train(const Config& cfg) {
  Manifest m = read_manifest(require_path(cfg, "data.manifest"));
  HyperParams hp = cfg.hyper_params();
  hp.validate();
  ensure_out_dir(cfg);

  ModelParams init;
  const std::string& init_path = cfg.get("data.init_checkpoint");
  if (!init_path.empty()) {
    LoadedCheckpoint lc = load_checkpoint(init_path);
    if (lc.meta.vocab_hash != m.vocab.content_hash())
      fail(ErrorKind::Config,
           "init checkpoint vocabulary hash does not match the manifest");
    if (lc.params.dim != hp.dim || lc.params.score_kind != hp.score_kind)
      fail(ErrorKind::Config,
           "init checkpoint model shape does not match the configuration");
    init = std::move(lc.params);
    init.dropout_rate = hp.dropout;
    log_line(3, "initialized from " + init_path);
  } else {
    init = fresh_params(m, hp);
  }

  std::ofstream log(cfg.get("out") + "/train_log.ndjson",
                    std::ios::binary | std::ios::trunc);
  TrainLogSink sink{[&](const std::string& l) { log << l << "\n"; }};
  TrainResult res = meta_train(m, hp, std::move(init), &sink);

  CheckpointMeta meta;
  meta.vocab_hash = m.vocab.content_hash();
  meta.hyper_json = cfg.echo_json();
  std::string path = cfg.get("out") + "/model.ckpt";
  save_checkpoint(path, res.params, meta);
  std::cout << "checkpoint: " << path << "\n";
  std::cout << "episodes: " << res.episodes_run
            << "  best_val_metric: " << res.best_metric << "  at episode "
            << res.best_episode << "\n";
  return 0;
}

int cmd_eval(const Config& cfg) {
  Manifest m = read_manifest(require_path(cfg, "data.manifest"));
  LoadedCheckpoint lc = load_checkpoint(require_path(cfg, "data.checkpoint"));
  if (lc.meta.vocab_hash != m.vocab.content_hash())
    fail(ErrorKind::Config,
         "checkpoint vocabulary hash does not match the manifest");
  warn_on_config_drift(lc, cfg);
  HyperParams hp = cfg.hyper_params();
  EvalOptions eo = cfg.eval_options();
  ensure_out_dir(cfg);

  EvalOutput out = evaluate_split(lc.params, m, eo, hp.task_kind);
  json rep = report_json(out, cfg, m.vocab.content_hash());
  std::string path = cfg.get("out") + "/report.json";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << rep.dump(2) << "\n";
  if (!f) fail(ErrorKind::Io, "cannot write " + path);

  std::cout << "report: " << path << "\n";
  if (out.kind == TaskKind::EntityPrediction) {
    TieRule headline = tie_rule_from_string(cfg.get("eval.tie"));
    MetricReport r = out.report(headline);
    std::cout << "tie_rule: " << tie_rule_name(headline) << "\n";
    std::cout << "total      MRR " << r.total.mrr << "  H@1 "
              << r.total.hits.at(1) << "  H@3 " << r.total.hits.at(3)
              << "  H@10 " << r.total.hits.at(10) << "  (" << r.total.count
              << " queries)\n";
    if (r.has_su)
      std::cout << "seen-unseen   MRR " << r.seen_unseen.mrr << "  H@10 "
                << r.seen_unseen.hits.at(10) << "  (" << r.seen_unseen.count
                << ")\n";
    if (r.has_uu)
      std::cout << "unseen-unseen MRR " << r.unseen_unseen.mrr << "  H@10 "
                << r.unseen_unseen.hits.at(10) << "  ("
                << r.unseen_unseen.count << ")\n";
    const std::string& csv = cfg.get("eval.ranks_csv");
    if (!csv.empty()) {
      write_ranks_csv(csv, m.vocab, out.results);
      std::cout << "ranks_csv: " << csv << "\n";
    }
  } else {
    std::cout << "accuracy " << out.ddi.accuracy;
    if (out.ddi.has_auc)
      std::cout << "  ROC " << out.ddi.roc_auc << "  PR " << out.ddi.pr_auc;
    std::cout << "  (" << out.ddi.query_count << " queries)\n";
  }
  return 0;
}

// New entities come from the support file; they get ids past the vocabulary.
struct PredictWorld {
  std::vector<std::string> new_names;
  std::unordered_map<std::string, EntityId> new_ids;
  std::vector<std::vector<Triplet>> support;  // per new entity
  std::vector<uint8_t> mask;                  // extended unseen mask
};

int cmd_predict(const Config& cfg) {
  Manifest m = read_manifest(require_path(cfg, "data.manifest"));
  LoadedCheckpoint lc = load_checkpoint(require_path(cfg, "data.checkpoint"));
  if (lc.meta.vocab_hash != m.vocab.content_hash())
    fail(ErrorKind::Config,
         "checkpoint vocabulary hash does not match the manifest");
  warn_on_config_drift(lc, cfg);
  const ModelParams& p = lc.params;
  HyperParams hp = cfg.hyper_params();
  const std::size_t d = p.dim;
  const std::size_t base = m.vocab.entity_count();
  ensure_out_dir(cfg);

  PredictWorld w;
  w.mask = m.split.unseen_mask;
  auto entity_of = [&](const std::string& name, bool allow_new) -> EntityId {
    if (m.vocab.has_entity(name)) return m.vocab.entity_id(name);
    auto it = w.new_ids.find(name);
    if (it != w.new_ids.end()) return it->second;
    if (!allow_new)
      fail(ErrorKind::Config, "unknown entity in queries: " + name);
    EntityId id = EntityId(base + w.new_names.size());
    w.new_ids.emplace(name, id);
    w.new_names.push_back(name);
    w.support.emplace_back();
    w.mask.push_back(1);
    return id;
  };

  for (const NameTriple& row :
       parse_triplet_file(require_path(cfg, "data.support"))) {
    if (!m.vocab.has_relation(row.rel))
      fail(ErrorKind::Config, "unknown relation in support: " + row.rel);
    Triplet t{entity_of(row.head, true), m.vocab.relation_id(row.rel),
              entity_of(row.tail, true)};
    if (t.head >= base) w.support[t.head - base].push_back(t);
    if (t.tail >= base && t.tail != t.head)
      w.support[t.tail - base].push_back(t);
  }
  if (w.new_names.empty())
    fail(ErrorKind::Config, "support file introduces no new entities");
  for (std::size_t i = 0; i < w.new_names.size(); ++i)
    if (w.support[i].empty())
      fail(ErrorKind::Config,
           "new entity has no support triplets: " + w.new_names[i]);

  // embed the new entities (deterministic; stochastic mode averages scores
  // over l_test samples below)
  std::unordered_map<EntityId, int> index;
  for (std::size_t i = 0; i < w.new_names.size(); ++i)
    index[EntityId(base + i)] = int(i);
  const bool trans = hp.mode == EmbedMode::Transductive;
  const bool stochastic = trans && hp.stochastic;
  const std::size_t passes = stochastic ? hp.l_test : 1;

  std::vector<std::vector<AggEdge>> edges(w.new_names.size());
  for (std::size_t i = 0; i < w.new_names.size(); ++i)
    edges[i] = build_agg_edges(EntityId(base + i), w.support[i], w.mask, index,
                               p.raw_relations());

  std::vector<Mat> emb(passes, Mat(w.new_names.size(), d));
  {
    Mat phi(w.new_names.size(), d);
    WeightCache w_ind(p.inductive), w_mu(p.trans_mu.basis),
        w_sigma(p.trans_sigma.basis);
    for (std::size_t pass = 0; pass < passes; ++pass) {
      for (std::size_t i = 0; i < w.new_names.size(); ++i) {
        std::vector<SupportEdge> se;
        for (const AggEdge& e : edges[i])
          se.push_back({e.agg_rel, e.neighbor,
                        e.seen ? p.entity_emb.row(e.neighbor) : nullptr});
        aggregate_support(p, w_ind, se, phi.row(i));
      }
      Mat& out = emb[pass];
      if (!trans) {
        out.data = phi.data;
        continue;
      }
      for (std::size_t i = 0; i < w.new_names.size(); ++i) {
        std::vector<SupportEdge> se;
        for (const AggEdge& e : edges[i]) {
          const double* ev = nullptr;
          if (e.seen)
            ev = p.entity_emb.row(e.neighbor);
          else if (e.task_idx >= 0)
            ev = phi.row(e.task_idx);
          se.push_back({e.agg_rel, e.neighbor, ev});
        }
        aggregate_support(p, w_mu, se, out.row(i));
        kernels::gemv_acc(p.trans_mu.self_weight.data.data(), d, d, phi.row(i),
                          out.row(i));
        if (!stochastic) continue;
        Vec sraw(d, 0.0);
        aggregate_support(p, w_sigma, se, sraw.data());
        kernels::gemv_acc(p.trans_sigma.self_weight.data.data(), d, d,
                          phi.row(i), sraw.data());
        Rng rng(derive_seed(hp.seed, "predict-z", pass, base + i));
        for (std::size_t k = 0; k < d; ++k)
          out.row(i)[k] += softplus_floor(sraw[k]) * rng.normal();
      }
    }
  }

  Vec zeros(d, 0.0);
  // the query-side entity always uses its own embedding; candidates reach
  // other new entities only in the transductive mode
  auto own_of = [&](EntityId e, std::size_t pass) -> const double* {
    if (e >= base) return emb[pass].row(e - base);
    if (w.mask[e]) return zeros.data();
    return p.entity_emb.row(e);
  };
  auto cand_of = [&](EntityId e, std::size_t pass) -> const double* {
    if (e >= base)
      return trans ? emb[pass].row(e - base) : zeros.data();
    if (w.mask[e]) return zeros.data();
    return p.entity_emb.row(e);
  };

  // candidates: every seen entity plus the new ones
  std::vector<EntityId> candidates = seen_entity_pool(m.split, base);
  for (std::size_t i = 0; i < w.new_names.size(); ++i)
    candidates.push_back(EntityId(base + i));

  auto name_of = [&](EntityId e) -> const std::string& {
    return e >= base ? w.new_names[e - base] : m.vocab.entity_name(e);
  };

  // queries: "head <tab> rel <tab> ?" or "? <tab> rel <tab> tail"
  std::string qpath = require_path(cfg, "data.queries");
  std::ifstream qf(qpath, std::ios::binary);
  if (!qf) fail(ErrorKind::Io, "cannot open queries file: " + qpath);
  const std::size_t topk = cfg.get_uint("predict.topk");
  std::string out_path = cfg.get("out") + "/predictions.tsv";
  std::ofstream pf(out_path, std::ios::binary | std::ios::trunc);
  std::string line;
  std::size_t qi = 0, lineno = 0;
  const double inv_l = 1.0 / double(passes);
  while (std::getline(qf, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = t1 == std::string::npos ? std::string::npos
                                             : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      fail(ErrorKind::Config, qpath + ": line " + std::to_string(lineno) +
                                  ": expected 3 tab-separated fields");
    std::string hs = line.substr(0, t1), rs = line.substr(t1 + 1, t2 - t1 - 1),
                ts = line.substr(t2 + 1);
    bool head_unknown = hs == "?";
    bool tail_unknown = ts == "?";
    if (head_unknown == tail_unknown)
      fail(ErrorKind::Config, qpath + ": line " + std::to_string(lineno) +
                                  ": exactly one of head/tail must be '?'");
    if (!m.vocab.has_relation(rs))
      fail(ErrorKind::Config, "unknown relation in queries: " + rs);
    RelationId rel = m.vocab.relation_id(rs);
    EntityId fixed = entity_of(head_unknown ? ts : hs, false);

    std::vector<std::pair<double, EntityId>> scored;
    scored.reserve(candidates.size());
    for (EntityId c : candidates) {
      double s = 0;
      for (std::size_t l = 0; l < passes; ++l) {
        const double* fv = own_of(fixed, l);
        const double* cv = cand_of(c, l);
        s += inv_l * (head_unknown ? score_triplet(p, cv, rel, fv)
                                   : score_triplet(p, fv, rel, cv));
      }
      scored.emplace_back(s, c);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t k = 0; k < std::min(topk, scored.size()); ++k) {
      std::string out_line = std::to_string(qi) + "\t" +
                             std::to_string(k + 1) + "\t" +
                             name_of(scored[k].second) + "\t" +
                             std::to_string(scored[k].first);
      pf << out_line << "\n";
      std::cout << out_line << "\n";
    }
    ++qi;
  }
  if (!pf) fail(ErrorKind::Io, "write failure on " + out_path);
  log_line(3, "predictions: " + out_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot out-of-graph link prediction over multi-relational "
               "graphs (build " GEN_BUILD_ID ")"};
  app.require_subcommand(1);

  struct SubState {
    CLI::App* sub;
    std::string config_path;
    std::map<std::string, std::string> values;
  };
  std::vector<std::unique_ptr<SubState>> subs;
  const char* names[5] = {"split", "pretrain", "train", "eval", "predict"};
  const char* descs[5] = {
      "build an out-of-graph benchmark manifest from a triplet TSV",
      "train base embeddings on the in-graph",
      "meta-train embedding layers for unseen entities",
      "filtered-ranking or classification metrics on a meta-set",
      "top-k completions for partial triplets with a support file"};
  for (int i = 0; i < 5; ++i) {
    auto st = std::make_unique<SubState>();
    st->sub = app.add_subcommand(names[i], descs[i]);
    st->sub->add_option("--config", st->config_path,
                        "key = value config file");
    for (const ConfigEntry& e : config_schema()) {
      std::string flag = "--" + e.key;
      std::string help = e.help + " [" + (e.def.empty() ? "-" : e.def) + "]";
      // repeated flags override: the last occurrence wins
      st->sub->add_option(flag, st->values[e.key], help)
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
    subs.push_back(std::move(st));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    // CLI11 returns 0 for --help; anything else is a usage error
    return code == 0 ? 0 : 2;
  }

  try {
    for (auto& st : subs) {
      if (!st->sub->parsed()) continue;
      Config cfg;
      if (!st->config_path.empty()) cfg.load_file(st->config_path);
      for (const ConfigEntry& e : config_schema())
        if (st->sub->count("--" + e.key) > 0) cfg.set(e.key, st->values[e.key]);
      log_line(4, std::string("kernels: ") + kernels::backend_name());
      const std::string name = st->sub->get_name();
      if (name == "split") return cmd_split(cfg);
      if (name == "pretrain") return cmd_pretrain(cfg);
      if (name == "train") return cmd_train(cfg);
      if (name == "eval") return cmd_eval(cfg);
      if (name == "predict") return cmd_predict(cfg);
    }
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
