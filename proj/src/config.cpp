#include "gen/config.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "gen/error.hpp"

using nlohmann::json;

namespace gen {

const std::vector<ConfigEntry>& config_schema() {
  static const std::vector<ConfigEntry> schema = {
      {"seed", "42", "master seed; every module stream derives from it"},
      {"threads", "1", "evaluation worker threads (1 = fully serial)"},
      {"out", "out", "output directory"},
      {"data.triplets", "", "input triplet TSV (split)"},
      {"data.manifest", "", "split manifest directory"},
      {"data.checkpoint", "", "model checkpoint (eval, predict)"},
      {"data.init_checkpoint", "", "initial checkpoint for train (pretrain output)"},
      {"data.support", "", "support triplet TSV for predict"},
      {"data.queries", "", "partial-triplet file for predict"},
      {"split.min_degree", "10", "minimum raw triplet count for unseen candidates"},
      {"split.max_degree", "100", "maximum raw triplet count for unseen candidates"},
      {"split.n_unseen", "5000", "number of unseen entities to sample"},
      {"split.ratio_train", "5", "meta-train share of unseen entities"},
      {"split.ratio_valid", "2", "meta-valid share of unseen entities"},
      {"split.ratio_test", "3", "meta-test share of unseen entities"},
      {"model.dim", "100", "embedding dimension d"},
      {"model.n_basis", "100", "basis count B for relation weight decomposition"},
      {"model.score", "distmult", "score function: transe|distmult|linear"},
      {"model.dropout", "0.3", "dropout rate at every embedding layer"},
      {"model.mode", "transductive", "embedding mode: inductive|transductive"},
      {"model.stochastic", "true", "sample embeddings from N(mu, diag(sigma^2))"},
      {"model.hidden", "0", "linear-head hidden width (0 = 2*dim)"},
      {"task.kind", "entity", "prediction task: entity|relation"},
      {"train.lr", "0.001", "Adam learning rate"},
      {"train.margin", "1.0", "hinge-loss margin"},
      {"train.num_neg", "32", "negatives per positive query"},
      {"train.n_entities", "500", "unseen entities simulated per episode"},
      {"train.max_iteration", "10000", "meta-training episodes"},
      {"train.curriculum", "true", "log-schedule shot curriculum"},
      {"train.shots", "3", "test-time shot size K"},
      {"train.l_train", "1", "MC samples per training episode"},
      {"train.eval_every", "250", "validation cadence in episodes (0 = never)"},
      {"train.patience", "10", "early stop after this many stale validations (0 = off)"},
      {"pretrain.steps", "2000", "in-graph pretraining steps"},
      {"pretrain.batch", "256", "pretraining batch size"},
      {"eval.set", "test", "meta-set to evaluate: valid|test"},
      {"eval.l_test", "10", "MC sample count at evaluation"},
      {"eval.tie", "mean", "headline tie rule: optimistic|pessimistic|mean"},
      {"eval.shots", "0", "support size at evaluation (0 = train.shots)"},
      {"eval.ranks_csv", "", "optional per-query rank CSV path"},
      {"predict.topk", "10", "completions per predict query"},
  };
  return schema;
}

Config::Config() {
  for (const ConfigEntry& e : config_schema()) values_[e.key] = e.def;
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, "cannot open config file: " + path);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    auto issp = [](unsigned char c) { return std::isspace(c); };
    while (!s.empty() && issp(s.front())) s.erase(s.begin());
    while (!s.empty() && issp(s.back())) s.pop_back();
    return s;
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::Config, path + ": line " + std::to_string(lineno) +
                                  ": expected key = value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void Config::set(const std::string& key, const std::string& value) {
  if (values_.find(key) == values_.end())
    fail(ErrorKind::Config, "unknown config key: " + key);
  values_[key] = value;
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorKind::Config, "unknown config key: " + key);
  return it->second;
}

bool Config::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::Config, "config key " + key + ": expected boolean, got " + v);
}

int64_t Config::get_int(const std::string& key) const {
  try {
    std::size_t pos = 0;
    int64_t v = std::stoll(get(key), &pos);
    if (pos != get(key).size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::Config,
         "config key " + key + ": expected integer, got " + get(key));
  }
}

uint64_t Config::get_uint(const std::string& key) const {
  int64_t v = get_int(key);
  if (v < 0)
    fail(ErrorKind::Config, "config key " + key + ": must be non-negative");
  return uint64_t(v);
}

double Config::get_double(const std::string& key) const {
  try {
    std::size_t pos = 0;
    double v = std::stod(get(key), &pos);
    if (pos != get(key).size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::Config,
         "config key " + key + ": expected number, got " + get(key));
  }
}

std::string Config::echo_json() const {
  json j;
  for (const auto& [k, v] : values_) j[k] = v;
  return j.dump();
}

SplitConfig Config::split_config() const {
  SplitConfig sc;
  sc.min_degree = get_uint("split.min_degree");
  sc.max_degree = get_uint("split.max_degree");
  sc.n_unseen = get_uint("split.n_unseen");
  sc.ratios = {get_uint("split.ratio_train"), get_uint("split.ratio_valid"),
               get_uint("split.ratio_test")};
  sc.seed = derive_seed(get_uint("seed"), "split-config");
  return sc;
}

HyperParams Config::hyper_params() const {
  HyperParams hp;
  hp.dim = get_uint("model.dim");
  hp.n_basis = get_uint("model.n_basis");
  hp.linear_hidden = get_uint("model.hidden");
  hp.lr = get_double("train.lr");
  hp.margin = get_double("train.margin");
  hp.num_neg = get_uint("train.num_neg");
  hp.l_train = get_uint("train.l_train");
  hp.l_test = get_uint("eval.l_test");
  hp.shots = get_uint("train.shots");
  hp.entities_per_episode = get_uint("train.n_entities");
  hp.max_iteration = get_uint("train.max_iteration");
  hp.curriculum = get_bool("train.curriculum");
  hp.dropout = get_double("model.dropout");
  hp.score_kind = score_kind_from_string(get("model.score"));
  const std::string& mode = get("model.mode");
  if (mode == "inductive")
    hp.mode = EmbedMode::Inductive;
  else if (mode == "transductive")
    hp.mode = EmbedMode::Transductive;
  else
    fail(ErrorKind::Config, "model.mode must be inductive|transductive");
  hp.stochastic = get_bool("model.stochastic");
  const std::string& task = get("task.kind");
  if (task == "entity")
    hp.task_kind = TaskKind::EntityPrediction;
  else if (task == "relation")
    hp.task_kind = TaskKind::RelationPrediction;
  else
    fail(ErrorKind::Config, "task.kind must be entity|relation");
  hp.seed = get_uint("seed");
  hp.eval_every = get_uint("train.eval_every");
  hp.patience = get_uint("train.patience");
  hp.pretrain_steps = get_uint("pretrain.steps");
  hp.pretrain_batch = get_uint("pretrain.batch");
  return hp;
}

EvalOptions Config::eval_options() const {
  EvalOptions eo;
  const std::string& set = get("eval.set");
  if (set == "valid")
    eo.which = MetaSet::Valid;
  else if (set == "test")
    eo.which = MetaSet::Test;
  else
    fail(ErrorKind::Config, "eval.set must be valid|test");
  HyperParams hp = hyper_params();
  eo.mode = hp.mode;
  eo.stochastic = hp.stochastic;
  uint64_t eval_shots = get_uint("eval.shots");
  eo.shots = eval_shots == 0 ? hp.shots : eval_shots;
  eo.mc_samples = hp.l_test;
  eo.seed = derive_seed(hp.seed, "eval");
  eo.threads = int(get_uint("threads"));
  return eo;
}

}  // namespace gen
