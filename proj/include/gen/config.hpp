#pragma once

#include <map>
#include <string>
#include <vector>

#include "gen/eval.hpp"
#include "gen/split.hpp"
#include "gen/train.hpp"

namespace gen {

// One configuration key: dotted name, default, one-line help. The schema is
// the single source of truth for --help and validation.
struct ConfigEntry {
  std::string key;
  std::string def;
  std::string help;
};

const std::vector<ConfigEntry>& config_schema();

// Layered key/value config: defaults < file < command-line overrides.
class Config {
 public:
  Config();  // schema defaults

  // "key = value" lines; '#' comments and blank lines ignored
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;

  // every key/value as a sorted JSON object string (config echo)
  std::string echo_json() const;

  SplitConfig split_config() const;
  HyperParams hyper_params() const;
  EvalOptions eval_options() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace gen
