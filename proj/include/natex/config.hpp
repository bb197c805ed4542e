#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "natex/dataset.hpp"
#include "natex/errors.hpp"
#include "natex/estimators.hpp"
#include "natex/learners.hpp"

namespace natex {

// Flat `key = value` config file: one pair per line, `#` starts a comment,
// blank lines ignored. Generation, learner, and benchmark keys share one
// namespace so a single file can drive a whole run.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("config: cannot open file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_text(text, path);
  }

  static KeyValueConfig parse_text(const std::string& text, const std::string& origin = "<text>") {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t eol = text.find('\n', pos);
      std::string line = text.substr(pos, eol == std::string::npos ? eol : eol - pos);
      pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw config_error("config: " + origin + " line " + std::to_string(line_no) +
                           ": expected `key = value`");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw config_error("config: " + origin + " line " + std::to_string(line_no) +
                           ": empty key");
      }
      if (cfg.values_.count(key)) {
        throw config_error("config: " + origin + " line " + std::to_string(line_no) +
                           ": duplicate key `" + key + "`");
      }
      cfg.values_[key] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    double v = 0.0;
    const auto& s = it->second;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
      throw config_error("config: key `" + key + "` is not a number: " + s);
    }
    return v;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::uint64_t v = 0;
    const auto& s = it->second;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
      throw config_error("config: key `" + key + "` is not a nonnegative integer: " + s);
    }
    return v;
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    const auto it = values_.find(key);
    if (it == values_.end()) return out;
    std::string cell;
    for (char c : it->second + ",") {
      if (c == ',') {
        const std::string token = trim(cell);
        if (!token.empty()) out.push_back(token);
        cell.clear();
      } else {
        cell.push_back(c);
      }
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
  }

  std::map<std::string, std::string> values_;
};

inline GenerationConfig load_generation_config(const KeyValueConfig& kv) {
  GenerationConfig cfg;
  cfg.n = static_cast<std::size_t>(kv.get_u64("n", cfg.n));
  cfg.d = static_cast<std::size_t>(kv.get_u64("d", cfg.d));
  cfg.coeff_scale = kv.get_double("coeff_scale", cfg.coeff_scale);
  cfg.target_treated_fraction =
      kv.get_double("target_treated_fraction", cfg.target_treated_fraction);
  cfg.effect_scale = kv.get_double("effect_scale", cfg.effect_scale);
  cfg.outcome_noise_sd = kv.get_double("outcome_noise_sd", cfg.outcome_noise_sd);
  cfg.seed = kv.get_u64("seed", cfg.seed);
  try {
    cfg.validate();
  } catch (const validation_error& e) {
    throw config_error(e.what());
  }
  return cfg;
}

inline RegressorSpec load_regressor_spec(const KeyValueConfig& kv) {
  RegressorSpec spec;
  if (kv.has("kind")) spec.kind = parse_regressor_kind(kv.get_string("kind", ""));
  spec.ridge_lambda = kv.get_double("ridge_lambda", spec.ridge_lambda);
  spec.hidden_width = static_cast<std::size_t>(kv.get_u64("hidden_width", spec.hidden_width));
  spec.n_layers = static_cast<std::size_t>(kv.get_u64("n_layers", spec.n_layers));
  spec.learning_rate = kv.get_double("learning_rate", spec.learning_rate);
  spec.epochs = static_cast<std::size_t>(kv.get_u64("epochs", spec.epochs));
  spec.batch_size = static_cast<std::size_t>(kv.get_u64("batch_size", spec.batch_size));
  spec.seed = kv.get_u64("seed", spec.seed);
  try {
    spec.validate();
  } catch (const validation_error& e) {
    throw config_error(e.what());
  }
  return spec;
}

enum class PropensitySource { kTrue, kEstimated, kEstimatedThenTruncated };

inline std::string propensity_source_name(PropensitySource source) {
  switch (source) {
    case PropensitySource::kTrue: return "true";
    case PropensitySource::kEstimated: return "estimated";
    case PropensitySource::kEstimatedThenTruncated: return "estimated-then-truncated";
  }
  return "?";
}

inline PropensitySource parse_propensity_source(const std::string& name) {
  if (name == "true") return PropensitySource::kTrue;
  if (name == "estimated") return PropensitySource::kEstimated;
  if (name == "estimated-then-truncated") return PropensitySource::kEstimatedThenTruncated;
  throw config_error("unknown propensity_source: " + name +
                     " (expected true|estimated|estimated-then-truncated)");
}

// The estimators reported in the main benchmark table, in table order.
inline std::vector<std::string> default_benchmark_estimators() {
  return {"regression-discontinuity",
          "propensity-stratification",
          "direct-difference",
          "adjusted-direct",
          "horvitz-thompson",
          "off-policy",
          "double-double",
          "doubly-robust",
          "direct-prediction"};
}

struct BenchmarkConfig {
  std::optional<std::string> dataset_csv;  // full-mode CSV; absent means generated
  GenerationConfig generation;
  RegressorSpec learner;
  std::vector<std::string> estimators = default_benchmark_estimators();
  std::size_t runs = 20;
  std::optional<std::size_t> subsample = 5000;
  std::uint64_t master_seed = 0;
  PropensitySource propensity_source = PropensitySource::kEstimated;
  double rd_window = 0.1;
  std::size_t strat_bins = 10;
  std::size_t parallelism = 1;

  void validate() const {
    if (runs < 1) throw config_error("benchmark config: runs must be >= 1");
    if (parallelism < 1) throw config_error("benchmark config: parallelism must be >= 1");
    if (subsample && *subsample < 2) {
      throw config_error("benchmark config: subsample must be >= 2");
    }
    if (estimators.empty()) throw config_error("benchmark config: no estimators configured");
    for (const auto& name : estimators) {
      find_estimator(name);  // raises lookup_error on unknown names
    }
    if (!(rd_window > 0)) throw config_error("benchmark config: rd_window must be > 0");
    if (strat_bins < 1) throw config_error("benchmark config: strat_bins must be >= 1");
  }
};

inline BenchmarkConfig load_benchmark_config(const KeyValueConfig& kv) {
  BenchmarkConfig cfg;
  if (kv.has("dataset")) cfg.dataset_csv = kv.get_string("dataset", "");
  cfg.generation = load_generation_config(kv);
  cfg.learner = load_regressor_spec(kv);
  if (kv.has("estimators")) cfg.estimators = kv.get_list("estimators");
  cfg.runs = static_cast<std::size_t>(kv.get_u64("runs", cfg.runs));
  if (kv.has("subsample")) {
    cfg.subsample = static_cast<std::size_t>(kv.get_u64("subsample", 0));
  }
  cfg.master_seed = kv.get_u64("master_seed", cfg.master_seed);
  if (kv.has("propensity_source")) {
    cfg.propensity_source = parse_propensity_source(kv.get_string("propensity_source", ""));
  }
  cfg.rd_window = kv.get_double("rd_window", cfg.rd_window);
  cfg.strat_bins = static_cast<std::size_t>(kv.get_u64("strat_bins", cfg.strat_bins));
  cfg.parallelism = static_cast<std::size_t>(kv.get_u64("parallelism", cfg.parallelism));
  try {
    cfg.validate();
  } catch (const lookup_error& e) {
    throw config_error(e.what());
  }
  return cfg;
}

}  // namespace natex
