#pragma once

// Training run configuration: flat `key = value` lines, `#` starts a
// comment, unknown or repeated keys are errors. Relative paths resolve
// against the directory holding the config file.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "fsmn/checkpoint.hpp"
#include "fsmn/model.hpp"
#include "fsmn/optim.hpp"

namespace fsmn {

struct RunConfig {
  std::string train_path;
  std::string valid_path;
  std::string test_path;       // optional
  std::string checkpoint_dir;  // optional; no checkpoints written when empty
  std::string log_path;        // optional; log also goes to stdout

  ModelConfig model;  // vocab_size 0 means "take it from the training file"
  OptimConfig optim;

  std::size_t batch_size = 200;
  std::size_t eval_batch_size = 200;
  std::size_t max_epochs = 30;
  std::uint64_t seed = 1;
  std::size_t log_interval = 0;  // batches between progress lines; 0 disables
  double train_fraction = 1.0;   // leading fraction of training sentences to use
};

namespace detail {

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("bad boolean for '" + key + "': " + v);
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
  RunConfig rc;
  rc.model.hidden_dims.clear();
  bool saw_hidden = false;

  auto path_value = [&](const std::string& v) {
    std::filesystem::path p(v);
    return (p.is_relative() && !base_dir.empty() ? base_dir / p : p).string();
  };
  auto as_uint = [](const std::string& v, const std::string& k) {
    try {
      return static_cast<std::size_t>(parse_uint(v, k));
    } catch (const CheckpointError& e) {
      throw ConfigError(e.what());
    }
  };
  auto as_double = [](const std::string& v, const std::string& k) {
    try {
      return parse_double(v, k);
    } catch (const CheckpointError& e) {
      throw ConfigError(e.what());
    }
  };
  auto as_list = [](const std::string& v, const std::string& k) {
    if (v == "none" || v.empty()) return std::vector<std::size_t>{};
    try {
      return parse_number_list(v, k);
    } catch (const CheckpointError& e) {
      throw ConfigError(e.what());
    }
  };

  const std::map<std::string, std::function<void(const std::string&, const std::string&)>>
      setters = {
          {"train", [&](auto& v, auto&) { rc.train_path = path_value(v); }},
          {"valid", [&](auto& v, auto&) { rc.valid_path = path_value(v); }},
          {"test", [&](auto& v, auto&) { rc.test_path = path_value(v); }},
          {"checkpoint_dir", [&](auto& v, auto&) { rc.checkpoint_dir = path_value(v); }},
          {"log", [&](auto& v, auto&) { rc.log_path = path_value(v); }},
          {"vocab_size", [&](auto& v, auto& k) { rc.model.vocab_size = as_uint(v, k); }},
          {"context_window", [&](auto& v, auto& k) { rc.model.context_window = as_uint(v, k); }},
          {"embed_dim", [&](auto& v, auto& k) { rc.model.embed_dim = as_uint(v, k); }},
          {"hidden_dims",
           [&](auto& v, auto& k) {
             rc.model.hidden_dims = as_list(v, k);
             saw_hidden = true;
           }},
          {"memory_at",
           [&](auto& v, auto& k) {
             rc.model.memory_at.clear();
             for (auto l : as_list(v, k)) rc.model.memory_at.insert(l);
           }},
          {"memory_order", [&](auto& v, auto& k) { rc.model.memory_order = as_uint(v, k); }},
          {"dense_cap", [&](auto& v, auto& k) { rc.model.dense_cap = as_uint(v, k); }},
          {"lr_weights", [&](auto& v, auto& k) { rc.optim.lr_weights = as_double(v, k); }},
          {"lr_taps", [&](auto& v, auto& k) { rc.optim.lr_taps = as_double(v, k); }},
          {"momentum", [&](auto& v, auto& k) { rc.optim.momentum = as_double(v, k); }},
          {"weight_decay", [&](auto& v, auto& k) { rc.optim.weight_decay = as_double(v, k); }},
          {"exempt_taps",
           [&](auto& v, auto& k) { rc.optim.exempt_taps = detail::parse_bool(v, k); }},
          {"batch_size", [&](auto& v, auto& k) { rc.batch_size = as_uint(v, k); }},
          {"eval_batch_size", [&](auto& v, auto& k) { rc.eval_batch_size = as_uint(v, k); }},
          {"max_epochs", [&](auto& v, auto& k) { rc.max_epochs = as_uint(v, k); }},
          {"seed", [&](auto& v, auto& k) { rc.seed = as_uint(v, k); }},
          {"log_interval", [&](auto& v, auto& k) { rc.log_interval = as_uint(v, k); }},
          {"train_fraction", [&](auto& v, auto& k) { rc.train_fraction = as_double(v, k); }},
      };

  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (auto [s, fresh] = seen.emplace(key, lineno); !fresh) {
      throw ConfigError("line " + std::to_string(lineno) + ": '" + key +
                        "' already set on line " + std::to_string(s->second));
    }
    it->second(value, key);
  }
  if (!saw_hidden) throw ConfigError("missing required key 'hidden_dims'");
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  return parse_run_config(in, std::filesystem::path(path).parent_path());
}

/// Checks everything that does not need the data files.
inline void validate_run_config(const RunConfig& rc) {
  if (rc.train_path.empty()) throw ConfigError("missing required key 'train'");
  if (rc.valid_path.empty()) throw ConfigError("missing required key 'valid'");
  if (rc.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (rc.eval_batch_size == 0) throw ConfigError("eval_batch_size must be >= 1");
  if (rc.max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (!(rc.train_fraction > 0.0 && rc.train_fraction <= 1.0)) {
    throw ConfigError("train_fraction must be in (0, 1]");
  }
  rc.optim.validate();
  ModelConfig probe = rc.model;
  if (probe.vocab_size == 0) probe.vocab_size = kReservedTokens + 1;
  probe.validate();
}

}  // namespace fsmn
