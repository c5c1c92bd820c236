#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tact/discriminator.hpp"
#include "tact/env.hpp"
#include "tact/errors.hpp"
#include "tact/explorer.hpp"

namespace tact {

// FNV-1a 64-bit, used to stamp CSV headers with a provenance hash.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Writes via a temp file + rename so readers never observe a torn file.
inline void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot open for writing: " + tmp);
    os << content;
    os.flush();
    if (!os) throw ConfigError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw ConfigError("rename failed: " + tmp + " -> " + path);
  }
}

struct ObjectsConfig {
  std::string file = "data/objects_default.json";
  int count = 10;
  int max_edges = 8;
  double max_radius_m = 0.10;
};

// See CotrainConfig in cotrain.hpp for field semantics; kept as plain numbers
// here so the parser has no dependency on the training loop.
struct CotrainSection {
  long long max_total_steps = 300000;
  int disc_epochs = 2;
  long long explorer_steps_per_iteration = 20000;
  long long buffer_capacity = 30000;
  int initial_episodes = 100;
  std::string checkpoint_dir;  // empty: no checkpoints
};

struct EvaluateSection {
  std::string method = "edge_icp";
  int n_trials = 100;
  int threads = 0;  // 0: hardware concurrency
  bool greedy = false;
  std::string model;       // model bundle path for learned/CNN methods
  std::string out_dir = ".";
  std::vector<double> noise_rates = {0.0, 0.006, 0.010, 0.015, 0.020, 0.025};
  std::vector<double> thresholds = {0.7, 0.98};
};

struct RunConfig {
  EnvConfig env;
  ObjectsConfig objects;
  DiscriminatorConfig discriminator;
  PPOConfig explorer;
  CotrainSection cotrain;
  EvaluateSection evaluate;

  void validate() const {
    env.validate();
    discriminator.validate();
    explorer.validate();
    if (objects.count < 1) throw ConfigError("[objects] count must be >= 1");
    if (objects.max_edges < 3) throw ConfigError("[objects] max_edges must be >= 3");
    if (objects.max_radius_m <= 0) throw ConfigError("[objects] max_radius_m must be > 0");
    if (cotrain.max_total_steps < 1) throw ConfigError("[cotrain] max_total_steps must be >= 1");
    if (cotrain.disc_epochs < 0) throw ConfigError("[cotrain] disc_epochs must be >= 0");
    if (cotrain.explorer_steps_per_iteration < 1) {
      throw ConfigError("[cotrain] explorer_steps_per_iteration must be >= 1");
    }
    if (cotrain.buffer_capacity < 1) throw ConfigError("[cotrain] buffer_capacity must be >= 1");
    if (cotrain.initial_episodes < 0) throw ConfigError("[cotrain] initial_episodes must be >= 0");
    if (evaluate.n_trials < 1) throw ConfigError("[evaluate] n_trials must be >= 1");
    if (evaluate.threads < 0) throw ConfigError("[evaluate] threads must be >= 0");
    for (double r : evaluate.noise_rates) {
      if (r < 0.0 || r > 1.0) throw ConfigError("[evaluate] noise_rates must be in [0, 1]");
    }
    for (double t : evaluate.thresholds) {
      if (!(t > 0.0 && t <= 1.0)) throw ConfigError("[evaluate] thresholds must be in (0, 1]");
    }
  }

  // Canonical text for hashing: every effective setting in a fixed order.
  std::string canonical_string() const;
  std::uint64_t hash() const { return fnv1a64(canonical_string()); }
};

namespace detail_config {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

inline long long to_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  }
  if (pos != v.size()) {
    throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  }
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

inline std::vector<double> to_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("config: " + key + " has an empty list entry");
    out.push_back(to_double(key, item));
  }
  if (out.empty()) throw ConfigError("config: " + key + " expects a comma-separated list");
  return out;
}

}  // namespace detail_config

// Parse the key-value run-config text: [section] headers, `key = value`
// lines, and full-line comments starting with '#' or ';'. Unknown sections or
// keys are configuration errors so typos never silently fall back to defaults.
inline RunConfig parse_run_config(const std::string& text) {
  using detail_config::to_bool;
  using detail_config::to_double;
  using detail_config::to_double_list;
  using detail_config::to_int;
  using detail_config::trim;

  RunConfig cfg;
  std::string section;
  std::istringstream lines(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(lines, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section != "env" && section != "objects" && section != "discriminator" &&
          section != "explorer" && section != "cotrain" && section != "evaluate") {
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown section [" +
                          section + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");
    }
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
    }
    const std::string full = "[" + section + "] " + key;

    if (section == "env") {
      if (key == "workspace_m") cfg.env.workspace_size = to_double(full, value);
      else if (key == "cell_m") cfg.env.cell_size = to_double(full, value);
      else if (key == "max_actions") cfg.env.max_actions = static_cast<int>(to_int(full, value));
      else if (key == "sensor_failure_rate") cfg.env.sensor_failure_rate = to_double(full, value);
      else if (key == "translation_noise_m") cfg.env.translation_noise = to_double(full, value);
      else if (key == "orientation_mode") {
        if (value == "continuous") cfg.env.orientation_mode = OrientationMode::Continuous;
        else if (value == "discrete") cfg.env.orientation_mode = OrientationMode::Discrete;
        else throw ConfigError("config: " + full + " must be continuous or discrete");
      } else if (key == "orientation_count") {
        cfg.env.orientation_count = static_cast<int>(to_int(full, value));
      } else {
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown key " + full);
      }
    } else if (section == "objects") {
      if (key == "file") cfg.objects.file = value;
      else if (key == "count") cfg.objects.count = static_cast<int>(to_int(full, value));
      else if (key == "max_edges") cfg.objects.max_edges = static_cast<int>(to_int(full, value));
      else if (key == "max_radius_m") cfg.objects.max_radius_m = to_double(full, value);
      else throw ConfigError("config line " + std::to_string(line_no) + ": unknown key " + full);
    } else if (section == "discriminator") {
      if (key == "confidence_threshold") {
        cfg.discriminator.confidence_threshold = to_double(full, value);
      } else if (key == "epochs_per_iteration") {
        cfg.discriminator.epochs_per_iteration = static_cast<int>(to_int(full, value));
      } else if (key == "batch_size") {
        cfg.discriminator.batch_size = static_cast<int>(to_int(full, value));
      } else if (key == "learning_rate") {
        cfg.discriminator.learning_rate = to_double(full, value);
      } else {
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown key " + full);
      }
    } else if (section == "explorer") {
      if (key == "steps_per_iteration") cfg.explorer.steps_per_iteration = to_int(full, value);
      else if (key == "horizon") cfg.explorer.horizon = static_cast<int>(to_int(full, value));
      else if (key == "epochs") cfg.explorer.epochs = static_cast<int>(to_int(full, value));
      else if (key == "minibatch") cfg.explorer.minibatch = static_cast<int>(to_int(full, value));
      else if (key == "clip") cfg.explorer.clip = to_double(full, value);
      else if (key == "gamma") cfg.explorer.gamma = to_double(full, value);
      else if (key == "lambda") cfg.explorer.lambda = to_double(full, value);
      else if (key == "value_coef") cfg.explorer.value_coef = to_double(full, value);
      else if (key == "entropy_coef") cfg.explorer.entropy_coef = to_double(full, value);
      else if (key == "learning_rate") cfg.explorer.learning_rate = to_double(full, value);
      else throw ConfigError("config line " + std::to_string(line_no) + ": unknown key " + full);
    } else if (section == "cotrain") {
      if (key == "max_total_steps") cfg.cotrain.max_total_steps = to_int(full, value);
      else if (key == "disc_epochs") cfg.cotrain.disc_epochs = static_cast<int>(to_int(full, value));
      else if (key == "explorer_steps_per_iteration") {
        cfg.cotrain.explorer_steps_per_iteration = to_int(full, value);
      } else if (key == "buffer_capacity") {
        cfg.cotrain.buffer_capacity = to_int(full, value);
      } else if (key == "initial_episodes") {
        cfg.cotrain.initial_episodes = static_cast<int>(to_int(full, value));
      } else if (key == "checkpoint_dir") {
        cfg.cotrain.checkpoint_dir = value;
      } else {
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown key " + full);
      }
    } else if (section == "evaluate") {
      if (key == "method") cfg.evaluate.method = value;
      else if (key == "n_trials") cfg.evaluate.n_trials = static_cast<int>(to_int(full, value));
      else if (key == "threads") cfg.evaluate.threads = static_cast<int>(to_int(full, value));
      else if (key == "greedy") cfg.evaluate.greedy = to_bool(full, value);
      else if (key == "model") cfg.evaluate.model = value;
      else if (key == "out_dir") cfg.evaluate.out_dir = value;
      else if (key == "noise_rates") cfg.evaluate.noise_rates = to_double_list(full, value);
      else if (key == "thresholds") cfg.evaluate.thresholds = to_double_list(full, value);
      else throw ConfigError("config line " + std::to_string(line_no) + ": unknown key " + full);
    }
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("config: cannot open: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

inline std::string RunConfig::canonical_string() const {
  std::ostringstream os;
  os.precision(17);
  os << "env.workspace_m=" << env.workspace_size << "\nenv.cell_m=" << env.cell_size
     << "\nenv.max_actions=" << env.max_actions
     << "\nenv.sensor_failure_rate=" << env.sensor_failure_rate
     << "\nenv.translation_noise_m=" << env.translation_noise << "\nenv.orientation_mode="
     << (env.orientation_mode == OrientationMode::Continuous ? "continuous" : "discrete")
     << "\nenv.orientation_count=" << env.orientation_count << "\nobjects.file=" << objects.file
     << "\nobjects.count=" << objects.count << "\nobjects.max_edges=" << objects.max_edges
     << "\nobjects.max_radius_m=" << objects.max_radius_m
     << "\ndiscriminator.confidence_threshold=" << discriminator.confidence_threshold
     << "\ndiscriminator.epochs_per_iteration=" << discriminator.epochs_per_iteration
     << "\ndiscriminator.batch_size=" << discriminator.batch_size
     << "\ndiscriminator.learning_rate=" << discriminator.learning_rate
     << "\nexplorer.steps_per_iteration=" << explorer.steps_per_iteration
     << "\nexplorer.horizon=" << explorer.horizon << "\nexplorer.epochs=" << explorer.epochs
     << "\nexplorer.minibatch=" << explorer.minibatch << "\nexplorer.clip=" << explorer.clip
     << "\nexplorer.gamma=" << explorer.gamma << "\nexplorer.lambda=" << explorer.lambda
     << "\nexplorer.value_coef=" << explorer.value_coef
     << "\nexplorer.entropy_coef=" << explorer.entropy_coef
     << "\nexplorer.learning_rate=" << explorer.learning_rate
     << "\ncotrain.max_total_steps=" << cotrain.max_total_steps
     << "\ncotrain.disc_epochs=" << cotrain.disc_epochs
     << "\ncotrain.explorer_steps_per_iteration=" << cotrain.explorer_steps_per_iteration
     << "\ncotrain.buffer_capacity=" << cotrain.buffer_capacity
     << "\ncotrain.initial_episodes=" << cotrain.initial_episodes
     << "\ncotrain.checkpoint_dir=" << cotrain.checkpoint_dir
     << "\nevaluate.method=" << evaluate.method << "\nevaluate.n_trials=" << evaluate.n_trials
     << "\nevaluate.threads=" << evaluate.threads
     << "\nevaluate.greedy=" << (evaluate.greedy ? "true" : "false")
     << "\nevaluate.model=" << evaluate.model << "\nevaluate.out_dir=" << evaluate.out_dir
     << "\nevaluate.noise_rates=";
  for (std::size_t i = 0; i < evaluate.noise_rates.size(); ++i) {
    os << (i ? "," : "") << evaluate.noise_rates[i];
  }
  os << "\nevaluate.thresholds=";
  for (std::size_t i = 0; i < evaluate.thresholds.size(); ++i) {
    os << (i ? "," : "") << evaluate.thresholds[i];
  }
  os << "\n";
  return os.str();
}

}  // namespace tact
