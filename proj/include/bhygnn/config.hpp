#pragma once

// Flat key=value configuration with command-line overrides (last one wins).
// Unknown keys are rejected against the schema of the command being run so a
// typo never silently falls back to a default.

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bhygnn/datagen.hpp"
#include "bhygnn/dataset_io.hpp"
#include "bhygnn/errors.hpp"

namespace bhygnn {

class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path) {
    Config c;
    for (auto& [k, v] : load_kv_file(path)) c.values_[k] = v;
    return c;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  // "key=value" as passed to --set
  void set_kv(const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got: " + kv);
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  std::string require_str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("missing required config key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw UsageError("config key '" + key + "' is not a number: " + it->second);
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      std::size_t pos = 0;
      std::int64_t v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw UsageError("config key '" + key + "' is not an integer: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw UsageError("config key '" + key + "' is not a boolean: " + it->second);
  }

  void reject_unknown(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : values_)
      if (!allowed.count(k)) throw UsageError("unknown config key '" + k + "'");
  }

  std::string render() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << "=" << v << "\n";
    return os.str();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

enum class TrainMode { Supervised, Ssl };

struct ProbeConfig {
  std::int64_t hidden = 64;
  std::int64_t epochs = 300;
  double lr = 1e-2;
  std::uint64_t seed = 7;

  void validate() const {
    if (hidden < 1) throw UsageError("probe_hidden must be >= 1");
    if (epochs < 1) throw UsageError("probe_epochs must be >= 1");
  }
};

struct TrainConfig {
  TrainMode mode = TrainMode::Ssl;
  double alpha = 0.1;
  double lambda = 0.7;
  double tau = 1.0;
  bool hard = true;
  std::int64_t hidden = 64;
  std::int64_t heads = 4;
  std::int64_t head_dim = 16;
  std::int64_t layers = 2;
  std::int64_t proj_dim = 64;
  std::int64_t latent = 8;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::int64_t epochs = 500;
  std::int64_t num_views = 4;
  double p_mask = 0.2;
  double p_pert = 0.2;
  double p_drop_edge = 0.2;
  double p_drop_node = 0.2;
  double aug_noise_std = 1.0;
  double member_removal_fraction = 1.0 / 3.0;
  double split_train = 0.2;
  double split_val = 0.2;
  double split_test = 0.6;
  std::uint64_t seed = 1;
  std::int64_t eval_every = 25;
  bool contrast_on_projection = true;
  bool recon_soft = false;
  ProbeConfig probe;

  void validate() const {
    if (alpha < 0.0) throw UsageError("alpha must be >= 0");
    if (lambda <= 0.0 || lambda > 1.0) throw UsageError("lambda must be in (0,1]");
    if (tau <= 0.0) throw UsageError("tau must be > 0");
    if (hidden < 1 || heads < 1 || head_dim < 1 || layers < 1 || proj_dim < 1 || latent < 1)
      throw UsageError("model dimensions must be positive");
    if (heads * head_dim != hidden) throw UsageError("heads * head_dim must equal hidden");
    if (lr <= 0.0) throw UsageError("lr must be > 0");
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (num_views < 1 || num_views > 4) throw UsageError("num_views must be in [1,4]");
    for (double p : {p_mask, p_pert, p_drop_edge, p_drop_node})
      if (p < 0.0 || p > 1.0) throw UsageError("augmentation ratios must be in [0,1]");
    if (aug_noise_std <= 0.0) throw UsageError("aug_noise_std must be > 0");
    if (member_removal_fraction <= 0.0 || member_removal_fraction >= 1.0)
      throw UsageError("member_removal_fraction must be in (0,1)");
    if (eval_every < 1) throw UsageError("eval_every must be >= 1");
    probe.validate();
  }
};

inline const std::set<std::string>& train_config_keys() {
  static const std::set<std::string> keys = {
      "data",        "mode",          "alpha",        "lambda",
      "tau",         "hard",          "hidden",       "heads",
      "head_dim",    "layers",        "proj_dim",     "latent",
      "lr",          "weight_decay",  "epochs",       "num_views",
      "p_mask",      "p_pert",        "p_drop_edge",  "p_drop_node",
      "aug_noise_std", "member_removal_fraction",
      "split_train", "split_val",     "split_test",   "seed",
      "eval_every",  "contrast_on_projection",        "recon_soft",
      "probe_hidden", "probe_epochs", "probe_lr",     "probe_seed",
      "num_seeds"};
  return keys;
}

inline TrainConfig parse_train_config(const Config& c) {
  TrainConfig t;
  const std::string mode = c.get_str("mode", "ssl");
  if (mode == "ssl")
    t.mode = TrainMode::Ssl;
  else if (mode == "supervised")
    t.mode = TrainMode::Supervised;
  else
    throw UsageError("mode must be 'supervised' or 'ssl', got: " + mode);
  t.alpha = c.get_double("alpha", t.alpha);
  t.lambda = c.get_double("lambda", t.lambda);
  t.tau = c.get_double("tau", t.tau);
  t.hard = c.get_bool("hard", t.hard);
  t.hidden = c.get_int("hidden", t.hidden);
  t.heads = c.get_int("heads", t.heads);
  t.head_dim = c.get_int("head_dim", t.head_dim);
  t.layers = c.get_int("layers", t.layers);
  t.proj_dim = c.get_int("proj_dim", t.proj_dim);
  t.latent = c.get_int("latent", t.latent);
  t.lr = c.get_double("lr", t.lr);
  t.weight_decay = c.get_double("weight_decay", t.weight_decay);
  t.epochs = c.get_int("epochs", t.epochs);
  t.num_views = c.get_int("num_views", t.num_views);
  t.p_mask = c.get_double("p_mask", t.p_mask);
  t.p_pert = c.get_double("p_pert", t.p_pert);
  t.p_drop_edge = c.get_double("p_drop_edge", t.p_drop_edge);
  t.p_drop_node = c.get_double("p_drop_node", t.p_drop_node);
  t.aug_noise_std = c.get_double("aug_noise_std", t.aug_noise_std);
  t.member_removal_fraction = c.get_double("member_removal_fraction", t.member_removal_fraction);
  t.split_train = c.get_double("split_train", t.split_train);
  t.split_val = c.get_double("split_val", t.split_val);
  t.split_test = c.get_double("split_test", t.split_test);
  t.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<std::int64_t>(t.seed)));
  t.eval_every = c.get_int("eval_every", t.eval_every);
  t.contrast_on_projection = c.get_bool("contrast_on_projection", t.contrast_on_projection);
  t.recon_soft = c.get_bool("recon_soft", t.recon_soft);
  t.probe.hidden = c.get_int("probe_hidden", t.probe.hidden);
  t.probe.epochs = c.get_int("probe_epochs", t.probe.epochs);
  t.probe.lr = c.get_double("probe_lr", t.probe.lr);
  t.probe.seed =
      static_cast<std::uint64_t>(c.get_int("probe_seed", static_cast<std::int64_t>(t.probe.seed)));
  t.validate();
  return t;
}

inline const std::set<std::string>& generate_config_keys() {
  static const std::set<std::string> keys = {"classes",        "nodes_per_class", "edges_per_class",
                                             "edge_size",      "majority_count",  "feature_dim",
                                             "sigma",          "seed"};
  return keys;
}

inline SyntheticSpec parse_synthetic_spec(const Config& c) {
  SyntheticSpec s;
  s.num_classes = c.get_int("classes", s.num_classes);
  s.nodes_per_class = c.get_int("nodes_per_class", s.nodes_per_class);
  s.edges_per_class = c.get_int("edges_per_class", s.edges_per_class);
  s.edge_size = c.get_int("edge_size", s.edge_size);
  s.majority_count = c.get_int("majority_count", s.majority_count);
  s.feature_dim = c.get_int("feature_dim", s.feature_dim);
  s.noise_std = c.get_double("sigma", s.noise_std);
  s.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<std::int64_t>(s.seed)));
  s.validate();
  return s;
}

}  // namespace bhygnn
