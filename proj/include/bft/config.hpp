#pragma once

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bft/bayes.hpp"
#include "bft/ingest.hpp"
#include "bft/model.hpp"
#include "bft/textpipe.hpp"
#include "bft/train.hpp"

namespace bft {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error("ConfigError: " + what) {}
};

// Everything one run needs, parseable from a flat "section.key = value"
// file. Every key has a default except dataset.path; unknown keys are an
// error so typos cannot silently fall back to defaults.
struct RunConfig {
  std::string dataset_path;
  std::string text_column = "text";
  std::string label_column = "type";
  std::vector<std::string> labels_real = {"real", "true"};
  std::vector<std::string> labels_fake = {"fake", "false"};
  std::string stoplist = "default";  // "default" or a file path
  PipelineConfig pipeline;
  ModelConfig model;
  TrainConfig train;
  BayesConfig bayes;
  std::string out_dir = "bft_out";

  LabelMap label_map() const {
    LabelMap m;
    for (const std::string& s : labels_real) m.entries[detail::lower(detail::trim(s))] = Label::Real;
    for (const std::string& s : labels_fake) m.entries[detail::lower(detail::trim(s))] = Label::Fake;
    return m;
  }

  void resolve_stoplist() {
    pipeline.stoplist = (stoplist == "default") ? default_stoplist() : load_stoplist(stoplist);
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  std::string s = lower(trim(v));
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected a boolean, got \"" + v + "\"");
}

inline long parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got \"" + v + "\"");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got \"" + v + "\"");
  }
}

}  // namespace detail

inline void apply_config_kv(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  if (key == "dataset.path") c.dataset_path = value;
  else if (key == "dataset.text_column") c.text_column = value;
  else if (key == "dataset.label_column") c.label_column = value;
  else if (key == "dataset.labels_real") c.labels_real = detail::split_list(value);
  else if (key == "dataset.labels_fake") c.labels_fake = detail::split_list(value);
  else if (key == "pipeline.stoplist") c.stoplist = value;
  else if (key == "pipeline.max_vocab") c.pipeline.max_vocab = size_t(parse_int(key, value));
  else if (key == "pipeline.min_df") c.pipeline.min_df = size_t(parse_int(key, value));
  else if (key == "pipeline.stemming") c.pipeline.stemming_enabled = parse_bool(key, value);
  else if (key == "model.seq_len") c.model.seq_len = int(parse_int(key, value));
  else if (key == "model.d_model") c.model.d_model = int(parse_int(key, value));
  else if (key == "model.gru_hidden") c.model.gru_hidden = int(parse_int(key, value));
  else if (key == "model.n_heads") c.model.n_heads = int(parse_int(key, value));
  else if (key == "model.d_ff") c.model.d_ff = int(parse_int(key, value));
  else if (key == "model.n_blocks") c.model.n_blocks = int(parse_int(key, value));
  else if (key == "model.positional_encoding") c.model.positional_encoding = parse_bool(key, value);
  else if (key == "model.use_bigru") c.model.use_bigru = parse_bool(key, value);
  else if (key == "train.max_epochs") c.train.max_epochs = int(parse_int(key, value));
  else if (key == "train.batch_size") c.train.batch_size = int(parse_int(key, value));
  else if (key == "train.lr0") c.train.lr0 = parse_double(key, value);
  else if (key == "train.lr_decay_factor") c.train.lr_decay_factor = parse_double(key, value);
  else if (key == "train.lr_milestones") {
    c.train.lr_milestones.clear();
    for (const std::string& m : detail::split_list(value))
      c.train.lr_milestones.push_back(int(parse_int(key, m)));
  } else if (key == "train.clip_threshold") c.train.clip_threshold = parse_double(key, value);
  else if (key == "train.seed") c.train.seed = uint64_t(parse_int(key, value));
  else if (key == "train.train_fraction") c.train.split.train_fraction = parse_double(key, value);
  else if (key == "train.stratified") c.train.split.stratified = parse_bool(key, value);
  else if (key == "train.early_stop_patience") c.train.early_stop_patience = int(parse_int(key, value));
  else if (key == "train.early_stop_min_delta") c.train.early_stop_min_delta = parse_double(key, value);
  else if (key == "bayes.enabled") c.bayes.enabled = parse_bool(key, value);
  else if (key == "bayes.kl_weight") c.bayes.kl_weight = parse_double(key, value);
  else if (key == "bayes.mc_samples") c.bayes.mc_samples = int(parse_int(key, value));
  else if (key == "bayes.prior_sigma") c.bayes.prior_sigma = parse_double(key, value);
  else if (key == "output.dir") c.out_dir = value;
  else throw ConfigError("unknown key \"" + key + "\"");
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  RunConfig c;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    apply_config_kv(c, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
  return c;
}

// The fully resolved configuration as a flat map; writing these lines back
// to a file reproduces the run exactly.
inline std::map<std::string, std::string> config_to_kv(const RunConfig& c) {
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
  };
  auto num = [](double d) {
    std::ostringstream ss;
    ss << std::setprecision(17) << d;
    return ss.str();
  };
  std::vector<std::string> milestones;
  for (int m : c.train.lr_milestones) milestones.push_back(std::to_string(m));
  return {
      {"dataset.path", c.dataset_path},
      {"dataset.text_column", c.text_column},
      {"dataset.label_column", c.label_column},
      {"dataset.labels_real", join(c.labels_real)},
      {"dataset.labels_fake", join(c.labels_fake)},
      {"pipeline.stoplist", c.stoplist},
      {"pipeline.max_vocab", std::to_string(c.pipeline.max_vocab)},
      {"pipeline.min_df", std::to_string(c.pipeline.min_df)},
      {"pipeline.stemming", c.pipeline.stemming_enabled ? "true" : "false"},
      {"model.seq_len", std::to_string(c.model.seq_len)},
      {"model.d_model", std::to_string(c.model.d_model)},
      {"model.gru_hidden", std::to_string(c.model.gru_hidden)},
      {"model.n_heads", std::to_string(c.model.n_heads)},
      {"model.d_ff", std::to_string(c.model.d_ff)},
      {"model.n_blocks", std::to_string(c.model.n_blocks)},
      {"model.positional_encoding", c.model.positional_encoding ? "true" : "false"},
      {"model.use_bigru", c.model.use_bigru ? "true" : "false"},
      {"train.max_epochs", std::to_string(c.train.max_epochs)},
      {"train.batch_size", std::to_string(c.train.batch_size)},
      {"train.lr0", num(c.train.lr0)},
      {"train.lr_decay_factor", num(c.train.lr_decay_factor)},
      {"train.lr_milestones", join(milestones)},
      {"train.clip_threshold", num(c.train.clip_threshold)},
      {"train.seed", std::to_string(c.train.seed)},
      {"train.train_fraction", num(c.train.split.train_fraction)},
      {"train.stratified", c.train.split.stratified ? "true" : "false"},
      {"train.early_stop_patience", std::to_string(c.train.early_stop_patience)},
      {"train.early_stop_min_delta", num(c.train.early_stop_min_delta)},
      {"bayes.enabled", c.bayes.enabled ? "true" : "false"},
      {"bayes.kl_weight", num(c.bayes.kl_weight)},
      {"bayes.mc_samples", std::to_string(c.bayes.mc_samples)},
      {"bayes.prior_sigma", num(c.bayes.prior_sigma)},
      {"output.dir", c.out_dir},
  };
}

}  // namespace bft
