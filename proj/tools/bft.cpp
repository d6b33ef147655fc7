// Command-line front end: train / evaluate / predict / vectorize.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bft/bayes.hpp"
#include "bft/config.hpp"
#include "bft/run.hpp"
#include "bft/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 2;
constexpr int kExitNonFinite = 3;

struct GlobalOpts {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;  // key=value
  long long seed = -1;
};

bft::RunConfig resolve_config(const GlobalOpts& g) {
  bft::RunConfig cfg = g.config_path.empty() ? bft::RunConfig{} : bft::parse_config_file(g.config_path);
  for (const std::string& ov : g.overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos) throw bft::ConfigError("--set expects key=value, got \"" + ov + "\"");
    bft::apply_config_kv(cfg, bft::detail::trim(ov.substr(0, eq)),
                         bft::detail::trim(ov.substr(eq + 1)));
  }
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  if (g.seed >= 0) cfg.train.seed = uint64_t(g.seed);
  return cfg;
}

int cmd_train(const GlobalOpts& g) {
  bft::RunConfig cfg = resolve_config(g);
  try {
    bft::RunResult result = bft::run_training(cfg);
    const bft::EpochRecord& last = result.fit.history.empty() ? bft::EpochRecord{}
                                                              : result.fit.history.back();
    std::cout << "trained " << result.fit.history.size() << " epochs"
              << "  train_acc=" << last.train_accuracy << "  test_acc=" << last.test_accuracy
              << "\ncheckpoint: " << result.checkpoint_path << "\n";
    return kExitOk;
  } catch (const bft::TrainError& e) {
    std::cerr << e.what() << "\n";
    return std::string(e.what()).find("NonFiniteLoss") != std::string::npos ? kExitNonFinite
                                                                            : kExitError;
  }
}

void print_confusion(const bft::ConfusionMatrix& cm, std::ostream& out) {
  out << "              pred Real  pred Fake\n";
  for (int t = 0; t < 2; ++t) {
    out << "true " << (t == 0 ? "Real" : "Fake") << "    ";
    for (int p = 0; p < 2; ++p) out << "  " << std::setw(9) << cm.counts[t][p];
    out << "\n";
  }
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& dataset_path,
                 const GlobalOpts& g) {
  bft::Checkpoint cp = bft::load_checkpoint(checkpoint_path);

  std::string text_col = cp.extra.value("dataset", nlohmann::json::object()).value("text_column", "text");
  std::string label_col = cp.extra.value("dataset", nlohmann::json::object()).value("label_column", "type");
  bft::LabelMap label_map = bft::LabelMap::defaults();
  if (cp.extra.contains("dataset")) {
    label_map.entries.clear();
    for (const auto& s : cp.extra["dataset"].value("labels_real", std::vector<std::string>{"real", "true"}))
      label_map.entries[s] = bft::Label::Real;
    for (const auto& s : cp.extra["dataset"].value("labels_fake", std::vector<std::string>{"fake", "false"}))
      label_map.entries[s] = bft::Label::Fake;
  }

  bft::Dataset ds = bft::load_csv(dataset_path, text_col, label_col, label_map);
  std::vector<bft::EncodedDoc> docs = bft::encode_dataset(ds, cp.pipeline_cfg, cp.vocab);
  auto [acc, cm] = bft::evaluate(cp.model, docs, cp.bayes_cfg, cp.train_cfg.seed);

  std::cout << "accuracy: " << std::fixed << std::setprecision(6) << acc << "\n";
  print_confusion(cm, std::cout);

  std::string out_dir = g.out_dir.empty() ? "." : g.out_dir;
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "confusion_eval.csv");
  bft::write_confusion_csv(cm, out);
  return kExitOk;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& text,
                const std::string& file) {
  bft::Checkpoint cp = bft::load_checkpoint(checkpoint_path);

  std::vector<std::string> inputs;
  if (!text.empty()) inputs.push_back(text);
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw bft::IngestError("MissingFile: " + file);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) inputs.push_back(line);
  }
  if (inputs.empty()) {
    std::cerr << "predict: no input text (use --text or --file)\n";
    return kExitError;
  }

  for (const std::string& input : inputs) {
    std::vector<std::string> tokens = bft::preprocess(input, cp.pipeline_cfg);
    bft::TfIdfVector vec = bft::tfidf_vector(tokens, cp.vocab);
    if (vec.entries.empty()) {
      std::cerr << "predict: text is empty after preprocessing (all tokens stopped or "
                   "out of vocabulary)\n";
      return kExitError;
    }
    bft::EncodedDoc doc = bft::encode_doc(tokens, cp.vocab, vec);
    bft::Tensor2D probs;
    if (cp.model.head.variational && cp.bayes_cfg.enabled) {
      probs = bft::predictive_mean(cp.model, doc, cp.bayes_cfg.mc_samples, cp.train_cfg.seed);
    } else {
      bft::Tape tape;
      probs = bft::softmax_probs(tape.value(bft::forward_logits(tape, cp.model, doc)));
    }
    int pred = probs.at(0, 1) > probs.at(0, 0) ? 1 : 0;
    std::cout << bft::label_name(bft::Label(pred)) << "\t" << std::setprecision(6) << std::fixed
              << probs.at(0, pred) << "\n";
  }
  return kExitOk;
}

int cmd_vectorize(const GlobalOpts& g) {
  bft::RunConfig cfg = resolve_config(g);
  if (cfg.dataset_path.empty()) throw bft::ConfigError("dataset.path is required");
  cfg.resolve_stoplist();
  bft::Dataset ds = bft::load_csv(cfg.dataset_path, cfg.text_column, cfg.label_column,
                                  cfg.label_map());
  std::vector<std::vector<std::string>> corpus;
  for (const bft::Record& r : ds.records) corpus.push_back(bft::preprocess(r.text, cfg.pipeline));
  bft::Vocabulary vocab = bft::build_vocab(corpus, cfg.pipeline);
  std::vector<bft::TfIdfVector> rows = bft::transform_corpus(corpus, vocab);

  std::cout << "doc,index,token,weight\n" << std::setprecision(6) << std::fixed;
  for (size_t d = 0; d < rows.size(); ++d)
    for (const auto& [idx, w] : rows[d].entries)
      std::cout << d << "," << idx << "," << vocab.index_to_token[idx] << "," << w << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TF-IDF + BiGRU + transformer-encoder text classifier"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "flat key=value config file");
  app.add_option("--out-dir", g.out_dir, "output directory (overrides output.dir)");
  app.add_option("--seed", g.seed, "training seed (overrides train.seed)");
  app.add_option("--set", g.overrides, "config override key=value (repeatable)");

  CLI::App* train = app.add_subcommand("train", "train a model and write run artifacts");

  CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a CSV dataset");
  std::string eval_ckpt, eval_data;
  evaluate->add_option("checkpoint", eval_ckpt, "checkpoint file")->required();
  evaluate->add_option("dataset", eval_data, "CSV dataset")->required();

  CLI::App* predict = app.add_subcommand("predict", "classify raw text with a checkpoint");
  std::string pred_ckpt, pred_text, pred_file;
  predict->add_option("checkpoint", pred_ckpt, "checkpoint file")->required();
  predict->add_option("--text", pred_text, "text to classify");
  predict->add_option("--file", pred_file, "file with one document per line");

  CLI::App* vectorize = app.add_subcommand("vectorize", "dump TF-IDF vectors for inspection");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(g);
    if (evaluate->parsed()) return cmd_evaluate(eval_ckpt, eval_data, g);
    if (predict->parsed()) return cmd_predict(pred_ckpt, pred_text, pred_file);
    if (vectorize->parsed()) return cmd_vectorize(g);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
