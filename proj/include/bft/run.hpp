#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bft/config.hpp"
#include "bft/ingest.hpp"
#include "bft/model.hpp"
#include "bft/textpipe.hpp"
#include "bft/train.hpp"

namespace bft {

// Preprocess + vectorize a dataset against an already-fitted vocabulary.
inline std::vector<EncodedDoc> encode_dataset(const Dataset& ds, const PipelineConfig& pipeline,
                                              const Vocabulary& vocab) {
  std::vector<EncodedDoc> docs;
  docs.reserve(ds.records.size());
  for (const Record& r : ds.records) {
    std::vector<std::string> tokens = preprocess(r.text, pipeline);
    docs.push_back(encode_doc(tokens, vocab, tfidf_vector(tokens, vocab), int(r.label)));
  }
  return docs;
}

struct RunResult {
  FitResult fit;
  ConfusionMatrix confusion_train;
  ConfusionMatrix confusion_test;
  Vocabulary vocab;
  std::string checkpoint_path;
};

// The full training protocol: load, split, fit the vocabulary on the train
// split only, vectorize both sides, train, and write every artifact
// (curves.csv, confusion CSVs, checkpoints, run.json, split manifest) into
// cfg.out_dir.
inline RunResult run_training(RunConfig cfg, HybridModel* model_out = nullptr) {
  namespace fs = std::filesystem;
  if (cfg.dataset_path.empty()) throw ConfigError("dataset.path is required");
  cfg.model.validate();
  cfg.train.validate();
  cfg.resolve_stoplist();
  cfg.train.split.seed = cfg.train.seed;

  Dataset full = load_csv(cfg.dataset_path, cfg.text_column, cfg.label_column, cfg.label_map());
  auto [train_idx, test_idx] = split_indices(full, cfg.train.split);
  Dataset train_ds, test_ds;
  train_ds.source = full.source + "#train";
  test_ds.source = full.source + "#test";
  for (size_t i : train_idx) train_ds.records.push_back(full.records[i]);
  for (size_t i : test_idx) test_ds.records.push_back(full.records[i]);

  // Vocabulary and document frequencies come from the train split only.
  std::vector<std::vector<std::string>> train_tokens;
  train_tokens.reserve(train_ds.records.size());
  for (const Record& r : train_ds.records) train_tokens.push_back(preprocess(r.text, cfg.pipeline));
  Vocabulary vocab = build_vocab(train_tokens, cfg.pipeline);

  std::vector<EncodedDoc> train_docs = encode_dataset(train_ds, cfg.pipeline, vocab);
  std::vector<EncodedDoc> test_docs = encode_dataset(test_ds, cfg.pipeline, vocab);

  HybridModel model = make_model(cfg.model, int(vocab.size()), cfg.bayes.enabled, cfg.train.seed);

  fs::create_directories(cfg.out_dir);
  std::string final_path = (fs::path(cfg.out_dir) / "checkpoint.bft").string();
  std::string best_path = (fs::path(cfg.out_dir) / "checkpoint_best.bft").string();

  nlohmann::json extra = {{"dataset", {{"path", cfg.dataset_path},
                                       {"text_column", cfg.text_column},
                                       {"label_column", cfg.label_column},
                                       {"labels_real", cfg.labels_real},
                                       {"labels_fake", cfg.labels_fake}}}};

  auto save_hook = [&](const std::string& tag) {
    save_checkpoint(model, vocab, cfg.train, cfg.bayes, cfg.pipeline,
                    tag == "best" ? best_path : final_path, extra);
  };

  RunResult result;
  result.fit = fit(model, train_docs, test_docs, cfg.train, cfg.bayes, save_hook);
  result.vocab = vocab;
  result.checkpoint_path = final_path;

  auto [train_acc, cm_train] =
      evaluate(model, train_docs, cfg.bayes, seed_stream(cfg.train.seed, "eval-final-train"));
  auto [test_acc, cm_test] =
      evaluate(model, test_docs, cfg.bayes, seed_stream(cfg.train.seed, "eval-final-test"));
  result.confusion_train = cm_train;
  result.confusion_test = cm_test;

  {
    std::ofstream out(fs::path(cfg.out_dir) / "curves.csv");
    write_curves_csv(result.fit.history, out);
  }
  {
    std::ofstream out(fs::path(cfg.out_dir) / "confusion_train.csv");
    write_confusion_csv(cm_train, out);
  }
  {
    std::ofstream out(fs::path(cfg.out_dir) / "confusion_test.csv");
    write_confusion_csv(cm_test, out);
  }
  {
    std::ofstream out(fs::path(cfg.out_dir) / "split_indices.csv");
    out << "index,split\n";
    for (size_t i : train_idx) out << i << ",train\n";
    for (size_t i : test_idx) out << i << ",test\n";
  }
  {
    nlohmann::json manifest = {
        {"config", config_to_kv(cfg)},
        {"final", {{"epochs_run", result.fit.history.size()},
                   {"train_accuracy", train_acc},
                   {"test_accuracy", test_acc},
                   {"best_epoch", result.fit.best_epoch},
                   {"best_test_accuracy", result.fit.best_test_accuracy}}},
        {"vocab_size", vocab.size()}};
    std::ofstream out(fs::path(cfg.out_dir) / "run.json");
    out << manifest.dump(2) << "\n";
  }
  {
    std::ofstream out(fs::path(cfg.out_dir) / "vocab.tsv");
    save_vocab(vocab, out);
  }

  if (model_out) *model_out = std::move(model);
  return result;
}

}  // namespace bft
