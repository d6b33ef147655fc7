#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bft/bayes.hpp"
#include "bft/ingest.hpp"
#include "bft/model.hpp"
#include "bft/prng.hpp"
#include "bft/tensor.hpp"
#include "bft/textpipe.hpp"

namespace bft {

struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int max_epochs = 200;
  int batch_size = 256;
  double lr0 = 0.001;
  double lr_decay_factor = 0.1;
  std::vector<int> lr_milestones = {150};
  double clip_threshold = 10.0;
  uint64_t seed = 0;
  SplitSpec split{0.7, 0, true};
  int early_stop_patience = 0;  // 0 = disabled
  double early_stop_min_delta = 0.0;

  void validate() const {
    if (max_epochs < 0 || batch_size <= 0 || lr0 <= 0.0 || lr_decay_factor <= 0.0 ||
        clip_threshold <= 0.0)
      throw std::invalid_argument("TrainConfig: values must be positive");
    for (size_t i = 0; i < lr_milestones.size(); ++i) {
      if (lr_milestones[i] >= max_epochs)
        throw std::invalid_argument("TrainConfig: milestone >= max_epochs");
      if (i > 0 && lr_milestones[i] <= lr_milestones[i - 1])
        throw std::invalid_argument("TrainConfig: milestones must be strictly increasing");
    }
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double lr = 0.0;
};

using History = std::vector<EpochRecord>;

struct ConfusionMatrix {
  // counts[true][predicted]
  std::array<std::array<size_t, 2>, 2> counts{{{0, 0}, {0, 0}}};

  size_t total() const {
    return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
  }
  double accuracy() const {
    size_t t = total();
    return t == 0 ? 0.0 : double(counts[0][0] + counts[1][1]) / double(t);
  }
};

// ---- optimizer ----------------------------------------------------------

// Global-L2-norm clipping over all gradients; returns the applied factor
// (1 when the norm is already within the threshold or exactly zero).
inline double clip_gradients(const std::vector<Parameter*>& params, double threshold) {
  double sq = 0.0;
  for (Parameter* p : params)
    for (double g : p->grad.data) sq += g * g;
  double norm = std::sqrt(sq);
  if (norm <= threshold || norm == 0.0) return 1.0;
  double factor = threshold / norm;
  for (Parameter* p : params)
    for (double& g : p->grad.data) g *= factor;
  return factor;
}

inline void adam_step(Parameter& p, double lr, const AdamHyper& h = {}) {
  p.step_count += 1;
  double t = double(p.step_count);
  double bc1 = 1.0 - std::pow(h.beta1, t);
  double bc2 = 1.0 - std::pow(h.beta2, t);
  for (size_t i = 0; i < p.value.data.size(); ++i) {
    double g = p.grad.data[i];
    p.adam_m.data[i] = h.beta1 * p.adam_m.data[i] + (1.0 - h.beta1) * g;
    p.adam_v.data[i] = h.beta2 * p.adam_v.data[i] + (1.0 - h.beta2) * g * g;
    double m_hat = p.adam_m.data[i] / bc1;
    double v_hat = p.adam_v.data[i] / bc2;
    p.value.data[i] -= lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
}

// lr0 * factor^(number of milestones <= epoch)
inline double lr_at(int epoch, const TrainConfig& cfg) {
  int decays = 0;
  for (int m : cfg.lr_milestones)
    if (m <= epoch) ++decays;
  return cfg.lr0 * std::pow(cfg.lr_decay_factor, decays);
}

// ---- loss over a batch --------------------------------------------------

// Mean cross-entropy over the batch, plus kappa*KL/M when the head is
// variational and bayes is enabled. `noise` supplies the per-batch weight
// draw (required shape: head.w); null means w = mu. `correct_out`
// accumulates argmax hits from the same forwards.
inline Tape::Var batch_loss(Tape& tape, HybridModel& m, const std::vector<EncodedDoc>& docs,
                            const std::vector<size_t>& batch, const BayesConfig& bc,
                            int batches_per_epoch, const Tensor2D* noise,
                            size_t* correct_out = nullptr) {
  if (batch.empty()) throw TrainError("empty batch");
  Tape::Var ce_sum;
  bool first = true;
  for (size_t idx : batch) {
    const EncodedDoc& doc = docs[idx];
    Tape::Var logits = forward_logits(tape, m, doc, m.head.variational ? noise : nullptr);
    if (correct_out) {
      const Tensor2D& lv = tape.value(logits);
      int pred = lv.at(0, 1) > lv.at(0, 0) ? 1 : 0;
      if (pred == doc.label) ++*correct_out;
    }
    Tape::Var ce = tape.cross_entropy(logits, doc.label);
    ce_sum = first ? ce : tape.add(ce_sum, ce);
    first = false;
  }
  Tape::Var ce_mean = tape.scale(ce_sum, 1.0 / double(batch.size()));
  if (m.head.variational && bc.enabled) {
    Tape::Var kl = kl_to_prior(tape, m.head.w, m.head.w_rho, PriorSpec{0.0, bc.prior_sigma});
    return elbo_loss(tape, ce_mean, kl, batches_per_epoch, bc.kl_weight);
  }
  return ce_mean;
}

struct EpochMetrics {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

// One pass over the training docs: seeded shuffle, batches of
// cfg.batch_size (last one smaller), forward/backward/clip/adam per batch.
inline EpochMetrics train_epoch(HybridModel& m, const std::vector<EncodedDoc>& docs,
                                const TrainConfig& cfg, const BayesConfig& bc, int epoch,
                                double lr, SplitMix64& noise_rng) {
  std::vector<size_t> order(docs.size());
  std::iota(order.begin(), order.end(), size_t(0));
  SplitMix64 shuffle_rng(seed_stream(cfg.seed, "shuffle", uint64_t(epoch)));
  detail::shuffle_indices(order, shuffle_rng);

  int n_batches = int((docs.size() + size_t(cfg.batch_size) - 1) / size_t(cfg.batch_size));
  std::vector<Parameter*> params = m.parameters();

  double loss_sum = 0.0;
  size_t correct = 0;
  for (int b = 0; b < n_batches; ++b) {
    size_t begin = size_t(b) * size_t(cfg.batch_size);
    size_t end = std::min(docs.size(), begin + size_t(cfg.batch_size));
    std::vector<size_t> batch(order.begin() + begin, order.begin() + end);

    Tensor2D noise;
    const Tensor2D* noise_ptr = nullptr;
    if (m.head.variational && bc.enabled) {
      noise = Tensor2D(m.head.w.rows(), m.head.w.cols());
      noise.fill_normal(noise_rng);
      noise_ptr = &noise;
    }

    m.zero_grads();
    Tape tape;
    Tape::Var loss = batch_loss(tape, m, docs, batch, bc, n_batches, noise_ptr, &correct);
    double loss_val = tape.value(loss).at(0, 0);
    if (!std::isfinite(loss_val))
      throw TrainError("NonFiniteLoss: epoch " + std::to_string(epoch) + " batch " +
                       std::to_string(b));
    loss_sum += loss_val * double(batch.size());
    tape.backward(loss);
    clip_gradients(params, cfg.clip_threshold);
    for (Parameter* p : params) adam_step(*p, lr);
  }
  return {loss_sum / double(docs.size()), double(correct) / double(docs.size())};
}

// Frozen-model evaluation; predictive_mean when the variational head is
// enabled, plain softmax otherwise. Argmax ties break toward class 0.
inline std::pair<double, ConfusionMatrix> evaluate(HybridModel& m,
                                                   const std::vector<EncodedDoc>& docs,
                                                   const BayesConfig& bc, uint64_t eval_seed = 0) {
  if (docs.empty()) throw TrainError("EmptyDataset: nothing to evaluate");
  ConfusionMatrix cm;
  for (size_t i = 0; i < docs.size(); ++i) {
    Tensor2D probs;
    if (m.head.variational && bc.enabled) {
      probs = predictive_mean(m, docs[i], bc.mc_samples, seed_stream(eval_seed, "eval-doc", i));
    } else {
      Tape tape;
      probs = softmax_probs(tape.value(forward_logits(tape, m, docs[i])));
    }
    int pred = probs.at(0, 1) > probs.at(0, 0) ? 1 : 0;
    cm.counts[size_t(docs[i].label)][size_t(pred)]++;
  }
  return {cm.accuracy(), cm};
}

struct FitResult {
  History history;
  int best_epoch = -1;
  double best_test_accuracy = 0.0;
};

// Full training protocol. `checkpoint_hook`, when set, is called with
// ("final") after the last epoch and with ("best") whenever test accuracy
// improves.
inline FitResult fit(HybridModel& m, const std::vector<EncodedDoc>& train_docs,
                     const std::vector<EncodedDoc>& test_docs, const TrainConfig& cfg,
                     const BayesConfig& bc,
                     const std::function<void(const std::string&)>& checkpoint_hook = {},
                     const std::function<void(const EpochRecord&)>& epoch_hook = {}) {
  cfg.validate();
  FitResult result;
  SplitMix64 noise_rng(seed_stream(cfg.seed, "noise"));
  int since_improve = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    double lr = lr_at(epoch, cfg);
    EpochMetrics metrics = train_epoch(m, train_docs, cfg, bc, epoch, lr, noise_rng);
    auto [train_acc, train_cm] = evaluate(m, train_docs, bc, seed_stream(cfg.seed, "eval-train", uint64_t(epoch)));
    auto [test_acc, test_cm] = evaluate(m, test_docs, bc, seed_stream(cfg.seed, "eval-test", uint64_t(epoch)));
    (void)train_cm;
    (void)test_cm;
    EpochRecord rec{epoch, metrics.mean_loss, train_acc, test_acc, lr};
    result.history.push_back(rec);
    if (epoch_hook) epoch_hook(rec);
    if (test_acc > result.best_test_accuracy + cfg.early_stop_min_delta || result.best_epoch < 0) {
      result.best_test_accuracy = test_acc;
      result.best_epoch = epoch;
      since_improve = 0;
      if (checkpoint_hook) checkpoint_hook("best");
    } else if (cfg.early_stop_patience > 0 && ++since_improve >= cfg.early_stop_patience) {
      break;
    }
  }
  if (checkpoint_hook) checkpoint_hook("final");
  return result;
}

// ---- exports ------------------------------------------------------------

inline void write_curves_csv(const History& history, std::ostream& out) {
  out << "epoch,train_loss,train_acc,test_acc,lr\n";
  out << std::fixed << std::setprecision(6);
  for (const EpochRecord& r : history)
    out << r.epoch << "," << r.train_loss << "," << r.train_accuracy << ","
        << r.test_accuracy << "," << r.lr << "\n";
}

inline void write_confusion_csv(const ConfusionMatrix& cm, std::ostream& out) {
  out << "true,predicted,count\n";
  for (int t = 0; t < 2; ++t)
    for (int p = 0; p < 2; ++p)
      out << label_name(Label(t)) << "," << label_name(Label(p)) << "," << cm.counts[t][p]
          << "\n";
}

// ---- checkpointing ------------------------------------------------------

// File layout: magic "BFT1", u32 metadata length + metadata JSON, then every
// parameter tensor in declaration order (u32 rows, u32 cols, row-major f64,
// all little-endian), then a CRC32 of everything before it.

namespace detail {

inline uint32_t crc32(const unsigned char* data, size_t len, uint32_t crc = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

struct ByteSink {
  std::string bytes;
  void put_u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes += char((v >> (8 * i)) & 0xFF);
  }
  void put_f64(double d) {
    uint64_t u;
    std::memcpy(&u, &d, 8);
    for (int i = 0; i < 8; ++i) bytes += char((u >> (8 * i)) & 0xFF);
  }
  void put_raw(const std::string& s) { bytes += s; }
};

struct ByteSource {
  const std::string& bytes;
  size_t pos = 0;
  explicit ByteSource(const std::string& b) : bytes(b) {}
  void need(size_t n) const {
    if (pos + n > bytes.size()) throw TrainError("CorruptChecksum: truncated checkpoint");
  }
  uint32_t get_u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t((unsigned char)bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  double get_f64() {
    need(8);
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= uint64_t((unsigned char)bytes[pos + i]) << (8 * i);
    pos += 8;
    double d;
    std::memcpy(&d, &u, 8);
    return d;
  }
  std::string get_raw(size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

inline nlohmann::json model_cfg_json(const ModelConfig& c) {
  return {{"seq_len", c.seq_len},   {"d_model", c.d_model},   {"gru_hidden", c.gru_hidden},
          {"n_heads", c.n_heads},   {"d_ff", c.d_ff},         {"n_blocks", c.n_blocks},
          {"n_classes", c.n_classes}, {"positional_encoding", c.positional_encoding},
          {"use_bigru", c.use_bigru}};
}

inline ModelConfig model_cfg_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.seq_len = j.at("seq_len");
  c.d_model = j.at("d_model");
  c.gru_hidden = j.at("gru_hidden");
  c.n_heads = j.at("n_heads");
  c.d_ff = j.at("d_ff");
  c.n_blocks = j.at("n_blocks");
  c.n_classes = j.at("n_classes");
  c.positional_encoding = j.at("positional_encoding");
  c.use_bigru = j.at("use_bigru");
  return c;
}

inline nlohmann::json train_cfg_json(const TrainConfig& c) {
  return {{"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},
          {"lr0", c.lr0},
          {"lr_decay_factor", c.lr_decay_factor},
          {"lr_milestones", c.lr_milestones},
          {"clip_threshold", c.clip_threshold},
          {"seed", c.seed},
          {"train_fraction", c.split.train_fraction},
          {"stratified", c.split.stratified},
          {"early_stop_patience", c.early_stop_patience},
          {"early_stop_min_delta", c.early_stop_min_delta}};
}

inline TrainConfig train_cfg_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.max_epochs = j.at("max_epochs");
  c.batch_size = j.at("batch_size");
  c.lr0 = j.at("lr0");
  c.lr_decay_factor = j.at("lr_decay_factor");
  c.lr_milestones = j.at("lr_milestones").get<std::vector<int>>();
  c.clip_threshold = j.at("clip_threshold");
  c.seed = j.at("seed");
  c.split.train_fraction = j.at("train_fraction");
  c.split.stratified = j.at("stratified");
  c.split.seed = c.seed;
  c.early_stop_patience = j.at("early_stop_patience");
  c.early_stop_min_delta = j.at("early_stop_min_delta");
  return c;
}

inline nlohmann::json bayes_cfg_json(const BayesConfig& c) {
  return {{"enabled", c.enabled},
          {"kl_weight", c.kl_weight},
          {"mc_samples", c.mc_samples},
          {"prior_sigma", c.prior_sigma}};
}

inline BayesConfig bayes_cfg_from_json(const nlohmann::json& j) {
  BayesConfig c;
  c.enabled = j.at("enabled");
  c.kl_weight = j.at("kl_weight");
  c.mc_samples = j.at("mc_samples");
  c.prior_sigma = j.at("prior_sigma");
  return c;
}

}  // namespace detail

struct Checkpoint {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  BayesConfig bayes_cfg;
  PipelineConfig pipeline_cfg;
  Vocabulary vocab;
  nlohmann::json extra;  // ingest columns, final metrics, anything the CLI adds
  HybridModel model;     // rebuilt on load
};

inline void save_checkpoint(HybridModel& m, const Vocabulary& vocab,
                            const TrainConfig& train_cfg, const BayesConfig& bayes_cfg,
                            const PipelineConfig& pipeline_cfg, const std::string& path,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  std::ostringstream vocab_text;
  save_vocab(vocab, vocab_text);
  std::string vt = vocab_text.str();

  nlohmann::json meta = {
      {"format_version", 1},
      {"model", detail::model_cfg_json(m.cfg)},
      {"train", detail::train_cfg_json(train_cfg)},
      {"bayes", detail::bayes_cfg_json(bayes_cfg)},
      {"variational_head", m.head.variational},
      {"pipeline",
       {{"stoplist", std::vector<std::string>(pipeline_cfg.stoplist.begin(),
                                              pipeline_cfg.stoplist.end())},
        {"max_vocab", pipeline_cfg.max_vocab},
        {"min_df", pipeline_cfg.min_df},
        {"stemming_enabled", pipeline_cfg.stemming_enabled}}},
      {"vocab", vt},
      {"vocab_crc32", detail::crc32((const unsigned char*)vt.data(), vt.size())},
      {"extra", extra}};
  std::string meta_str = meta.dump();

  detail::ByteSink sink;
  sink.put_raw("BFT1");
  sink.put_u32(uint32_t(meta_str.size()));
  sink.put_raw(meta_str);
  for (Parameter* p : m.parameters()) {
    sink.put_u32(uint32_t(p->rows()));
    sink.put_u32(uint32_t(p->cols()));
    for (double d : p->value.data) sink.put_f64(d);
  }
  uint32_t crc = detail::crc32((const unsigned char*)sink.bytes.data(), sink.bytes.size());
  sink.put_u32(crc);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainError("MissingFile: cannot write " + path);
  out.write(sink.bytes.data(), std::streamsize(sink.bytes.size()));
}

// Loads and rebuilds the model. When `expected` is given, its shape must
// match the stored configuration.
inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TrainError("MissingFile: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string bytes = buf.str();
  if (bytes.size() < 8 || bytes.compare(0, 4, "BFT1") != 0)
    throw TrainError("VersionMismatch: bad magic, not a BFT1 checkpoint: " + path);
  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= uint32_t((unsigned char)bytes[bytes.size() - 4 + i]) << (8 * i);
  uint32_t computed =
      detail::crc32((const unsigned char*)bytes.data(), bytes.size() - 4);
  if (stored_crc != computed) throw TrainError("CorruptChecksum: " + path);

  detail::ByteSource src(bytes);
  src.pos = 4;
  uint32_t meta_len = src.get_u32();
  nlohmann::json meta = nlohmann::json::parse(src.get_raw(meta_len));
  if (meta.at("format_version") != 1)
    throw TrainError("VersionMismatch: unsupported checkpoint format version");

  Checkpoint cp;
  cp.model_cfg = detail::model_cfg_from_json(meta.at("model"));
  cp.train_cfg = detail::train_cfg_from_json(meta.at("train"));
  cp.bayes_cfg = detail::bayes_cfg_from_json(meta.at("bayes"));
  cp.extra = meta.at("extra");
  const auto& pj = meta.at("pipeline");
  for (const auto& s : pj.at("stoplist")) cp.pipeline_cfg.stoplist.insert(s.get<std::string>());
  cp.pipeline_cfg.max_vocab = pj.at("max_vocab");
  cp.pipeline_cfg.min_df = pj.at("min_df");
  cp.pipeline_cfg.stemming_enabled = pj.at("stemming_enabled");
  std::istringstream vocab_in(meta.at("vocab").get<std::string>());
  cp.vocab = load_vocab(vocab_in);

  if (expected && !expected->same_shape_as(cp.model_cfg))
    throw TrainError("VersionMismatch: checkpoint model (seq_len=" +
                     std::to_string(cp.model_cfg.seq_len) + ", d_model=" +
                     std::to_string(cp.model_cfg.d_model) + ", H=" +
                     std::to_string(cp.model_cfg.gru_hidden) + ", heads=" +
                     std::to_string(cp.model_cfg.n_heads) + ", d_ff=" +
                     std::to_string(cp.model_cfg.d_ff) + ", blocks=" +
                     std::to_string(cp.model_cfg.n_blocks) + ") vs expected (seq_len=" +
                     std::to_string(expected->seq_len) + ", d_model=" +
                     std::to_string(expected->d_model) + ", H=" +
                     std::to_string(expected->gru_hidden) + ", heads=" +
                     std::to_string(expected->n_heads) + ", d_ff=" +
                     std::to_string(expected->d_ff) + ", blocks=" +
                     std::to_string(expected->n_blocks) + ")");

  cp.model = make_model(cp.model_cfg, int(cp.vocab.size()), meta.at("variational_head"),
                        cp.train_cfg.seed);
  for (Parameter* p : cp.model.parameters()) {
    uint32_t rows = src.get_u32();
    uint32_t cols = src.get_u32();
    if (int(rows) != p->rows() || int(cols) != p->cols())
      throw TrainError("VersionMismatch: tensor " + std::to_string(rows) + "x" +
                       std::to_string(cols) + " in file, model expects " +
                       p->value.shape_str());
    for (double& d : p->value.data) d = src.get_f64();
  }
  return cp;
}

}  // namespace bft
