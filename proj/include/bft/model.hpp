#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "bft/prng.hpp"
#include "bft/tensor.hpp"
#include "bft/textpipe.hpp"

namespace bft {

struct ModelConfig {
  int seq_len = 128;
  int d_model = 64;
  int gru_hidden = 32;
  int n_heads = 4;
  int d_ff = 128;
  int n_blocks = 2;
  int n_classes = 2;
  bool positional_encoding = true;
  bool use_bigru = true;  // when off, embeddings feed the encoder blocks directly

  void validate() const {
    if (seq_len <= 0 || d_model <= 0 || gru_hidden <= 0 || n_heads <= 0 || d_ff <= 0 ||
        n_blocks <= 0)
      throw std::invalid_argument("ModelConfig: all dimensions must be positive");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("HeadDivisibility: d_model=" + std::to_string(d_model) +
                                  " not divisible by n_heads=" + std::to_string(n_heads));
    if (d_model % 2 != 0)
      throw std::invalid_argument("OddDimension: d_model must be even for positional encoding");
    if (n_classes != 2) throw std::invalid_argument("ModelConfig: n_classes must be 2");
  }

  bool same_shape_as(const ModelConfig& o) const {
    return seq_len == o.seq_len && d_model == o.d_model && gru_hidden == o.gru_hidden &&
           n_heads == o.n_heads && d_ff == o.d_ff && n_blocks == o.n_blocks &&
           n_classes == o.n_classes;
  }
};

struct GruParams {
  Parameter W_z, W_r, W_h;  // d_in x H
  Parameter U_z, U_r, U_h;  // H x H
  Parameter b_z, b_r, b_h;  // 1 x H
};

struct AttnParams {
  Parameter W_q, W_k, W_v, W_o;  // d_model x d_model
};

struct EncoderBlockParams {
  AttnParams attn;
  Parameter ffn_w1, ffn_b1;  // d_model x d_ff, 1 x d_ff
  Parameter ffn_w2, ffn_b2;  // d_ff x d_model, 1 x d_model
  Parameter norm1_gain, norm1_bias, norm2_gain, norm2_bias;  // 1 x d_model
};

// Deterministic w, or a Gaussian posterior (mu, rho) over w when the
// variational variant is active; b is always deterministic.
struct ClassifierHead {
  Parameter w;      // d_model x 2 (the mean when variational)
  Parameter w_rho;  // d_model x 2, only used when variational
  Parameter b;      // 1 x 2
  bool variational = false;
};

// A document after preprocessing + vectorization, ready for the network:
// per-position vocabulary ids (-1 for OOV) and the matching TF-IDF weights.
struct EncodedDoc {
  std::vector<int> ids;
  std::vector<double> weights;
  int label = 0;

  size_t length() const { return ids.size(); }
};

inline EncodedDoc encode_doc(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                             const TfIdfVector& tfidf, int label = 0) {
  EncodedDoc doc;
  doc.label = label;
  doc.ids.reserve(tokens.size());
  doc.weights.reserve(tokens.size());
  for (const std::string& t : tokens) {
    int idx = vocab.index_of(t);
    doc.ids.push_back(idx);
    doc.weights.push_back(idx >= 0 ? tfidf.weight_at(idx) : 0.0);
  }
  return doc;
}

// TF-IDF-scaled embedding rows, truncated/padded to length L. Pads and OOV
// positions are zero rows; mask[i] is true for positions holding actual
// (possibly OOV) tokens, false on pads.
inline Tape::Var embed_sequence(Tape& tape, const EncodedDoc& doc, Parameter& table, int L,
                                std::vector<bool>& mask_out) {
  std::vector<int> ids(L, -1);
  std::vector<double> weights(L, 0.0);
  mask_out.assign(size_t(L), false);
  size_t n = std::min(doc.ids.size(), size_t(L));
  for (size_t i = 0; i < n; ++i) {
    ids[i] = doc.ids[i];
    weights[i] = doc.weights[i];
    mask_out[i] = true;
  }
  Tape::Var table_v = tape.leaf(table);
  return tape.gather_rows_scaled(table_v, ids, weights);
}

// Sinusoidal table: PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) =
// cos of the same argument.
inline Tensor2D positional_encoding(int L, int d_model) {
  if (d_model % 2 != 0) throw std::invalid_argument("OddDimension: d_model must be even");
  Tensor2D pe(L, d_model);
  for (int pos = 0; pos < L; ++pos) {
    for (int i = 0; i < d_model / 2; ++i) {
      double angle = double(pos) / std::pow(10000.0, double(2 * i) / double(d_model));
      pe.at(pos, 2 * i) = std::sin(angle);
      pe.at(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

// z = sigma(xW_z + hU_z + b_z); r = sigma(xW_r + hU_r + b_r);
// cand = tanh(xW_h + (r . h)U_h + b_h); h' = (1-z) . h + z . cand.
// With z -> 0 the previous state is carried unchanged.
inline Tape::Var gru_cell(Tape& tape, Tape::Var x_t, Tape::Var h_prev, GruParams& p) {
  auto lin = [&](Parameter& W, Parameter& U, Parameter& b) {
    return tape.add_row_bias(
        tape.add(tape.matmul(x_t, tape.leaf(W)), tape.matmul(h_prev, tape.leaf(U))), tape.leaf(b));
  };
  Tape::Var z = tape.sigmoid(lin(p.W_z, p.U_z, p.b_z));
  Tape::Var r = tape.sigmoid(lin(p.W_r, p.U_r, p.b_r));
  Tape::Var cand = tape.tanh_op(tape.add_row_bias(
      tape.add(tape.matmul(x_t, tape.leaf(p.W_h)),
               tape.matmul(tape.mul(r, h_prev), tape.leaf(p.U_h))),
      tape.leaf(p.b_h)));
  Tape::Var one_minus_z = tape.add_scalar(tape.scale(z, -1.0), 1.0);
  return tape.add(tape.mul(one_minus_z, h_prev), tape.mul(z, cand));
}

// Forward states (cols 0..H-1) and backward states (cols H..2H-1), both from
// zero initial state. Masked steps copy the previous state unchanged.
inline Tape::Var bigru(Tape& tape, Tape::Var seq, const std::vector<bool>& mask, GruParams& p_fwd,
                       GruParams& p_bwd, int hidden) {
  int L = tape.value(seq).rows;
  if (int(mask.size()) != L) throw ShapeMismatch("bigru mask length != seq rows");
  Tensor2D h0(1, hidden);

  std::vector<Tape::Var> fwd(L), bwd(L);
  Tape::Var h = tape.constant(h0);
  for (int t = 0; t < L; ++t) {
    if (mask[t]) h = gru_cell(tape, tape.row(seq, t), h, p_fwd);
    fwd[t] = h;
  }
  h = tape.constant(h0);
  for (int t = L - 1; t >= 0; --t) {
    if (mask[t]) h = gru_cell(tape, tape.row(seq, t), h, p_bwd);
    bwd[t] = h;
  }
  std::vector<Tape::Var> rows(L);
  for (int t = 0; t < L; ++t) rows[t] = tape.concat_cols({fwd[t], bwd[t]});
  return tape.stack_rows(rows);
}

// Scaled dot-product attention per head on d_model/h-wide slices, heads
// concatenated and projected by W_o. Masked key positions get a -1e9
// additive penalty before the softmax. When weights_out is non-null it
// receives the per-head attention weight matrices (L x L).
inline Tape::Var multi_head_attention(Tape& tape, Tape::Var seq, const std::vector<bool>& mask,
                                      AttnParams& p, int n_heads,
                                      std::vector<Tape::Var>* weights_out = nullptr) {
  const Tensor2D& S = tape.value(seq);
  int L = S.rows, d_model = S.cols;
  if (d_model % n_heads != 0) throw ShapeMismatch("HeadDivisibility: d_model % n_heads != 0");
  int d_k = d_model / n_heads;

  Tensor2D key_penalty(L, L);
  for (int q = 0; q < L; ++q)
    for (int k = 0; k < L; ++k)
      if (!mask[k]) key_penalty.at(q, k) = -1e9;

  Tape::Var Q = tape.matmul(seq, tape.leaf(p.W_q));
  Tape::Var K = tape.matmul(seq, tape.leaf(p.W_k));
  Tape::Var V = tape.matmul(seq, tape.leaf(p.W_v));

  std::vector<Tape::Var> heads(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    Tape::Var q = tape.slice_cols(Q, h * d_k, d_k);
    Tape::Var k = tape.slice_cols(K, h * d_k, d_k);
    Tape::Var v = tape.slice_cols(V, h * d_k, d_k);
    Tape::Var logits = tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(double(d_k)));
    Tape::Var weights = tape.softmax_rows(tape.add_const(logits, key_penalty));
    if (weights_out) weights_out->push_back(weights);
    heads[h] = tape.matmul(weights, v);
  }
  return tape.matmul(tape.concat_cols(heads), tape.leaf(p.W_o));
}

// Post-norm residual block: layer_norm(x + MHA(x)) then layer_norm(u + FFN(u)),
// FFN(x) = relu(x w1 + b1) w2 + b2, eps = 1e-5.
inline Tape::Var encoder_block(Tape& tape, Tape::Var seq, const std::vector<bool>& mask,
                               EncoderBlockParams& p, int n_heads,
                               std::vector<Tape::Var>* weights_out = nullptr) {
  constexpr double kEps = 1e-5;
  Tape::Var attn = multi_head_attention(tape, seq, mask, p.attn, n_heads, weights_out);
  Tape::Var u = tape.add_row_bias(
      tape.scale_cols(tape.layer_norm_rows(tape.add(seq, attn), kEps), tape.leaf(p.norm1_gain)),
      tape.leaf(p.norm1_bias));
  Tape::Var ffn = tape.add_row_bias(
      tape.matmul(tape.relu(tape.add_row_bias(tape.matmul(u, tape.leaf(p.ffn_w1)),
                                              tape.leaf(p.ffn_b1))),
                  tape.leaf(p.ffn_w2)),
      tape.leaf(p.ffn_b2));
  return tape.add_row_bias(
      tape.scale_cols(tape.layer_norm_rows(tape.add(u, ffn), kEps), tape.leaf(p.norm2_gain)),
      tape.leaf(p.norm2_bias));
}

// Mean-pool the unmasked rows, then the linear head. `w` is the head weight
// variable (deterministic leaf or a sampled variational weight).
inline Tape::Var classify(Tape& tape, Tape::Var seq, const std::vector<bool>& mask, Tape::Var w,
                          Tape::Var b) {
  Tape::Var pooled = tape.mean_rows_masked(seq, mask);
  return tape.add_row_bias(tape.matmul(pooled, w), b);
}

// ---- full model ---------------------------------------------------------

struct HybridModel {
  ModelConfig cfg;
  Parameter embedding;  // V x d_model
  GruParams gru_fwd, gru_bwd;
  Parameter proj_w, proj_b;  // 2H x d_model, 1 x d_model
  std::vector<EncoderBlockParams> blocks;
  ClassifierHead head;
  Tensor2D pe_table;  // seq_len x d_model, constant

  // Declaration order; also the checkpoint tensor order.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> ps;
    ps.push_back(&embedding);
    for (GruParams* g : {&gru_fwd, &gru_bwd})
      for (Parameter* p : {&g->W_z, &g->W_r, &g->W_h, &g->U_z, &g->U_r, &g->U_h, &g->b_z, &g->b_r,
                           &g->b_h})
        ps.push_back(p);
    ps.push_back(&proj_w);
    ps.push_back(&proj_b);
    for (EncoderBlockParams& b : blocks) {
      for (Parameter* p : {&b.attn.W_q, &b.attn.W_k, &b.attn.W_v, &b.attn.W_o, &b.ffn_w1,
                           &b.ffn_b1, &b.ffn_w2, &b.ffn_b2, &b.norm1_gain, &b.norm1_bias,
                           &b.norm2_gain, &b.norm2_bias})
        ps.push_back(p);
    }
    ps.push_back(&head.w);
    if (head.variational) ps.push_back(&head.w_rho);
    ps.push_back(&head.b);
    return ps;
  }

  void zero_grads() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  size_t vocab_size() const { return size_t(embedding.rows()); }
};

namespace detail {

// Glorot uniform; each parameter gets its own named stream so adding or
// removing a parameter does not shift any other initialization.
inline Parameter init_param(int rows, int cols, uint64_t seed, const std::string& name) {
  Tensor2D t(rows, cols);
  double a = std::sqrt(6.0 / double(rows + cols));
  SplitMix64 rng(seed_stream(seed, name));
  t.fill_uniform(rng, a);
  return Parameter(std::move(t));
}

// The embedding is a one-hot lookup, so its effective fan-in is 1 rather
// than the vocabulary size; scaling by the row count would shrink token
// vectors far below the positional encoding and drown the text signal.
inline Parameter init_embedding(int vocab_size, int d_model, uint64_t seed) {
  Tensor2D t(vocab_size, d_model);
  double a = std::sqrt(6.0 / double(1 + d_model));
  SplitMix64 rng(seed_stream(seed, "embedding"));
  t.fill_uniform(rng, a);
  return Parameter(std::move(t));
}

inline Parameter zeros_param(int rows, int cols) { return Parameter(Tensor2D(rows, cols)); }

inline Parameter const_param(int rows, int cols, double v) {
  return Parameter(Tensor2D::full(rows, cols, v));
}

inline GruParams init_gru(int d_in, int hidden, uint64_t seed, const std::string& prefix) {
  GruParams g;
  g.W_z = init_param(d_in, hidden, seed, prefix + ".W_z");
  g.W_r = init_param(d_in, hidden, seed, prefix + ".W_r");
  g.W_h = init_param(d_in, hidden, seed, prefix + ".W_h");
  g.U_z = init_param(hidden, hidden, seed, prefix + ".U_z");
  g.U_r = init_param(hidden, hidden, seed, prefix + ".U_r");
  g.U_h = init_param(hidden, hidden, seed, prefix + ".U_h");
  g.b_z = zeros_param(1, hidden);
  g.b_r = zeros_param(1, hidden);
  g.b_h = zeros_param(1, hidden);
  return g;
}

}  // namespace detail

// rho is initialized to a large negative constant so the posterior starts
// nearly collapsed on the mean; mu shares the deterministic w's stream, so
// the variational and deterministic variants start from identical means.
constexpr double kInitialRho = -5.0;

inline HybridModel make_model(const ModelConfig& cfg, int vocab_size, bool variational_head,
                              uint64_t seed) {
  cfg.validate();
  if (vocab_size <= 0) throw std::invalid_argument("make_model: empty vocabulary");
  HybridModel m;
  m.cfg = cfg;
  m.embedding = detail::init_embedding(vocab_size, cfg.d_model, seed);
  m.gru_fwd = detail::init_gru(cfg.d_model, cfg.gru_hidden, seed, "gru_fwd");
  m.gru_bwd = detail::init_gru(cfg.d_model, cfg.gru_hidden, seed, "gru_bwd");
  m.proj_w = detail::init_param(2 * cfg.gru_hidden, cfg.d_model, seed, "proj_w");
  m.proj_b = detail::zeros_param(1, cfg.d_model);
  m.blocks.resize(size_t(cfg.n_blocks));
  for (int i = 0; i < cfg.n_blocks; ++i) {
    std::string bp = "block" + std::to_string(i);
    EncoderBlockParams& b = m.blocks[i];
    b.attn.W_q = detail::init_param(cfg.d_model, cfg.d_model, seed, bp + ".W_q");
    b.attn.W_k = detail::init_param(cfg.d_model, cfg.d_model, seed, bp + ".W_k");
    b.attn.W_v = detail::init_param(cfg.d_model, cfg.d_model, seed, bp + ".W_v");
    b.attn.W_o = detail::init_param(cfg.d_model, cfg.d_model, seed, bp + ".W_o");
    b.ffn_w1 = detail::init_param(cfg.d_model, cfg.d_ff, seed, bp + ".ffn_w1");
    b.ffn_b1 = detail::zeros_param(1, cfg.d_ff);
    b.ffn_w2 = detail::init_param(cfg.d_ff, cfg.d_model, seed, bp + ".ffn_w2");
    b.ffn_b2 = detail::zeros_param(1, cfg.d_model);
    b.norm1_gain = detail::const_param(1, cfg.d_model, 1.0);
    b.norm1_bias = detail::zeros_param(1, cfg.d_model);
    b.norm2_gain = detail::const_param(1, cfg.d_model, 1.0);
    b.norm2_bias = detail::zeros_param(1, cfg.d_model);
  }
  m.head.w = detail::init_param(cfg.d_model, cfg.n_classes, seed, "head.w");
  m.head.b = detail::zeros_param(1, cfg.n_classes);
  m.head.variational = variational_head;
  if (variational_head)
    m.head.w_rho = detail::const_param(cfg.d_model, cfg.n_classes, kInitialRho);
  m.pe_table = positional_encoding(cfg.seq_len, cfg.d_model);
  return m;
}

// Forward pass to 1x2 logits. `padded_len` < 0 means "no extra padding":
// the sequence length is clamp(len, 1, seq_len), which gives bit-identical
// logits to the fully padded run (pads are masked out everywhere) at a
// fraction of the cost. `head_noise`, when non-null, supplies the standard
// normal draws for the variational head; null uses w = mu (or the
// deterministic w).
inline Tape::Var forward_logits(Tape& tape, HybridModel& m, const EncodedDoc& doc,
                                const Tensor2D* head_noise = nullptr, int padded_len = -1,
                                std::vector<Tape::Var>* attn_weights_out = nullptr) {
  int L = padded_len >= 0 ? padded_len
                          : int(std::max<size_t>(1, std::min(doc.ids.size(), size_t(m.cfg.seq_len))));
  if (L > m.cfg.seq_len) throw ShapeMismatch("padded_len exceeds seq_len");

  std::vector<bool> mask;
  Tape::Var seq = embed_sequence(tape, doc, m.embedding, L, mask);
  bool any_content = false;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i] && doc.ids[i] >= 0) any_content = true;
  if (!any_content) {
    // All-OOV/empty document: classify a single zero row so the head's bias
    // still produces a prediction.
    mask.assign(mask.size(), false);
    mask[0] = true;
  }

  if (m.cfg.positional_encoding) {
    Tensor2D pe(L, m.cfg.d_model);
    for (int p = 0; p < L; ++p)
      if (mask[p])
        for (int c = 0; c < m.cfg.d_model; ++c) pe.at(p, c) = m.pe_table.at(p, c);
    seq = tape.add_const(seq, pe);
  }

  if (m.cfg.use_bigru) {
    Tape::Var states = bigru(tape, seq, mask, m.gru_fwd, m.gru_bwd, m.cfg.gru_hidden);
    seq = tape.add_row_bias(tape.matmul(states, tape.leaf(m.proj_w)), tape.leaf(m.proj_b));
  }

  for (EncoderBlockParams& b : m.blocks)
    seq = encoder_block(tape, seq, mask, b, m.cfg.n_heads, attn_weights_out);

  Tape::Var w;
  if (m.head.variational) {
    Tape::Var mu = tape.leaf(m.head.w);
    if (head_noise) {
      Tape::Var sigma = tape.softplus(tape.leaf(m.head.w_rho));
      w = tape.add(mu, tape.mul_const(sigma, *head_noise));
    } else {
      w = mu;
    }
  } else {
    w = tape.leaf(m.head.w);
  }
  return classify(tape, seq, mask, w, tape.leaf(m.head.b));
}

inline Tensor2D softmax_probs(const Tensor2D& logits) {
  Tensor2D out(logits.rows, logits.cols);
  for (int r = 0; r < logits.rows; ++r) {
    double mx = logits.at(r, 0);
    for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, logits.at(r, c));
    double sum = 0.0;
    for (int c = 0; c < logits.cols; ++c) {
      out.at(r, c) = std::exp(logits.at(r, c) - mx);
      sum += out.at(r, c);
    }
    for (int c = 0; c < logits.cols; ++c) out.at(r, c) /= sum;
  }
  return out;
}

}  // namespace bft
