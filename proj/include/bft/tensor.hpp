#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bft/prng.hpp"

namespace bft {

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error("ShapeMismatch: " + what) {}
};

struct NotOnTape : std::runtime_error {
  explicit NotOnTape(const std::string& what) : std::runtime_error("NotOnTape: " + what) {}
};

struct NonFiniteValue : std::runtime_error {
  explicit NonFiniteValue(const std::string& what) : std::runtime_error("NonFiniteValue: " + what) {}
};

// Dense row-major matrix of doubles. The only tensor rank in the library;
// sequences are handled as L x d matrices, scalars as 1 x 1.
struct Tensor2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor2D() = default;
  Tensor2D(int r, int c) : rows(r), cols(c), data(size_t(r) * c, 0.0) {}
  Tensor2D(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != size_t(r) * c) throw ShapeMismatch("Tensor2D data length != rows*cols");
  }

  static Tensor2D zeros(int r, int c) { return Tensor2D(r, c); }
  static Tensor2D full(int r, int c, double v) {
    Tensor2D t(r, c);
    for (double& x : t.data) x = v;
    return t;
  }
  static Tensor2D identity(int n) {
    Tensor2D t(n, n);
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  double& at(int r, int c) { return data[size_t(r) * cols + c]; }
  double at(int r, int c) const { return data[size_t(r) * cols + c]; }

  bool same_shape(const Tensor2D& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

  bool all_finite() const {
    for (double x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void fill_uniform(SplitMix64& rng, double a) {
    for (double& x : data) x = rng.next_uniform(a);
  }
  void fill_normal(SplitMix64& rng) {
    for (double& x : data) x = rng.next_normal();
  }
};

// Trainable tensor: value, gradient accumulator and Adam state. The unit of
// backprop and of optimizer steps.
struct Parameter {
  Tensor2D value;
  Tensor2D grad;
  Tensor2D adam_m;
  Tensor2D adam_v;
  long step_count = 0;

  Parameter() = default;
  explicit Parameter(Tensor2D v)
      : value(std::move(v)),
        grad(value.rows, value.cols),
        adam_m(value.rows, value.cols),
        adam_v(value.rows, value.cols) {}

  int rows() const { return value.rows; }
  int cols() const { return value.cols; }

  void zero_grad() {
    for (double& g : grad.data) g = 0.0;
  }
};

// Reverse-mode autodiff tape, define-by-run. Each primitive records its
// output value and a backward closure; backward() sweeps in exact reverse
// order. Node gradients live in buffers owned by the tape and are recomputed
// from scratch per backward() call; Parameter gradients ACCUMULATE across
// calls (backward twice without zero_grad doubles them).
class Tape {
 public:
  struct Var {
    int id = -1;
  };

  explicit Tape(bool checked = false) : checked_(checked) {}

  void set_checked(bool on) { checked_ = on; }

  // Leaf holding a constant; no gradient flows out of it.
  Var constant(Tensor2D v) { return push(std::move(v), {}); }

  // Leaf tied to a Parameter; backward() adds this node's gradient into
  // p.grad.
  Var leaf(Parameter& p) {
    Var v = push(p.value, {});
    nodes_[v.id].param = &p;
    return v;
  }

  const Tensor2D& value(Var v) const { return node(v).value; }
  const Tensor2D& grad(Var v) const { return node(v).grad; }
  size_t size() const { return nodes_.size(); }

  // ---- primitives -------------------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor2D& A = node(a).value;
    const Tensor2D& B = node(b).value;
    if (A.cols != B.rows)
      throw ShapeMismatch("matmul " + A.shape_str() + " * " + B.shape_str());
    Tensor2D out(A.rows, B.cols);
    mm_accum(A, B, out);
    return push(std::move(out), [this, a, b](const Tensor2D& g, Tape& t) {
      // dA = g * B^T ; dB = A^T * g
      const Tensor2D& A = t.node(a).value;
      const Tensor2D& B = t.node(b).value;
      if (t.wants_grad(a)) mm_nt_accum(g, B, t.node(a).grad);
      if (t.wants_grad(b)) mm_tn_accum(A, g, t.node(b).grad);
    });
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    const Tensor2D& A = node(a).value;
    const Tensor2D& B = node(b).value;
    if (A.cols != B.cols)
      throw ShapeMismatch("matmul_nt " + A.shape_str() + " * " + B.shape_str() + "^T");
    Tensor2D out(A.rows, B.rows);
    mm_nt_accum(A, B, out);
    return push(std::move(out), [this, a, b](const Tensor2D& g, Tape& t) {
      // dA = g * B ; dB = g^T * A
      const Tensor2D& A = t.node(a).value;
      const Tensor2D& B = t.node(b).value;
      if (t.wants_grad(a)) mm_accum(g, B, t.node(a).grad);
      if (t.wants_grad(b)) mm_tn_accum(g, A, t.node(b).grad);
    });
  }

  Var add(Var a, Var b) { return binary_ew(a, b, "add",
      [](double x, double y) { return x + y; },
      [](double, double, double g, double& dx, double& dy) { dx += g; dy += g; }); }

  Var sub(Var a, Var b) { return binary_ew(a, b, "sub",
      [](double x, double y) { return x - y; },
      [](double, double, double g, double& dx, double& dy) { dx += g; dy -= g; }); }

  Var mul(Var a, Var b) { return binary_ew(a, b, "mul",
      [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& dx, double& dy) { dx += g * y; dy += g * x; }); }

  // x (R x C) + bias (1 x C), broadcast over rows. The single broadcasting
  // form in the library.
  Var add_row_bias(Var x, Var bias) {
    const Tensor2D& X = node(x).value;
    const Tensor2D& B = node(bias).value;
    if (B.rows != 1 || B.cols != X.cols)
      throw ShapeMismatch("add_row_bias " + X.shape_str() + " + " + B.shape_str());
    Tensor2D out = X;
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out.at(r, c) += B.at(0, c);
    return push(std::move(out), [x, bias](const Tensor2D& g, Tape& t) {
      if (t.wants_grad(x)) {
        Tensor2D& dx = t.node(x).grad;
        for (size_t i = 0; i < g.data.size(); ++i) dx.data[i] += g.data[i];
      }
      if (t.wants_grad(bias)) {
        Tensor2D& db = t.node(bias).grad;
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) db.at(0, c) += g.at(r, c);
      }
    });
  }

  // x (R x C) with every column scaled by gain (1 x C); layer-norm affine.
  Var scale_cols(Var x, Var gain) {
    const Tensor2D& X = node(x).value;
    const Tensor2D& G = node(gain).value;
    if (G.rows != 1 || G.cols != X.cols)
      throw ShapeMismatch("scale_cols " + X.shape_str() + " . " + G.shape_str());
    Tensor2D out = X;
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out.at(r, c) *= G.at(0, c);
    return push(std::move(out), [x, gain](const Tensor2D& g, Tape& t) {
      const Tensor2D& X = t.node(x).value;
      const Tensor2D& G = t.node(gain).value;
      if (t.wants_grad(x)) {
        Tensor2D& dx = t.node(x).grad;
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) dx.at(r, c) += g.at(r, c) * G.at(0, c);
      }
      if (t.wants_grad(gain)) {
        Tensor2D& dg = t.node(gain).grad;
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) dg.at(0, c) += g.at(r, c) * X.at(r, c);
      }
    });
  }

  Var sigmoid(Var x) {
    return unary(x, [](double v) { return sigmoid_scalar(v); },
                 [](double, double y, double g) { return g * y * (1.0 - y); });
  }

  Var tanh_op(Var x) {
    return unary(x, [](double v) { return std::tanh(v); },
                 [](double, double y, double g) { return g * (1.0 - y * y); });
  }

  Var relu(Var x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double, double g) { return v > 0.0 ? g : 0.0; });
  }

  // ln(1 + e^x), computed without overflow for large |x|.
  Var softplus(Var x) {
    return unary(x, [](double v) { return softplus_scalar(v); },
                 [](double v, double, double g) { return g * sigmoid_scalar(v); });
  }

  Var log_op(Var x) {
    return unary(x, [](double v) { return std::log(v); },
                 [](double v, double, double g) { return g / v; });
  }

  Var square(Var x) {
    return unary(x, [](double v) { return v * v; },
                 [](double v, double, double g) { return 2.0 * g * v; });
  }

  Var scale(Var x, double c) {
    return unary(x, [c](double v) { return c * v; },
                 [c](double, double, double g) { return c * g; });
  }

  Var add_scalar(Var x, double c) {
    return unary(x, [c](double v) { return v + c; },
                 [](double, double, double g) { return g; });
  }

  // x + k, k a constant matrix with no gradient (positional encodings,
  // attention mask penalties).
  Var add_const(Var x, const Tensor2D& k) {
    const Tensor2D& X = node(x).value;
    if (!X.same_shape(k)) throw ShapeMismatch("add_const " + X.shape_str() + " + " + k.shape_str());
    Tensor2D out = X;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += k.data[i];
    return push(std::move(out), [x](const Tensor2D& g, Tape& t) {
      if (!t.wants_grad(x)) return;
      Tensor2D& dx = t.node(x).grad;
      for (size_t i = 0; i < g.data.size(); ++i) dx.data[i] += g.data[i];
    });
  }

  // x (hadamard) k, k constant (reparameterization noise).
  Var mul_const(Var x, const Tensor2D& k) {
    const Tensor2D& X = node(x).value;
    if (!X.same_shape(k)) throw ShapeMismatch("mul_const " + X.shape_str() + " . " + k.shape_str());
    Tensor2D out = X;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= k.data[i];
    Tensor2D kc = k;
    return push(std::move(out), [x, kc](const Tensor2D& g, Tape& t) {
      if (!t.wants_grad(x)) return;
      Tensor2D& dx = t.node(x).grad;
      for (size_t i = 0; i < g.data.size(); ++i) dx.data[i] += g.data[i] * kc.data[i];
    });
  }

  // Per-row softmax with max subtraction.
  Var softmax_rows(Var x) {
    const Tensor2D& X = node(x).value;
    Tensor2D out(X.rows, X.cols);
    for (int r = 0; r < X.rows; ++r) {
      double mx = X.at(r, 0);
      for (int c = 1; c < X.cols; ++c) mx = std::max(mx, X.at(r, c));
      double sum = 0.0;
      for (int c = 0; c < X.cols; ++c) {
        double e = std::exp(X.at(r, c) - mx);
        out.at(r, c) = e;
        sum += e;
      }
      for (int c = 0; c < X.cols; ++c) out.at(r, c) /= sum;
    }
    Var res = push(std::move(out), {});
    int out_id = res.id;
    nodes_[out_id].backward = [x, out_id](const Tensor2D& g, Tape& t) {
      if (!t.wants_grad(x)) return;
      const Tensor2D& Y = t.nodes_[out_id].value;
      Tensor2D& dx = t.node(x).grad;
      for (int r = 0; r < Y.rows; ++r) {
        double dot = 0.0;
        for (int c = 0; c < Y.cols; ++c) dot += g.at(r, c) * Y.at(r, c);
        for (int c = 0; c < Y.cols; ++c) dx.at(r, c) += Y.at(r, c) * (g.at(r, c) - dot);
      }
    };
    return res;
  }

  // Per-row mean/variance normalization (no affine; compose with scale_cols
  // + add_row_bias for the learned gain/bias).
  Var layer_norm_rows(Var x, double eps) {
    const Tensor2D& X = node(x).value;
    Tensor2D out(X.rows, X.cols);
    std::vector<double> inv_std(X.rows);
    for (int r = 0; r < X.rows; ++r) {
      double mean = 0.0;
      for (int c = 0; c < X.cols; ++c) mean += X.at(r, c);
      mean /= X.cols;
      double var = 0.0;
      for (int c = 0; c < X.cols; ++c) {
        double d = X.at(r, c) - mean;
        var += d * d;
      }
      var /= X.cols;
      double s = 1.0 / std::sqrt(var + eps);
      inv_std[r] = s;
      for (int c = 0; c < X.cols; ++c) out.at(r, c) = (X.at(r, c) - mean) * s;
    }
    Var res = push(std::move(out), {});
    int out_id = res.id;
    nodes_[out_id].backward = [x, out_id, inv_std](const Tensor2D& g, Tape& t) {
      if (!t.wants_grad(x)) return;
      const Tensor2D& Y = t.nodes_[out_id].value;
      Tensor2D& dx = t.node(x).grad;
      int C = Y.cols;
      for (int r = 0; r < Y.rows; ++r) {
        double gmean = 0.0, gymean = 0.0;
        for (int c = 0; c < C; ++c) {
          gmean += g.at(r, c);
          gymean += g.at(r, c) * Y.at(r, c);
        }
        gmean /= C;
        gymean /= C;
        for (int c = 0; c < C; ++c)
          dx.at(r, c) += inv_std[r] * (g.at(r, c) - gmean - Y.at(r, c) * gymean);
      }
    };
    return res;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
    int rows = node(parts[0]).value.rows;
    int cols = 0;
    for (Var p : parts) {
      if (node(p).value.rows != rows) throw ShapeMismatch("concat_cols row mismatch");
      cols += node(p).value.cols;
    }
    Tensor2D out(rows, cols);
    int off = 0;
    for (Var p : parts) {
      const Tensor2D& P = node(p).value;
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < P.cols; ++c) out.at(r, off + c) = P.at(r, c);
      off += P.cols;
    }
    std::vector<Var> ps = parts;
    return push(std::move(out), [ps](const Tensor2D& g, Tape& t) {
      int off = 0;
      for (Var p : ps) {
        Tensor2D& dp = t.node(p).grad;
        int pc = dp.cols;
        if (t.wants_grad(p))
          for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < pc; ++c) dp.at(r, c) += g.at(r, off + c);
        off += pc;
      }
    });
  }

  Var slice_cols(Var x, int start, int width) {
    const Tensor2D& X = node(x).value;
    if (start < 0 || width <= 0 || start + width > X.cols)
      throw ShapeMismatch("slice_cols out of range on " + X.shape_str());
    Tensor2D out(X.rows, width);
    for (int r = 0; r < X.rows; ++r)
      for (int c = 0; c < width; ++c) out.at(r, c) = X.at(r, start + c);
    return push(std::move(out), [x, start](const Tensor2D& g, Tape& t) {
      if (!t.wants_grad(x)) return;
      Tensor2D& dx = t.node(x).grad;
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) dx.at(r, start + c) += g.at(r, c);
    });
  }

  Var row(Var x, int r) {
    const Tensor2D& X = node(x).value;
    if (r < 0 || r >= X.rows) throw ShapeMismatch("row index out of range");
    Tensor2D out(1, X.cols);
    for (int c = 0; c < X.cols; ++c) out.at(0, c) = X.at(r, c);
    return push(std::move(out), [x, r](const Tensor2D& g, Tape& t) {
      if (!t.wants_grad(x)) return;
      Tensor2D& dx = t.node(x).grad;
      for (int c = 0; c < g.cols; ++c) dx.at(r, c) += g.at(0, c);
    });
  }

  // Stack 1 x C rows into an N x C matrix.
  Var stack_rows(const std::vector<Var>& rows_in) {
    if (rows_in.empty()) throw ShapeMismatch("stack_rows of nothing");
    int cols = node(rows_in[0]).value.cols;
    Tensor2D out(int(rows_in.size()), cols);
    for (size_t i = 0; i < rows_in.size(); ++i) {
      const Tensor2D& R = node(rows_in[i]).value;
      if (R.rows != 1 || R.cols != cols) throw ShapeMismatch("stack_rows needs 1x" + std::to_string(cols));
      for (int c = 0; c < cols; ++c) out.at(int(i), c) = R.at(0, c);
    }
    std::vector<Var> rs = rows_in;
    return push(std::move(out), [rs](const Tensor2D& g, Tape& t) {
      for (size_t i = 0; i < rs.size(); ++i) {
        if (!t.wants_grad(rs[i])) continue;
        Tensor2D& dr = t.node(rs[i]).grad;
        for (int c = 0; c < g.cols; ++c) dr.at(0, c) += g.at(int(i), c);
      }
    });
  }

  Var sum_all(Var x) {
    const Tensor2D& X = node(x).value;
    double s = 0.0;
    for (double v : X.data) s += v;
    Tensor2D out(1, 1);
    out.at(0, 0) = s;
    return push(std::move(out), [x](const Tensor2D& g, Tape& t) {
      if (!t.wants_grad(x)) return;
      Tensor2D& dx = t.node(x).grad;
      for (double& d : dx.data) d += g.at(0, 0);
    });
  }

  // Mean of rows whose mask entry is true -> 1 x C.
  Var mean_rows_masked(Var x, const std::vector<bool>& mask) {
    const Tensor2D& X = node(x).value;
    if (int(mask.size()) != X.rows) throw ShapeMismatch("mask length != rows");
    int count = 0;
    for (bool m : mask)
      if (m) ++count;
    if (count == 0) throw std::runtime_error("AllMasked: no unmasked row to pool");
    Tensor2D out(1, X.cols);
    for (int r = 0; r < X.rows; ++r)
      if (mask[r])
        for (int c = 0; c < X.cols; ++c) out.at(0, c) += X.at(r, c);
    for (int c = 0; c < X.cols; ++c) out.at(0, c) /= count;
    std::vector<bool> m = mask;
    return push(std::move(out), [x, m, count](const Tensor2D& g, Tape& t) {
      if (!t.wants_grad(x)) return;
      Tensor2D& dx = t.node(x).grad;
      for (int r = 0; r < dx.rows; ++r)
        if (m[r])
          for (int c = 0; c < g.cols; ++c) dx.at(r, c) += g.at(0, c) / count;
    });
  }

  // Embedding lookup: output row i = table[ids[i]] * weights[i]; ids[i] < 0
  // produce zero rows (OOV / padding).
  Var gather_rows_scaled(Var table, const std::vector<int>& ids, const std::vector<double>& weights) {
    const Tensor2D& T = node(table).value;
    if (ids.size() != weights.size()) throw ShapeMismatch("gather ids/weights length mismatch");
    Tensor2D out(int(ids.size()), T.cols);
    for (size_t i = 0; i < ids.size(); ++i) {
      int id = ids[i];
      if (id < 0) continue;
      if (id >= T.rows) throw ShapeMismatch("gather index out of table range");
      for (int c = 0; c < T.cols; ++c) out.at(int(i), c) = T.at(id, c) * weights[i];
    }
    std::vector<int> ids_c = ids;
    std::vector<double> w_c = weights;
    return push(std::move(out), [table, ids_c, w_c](const Tensor2D& g, Tape& t) {
      if (!t.wants_grad(table)) return;
      Tensor2D& dt = t.node(table).grad;
      for (size_t i = 0; i < ids_c.size(); ++i) {
        int id = ids_c[i];
        if (id < 0) continue;
        for (int c = 0; c < g.cols; ++c) dt.at(id, c) += g.at(int(i), c) * w_c[i];
      }
    });
  }

  // -ln softmax(logits)[label] in the log-sum-exp stable form; logits 1 x C.
  Var cross_entropy(Var logits, int label) {
    const Tensor2D& L = node(logits).value;
    if (L.rows != 1) throw ShapeMismatch("cross_entropy expects 1xC logits");
    if (label < 0 || label >= L.cols) throw ShapeMismatch("label out of range");
    double mx = L.at(0, 0);
    for (int c = 1; c < L.cols; ++c) mx = std::max(mx, L.at(0, c));
    double lse = 0.0;
    for (int c = 0; c < L.cols; ++c) lse += std::exp(L.at(0, c) - mx);
    lse = mx + std::log(lse);
    Tensor2D out(1, 1);
    out.at(0, 0) = lse - L.at(0, label);
    return push(std::move(out), [logits, label, mx, lse](const Tensor2D& g, Tape& t) {
      if (!t.wants_grad(logits)) return;
      (void)mx;
      const Tensor2D& L = t.node(logits).value;
      Tensor2D& dl = t.node(logits).grad;
      for (int c = 0; c < L.cols; ++c) {
        double p = std::exp(L.at(0, c) - lse);  // softmax
        dl.at(0, c) += g.at(0, 0) * (p - (c == label ? 1.0 : 0.0));
      }
    });
  }

  // ---- backward ---------------------------------------------------------

  // Populates gradients of every Parameter reachable from `loss` (1x1).
  // Node gradients are rebuilt from scratch; Parameter.grad accumulates.
  void backward(Var loss) {
    if (loss.id < 0 || loss.id >= int(nodes_.size()))
      throw NotOnTape("loss was not recorded on this tape");
    const Tensor2D& L = nodes_[loss.id].value;
    if (L.rows != 1 || L.cols != 1) throw ShapeMismatch("loss must be 1x1, got " + L.shape_str());

    for (Node& n : nodes_) {
      n.grad = Tensor2D(n.value.rows, n.value.cols);
      n.needs_grad = false;
    }
    nodes_[loss.id].grad.at(0, 0) = 1.0;
    // Anything below the loss (or recorded after it) receives no gradient.
    for (int i = 0; i <= loss.id; ++i) nodes_[i].needs_grad = true;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward) n.backward(n.grad, *this);
    }
    for (Node& n : nodes_) {
      if (!n.param) continue;
      for (size_t i = 0; i < n.grad.data.size(); ++i) n.param->grad.data[i] += n.grad.data[i];
    }
  }

 private:
  struct Node {
    Tensor2D value;
    Tensor2D grad;
    std::function<void(const Tensor2D&, Tape&)> backward;
    Parameter* param = nullptr;
    bool needs_grad = true;
  };

  std::vector<Node> nodes_;
  bool checked_;

  Node& node(Var v) {
    if (v.id < 0 || v.id >= int(nodes_.size())) throw NotOnTape("variable not on this tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id < 0 || v.id >= int(nodes_.size())) throw NotOnTape("variable not on this tape");
    return nodes_[v.id];
  }

  bool wants_grad(Var v) { return nodes_[v.id].needs_grad || nodes_[v.id].param; }

  Var push(Tensor2D value, std::function<void(const Tensor2D&, Tape&)> backward) {
    if (checked_ && !value.all_finite())
      throw NonFiniteValue("primitive produced NaN/Inf (node " + std::to_string(nodes_.size()) + ")");
    Node n;
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
  }

  template <typename Fwd, typename Bwd>
  Var unary(Var x, Fwd f, Bwd df) {
    const Tensor2D& X = node(x).value;
    Tensor2D out(X.rows, X.cols);
    for (size_t i = 0; i < X.data.size(); ++i) out.data[i] = f(X.data[i]);
    Var res = push(std::move(out), {});
    int out_id = res.id;
    nodes_[out_id].backward = [x, out_id, df](const Tensor2D& g, Tape& t) {
      if (!t.wants_grad(x)) return;
      const Tensor2D& X = t.node(x).value;
      const Tensor2D& Y = t.nodes_[out_id].value;
      Tensor2D& dx = t.node(x).grad;
      for (size_t i = 0; i < g.data.size(); ++i) dx.data[i] += df(X.data[i], Y.data[i], g.data[i]);
    };
    return res;
  }

  template <typename Fwd, typename Bwd>
  Var binary_ew(Var a, Var b, const char* name, Fwd f, Bwd df) {
    const Tensor2D& A = node(a).value;
    const Tensor2D& B = node(b).value;
    if (!A.same_shape(B))
      throw ShapeMismatch(std::string(name) + " " + A.shape_str() + " vs " + B.shape_str());
    Tensor2D out(A.rows, A.cols);
    for (size_t i = 0; i < A.data.size(); ++i) out.data[i] = f(A.data[i], B.data[i]);
    return push(std::move(out), [a, b, df](const Tensor2D& g, Tape& t) {
      const Tensor2D& A = t.node(a).value;
      const Tensor2D& B = t.node(b).value;
      Tensor2D& da = t.node(a).grad;
      Tensor2D& db = t.node(b).grad;
      for (size_t i = 0; i < g.data.size(); ++i)
        df(A.data[i], B.data[i], g.data[i], da.data[i], db.data[i]);
    });
  }

  static double sigmoid_scalar(double v) {
    if (v >= 0.0) {
      double e = std::exp(-v);
      return 1.0 / (1.0 + e);
    }
    double e = std::exp(v);
    return e / (1.0 + e);
  }
  static double softplus_scalar(double v) {
    if (v > 30.0) return v;
    return std::log1p(std::exp(v));
  }

  // out += A * B
  static void mm_accum(const Tensor2D& A, const Tensor2D& B, Tensor2D& out) {
    for (int i = 0; i < A.rows; ++i) {
      const double* arow = &A.data[size_t(i) * A.cols];
      double* orow = &out.data[size_t(i) * out.cols];
      for (int k = 0; k < A.cols; ++k) {
        double aik = arow[k];
        if (aik == 0.0) continue;
        const double* brow = &B.data[size_t(k) * B.cols];
        for (int j = 0; j < B.cols; ++j) orow[j] += aik * brow[j];
      }
    }
  }
  // out += A * B^T
  static void mm_nt_accum(const Tensor2D& A, const Tensor2D& B, Tensor2D& out) {
    for (int i = 0; i < A.rows; ++i) {
      const double* arow = &A.data[size_t(i) * A.cols];
      double* orow = &out.data[size_t(i) * out.cols];
      for (int j = 0; j < B.rows; ++j) {
        const double* brow = &B.data[size_t(j) * B.cols];
        double s = 0.0;
        for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
        orow[j] += s;
      }
    }
  }
  // out += A^T * B
  static void mm_tn_accum(const Tensor2D& A, const Tensor2D& B, Tensor2D& out) {
    for (int k = 0; k < A.rows; ++k) {
      const double* arow = &A.data[size_t(k) * A.cols];
      const double* brow = &B.data[size_t(k) * B.cols];
      for (int i = 0; i < A.cols; ++i) {
        double aki = arow[i];
        if (aki == 0.0) continue;
        double* orow = &out.data[size_t(i) * out.cols];
        for (int j = 0; j < B.cols; ++j) orow[j] += aki * brow[j];
      }
    }
  }
};

}  // namespace bft
