#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ecga/errors.hpp"
#include "ecga/rng.hpp"
#include "ecga/tensor.hpp"

namespace ecga {

class GradTape;

// Handle to a value recorded on a tape.
struct Var {
  const GradTape* tape = nullptr;
  std::size_t idx = 0;
};

// Append-only record of primitive applications.  Forward ops push one node
// each; backward replays the sequence in reverse exactly once.  One training
// step owns one tape.
class GradTape {
 public:
  using BackFn = std::function<void(GradTape&, const Tensor&)>;

  Var leaf(Tensor value, bool is_param = false, std::string name = {}) {
    return push(std::move(value), nullptr, is_param, std::move(name));
  }

  // Record a custom primitive.  `back` receives the gradient of the node and
  // must accumulate into its operands.
  Var append(Tensor value, BackFn back) {
    return push(std::move(value), std::move(back), false, {});
  }

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  std::size_t node_count() const { return nodes_.size(); }

  // ---- primitive operations -------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.rows()) {
      throw DimensionError("matmul shape mismatch: " + A.shape_str() + " x " + B.shape_str());
    }
    Tensor C = matmul_raw(A, B);
    return append(std::move(C), [a, b](GradTape& t, const Tensor& g) {
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      t.accumulate(a, matmul_nt(g, B));   // g . B^T
      t.accumulate(b, matmul_tn(A, g));   // A^T . g
    });
  }

  Var add(Var a, Var b) { return binary(a, b, "add", [](double x, double y) { return x + y; },
      [a, b](GradTape& t, const Tensor& g) { t.accumulate(a, g); t.accumulate(b, g); }); }

  Var sub(Var a, Var b) { return binary(a, b, "sub", [](double x, double y) { return x - y; },
      [a, b](GradTape& t, const Tensor& g) {
        t.accumulate(a, g);
        Tensor ng = g;
        for (std::size_t i = 0; i < ng.size(); ++i) ng[i] = -ng[i];
        t.accumulate(b, ng);
      }); }

  Var mul(Var a, Var b) { return binary(a, b, "mul", [](double x, double y) { return x * y; },
      [a, b](GradTape& t, const Tensor& g) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        Tensor ga = g, gb = g;
        for (std::size_t i = 0; i < g.size(); ++i) { ga[i] = g[i] * B[i]; gb[i] = g[i] * A[i]; }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
      }); }

  Var scale(Var a, double s) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return append(std::move(out), [a, s](GradTape& t, const Tensor& g) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= s;
      t.accumulate(a, ga);
    });
  }

  // matrix [r x c] + bias [c] broadcast over rows; the only broadcast allowed.
  Var add_row_bias(Var m, Var bias) {
    const Tensor& M = value(m);
    const Tensor& B = value(bias);
    if (M.ndim() != 2 || B.size() != M.cols()) {
      throw DimensionError("row-bias shape mismatch: " + M.shape_str() + " + " + B.shape_str());
    }
    Tensor out = M;
    for (std::size_t r = 0; r < M.rows(); ++r)
      for (std::size_t c = 0; c < M.cols(); ++c) out.at(r, c) += B[c];
    return append(std::move(out), [m, bias](GradTape& t, const Tensor& g) {
      t.accumulate(m, g);
      Tensor gb({g.cols()});
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
      t.accumulate(bias, gb);
    });
  }

  Var sigmoid(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    std::size_t self = nodes_.size();
    return append(std::move(out), [a, self](GradTape& t, const Tensor& g) {
      const Tensor& y = t.nodes_[self].value;
      Tensor ga = g;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i] * (1.0 - y[i]);
      t.accumulate(a, ga);
    });
  }

  Var tanh(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    std::size_t self = nodes_.size();
    return append(std::move(out), [a, self](GradTape& t, const Tensor& g) {
      const Tensor& y = t.nodes_[self].value;
      Tensor ga = g;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (1.0 - y[i] * y[i]);
      t.accumulate(a, ga);
    });
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return append(std::move(out), [a](GradTape& t, const Tensor& g) {
      const Tensor& x = t.value(a);
      Tensor ga = g;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > 0.0 ? g[i] : 0.0;
      t.accumulate(a, ga);
    });
  }

  // Softmax over the whole (flat) tensor, max-subtracted for stability.
  Var softmax(Var a) {
    const Tensor& x = value(a);
    if (x.size() == 0) throw DimensionError("softmax of empty tensor");
    Tensor out = x;
    double mx = *std::max_element(out.flat().begin(), out.flat().end());
    double sum = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) { out[i] = std::exp(out[i] - mx); sum += out[i]; }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= sum;
    std::size_t self = nodes_.size();
    return append(std::move(out), [a, self](GradTape& t, const Tensor& g) {
      const Tensor& y = t.nodes_[self].value;
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
      Tensor ga = g;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = y[i] * (g[i] - dot);
      t.accumulate(a, ga);
    });
  }

  Var transpose(Var a) {
    const Tensor& A = value(a);
    if (A.ndim() != 2) throw DimensionError("transpose expects a matrix, got " + A.shape_str());
    Tensor out({A.cols(), A.rows()});
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < A.cols(); ++c) out.at(c, r) = A.at(r, c);
    return append(std::move(out), [a](GradTape& t, const Tensor& g) {
      Tensor ga({g.cols(), g.rows()});
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga.at(c, r) = g.at(r, c);
      t.accumulate(a, ga);
    });
  }

  // Row i of a matrix as a [1 x c] tensor.
  Var row(Var m, std::size_t i) {
    const Tensor& M = value(m);
    if (M.ndim() != 2 || i >= M.rows()) {
      throw DimensionError("row " + std::to_string(i) + " out of range for " + M.shape_str());
    }
    std::size_t c = M.cols();
    Tensor out({1, c});
    for (std::size_t j = 0; j < c; ++j) out[j] = M.at(i, j);
    return append(std::move(out), [m, i](GradTape& t, const Tensor& g) {
      const Tensor& M = t.value(m);
      Tensor gm({M.rows(), M.cols()});
      for (std::size_t j = 0; j < g.size(); ++j) gm.at(i, j) = g[j];
      t.accumulate(m, gm);
    });
  }

  // Stack T row vectors (each [1 x c] or [c]) into a [T x c] matrix.
  Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw DimensionError("stack_rows of zero rows");
    std::size_t c = value(rows[0]).size();
    Tensor out({rows.size(), c});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Tensor& v = value(rows[r]);
      if (v.size() != c) throw DimensionError("ragged stack_rows");
      for (std::size_t j = 0; j < c; ++j) out.at(r, j) = v[j];
    }
    return append(std::move(out), [rows](GradTape& t, const Tensor& g) {
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const Tensor& v = t.value(rows[r]);
        Tensor gr = v;
        for (std::size_t j = 0; j < g.cols(); ++j) gr[j] = g.at(r, j);
        t.accumulate(rows[r], gr);
      }
    });
  }

  // Concatenate two row vectors along their columns.
  Var concat(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    std::size_t ca = A.size(), cb = B.size();
    Tensor out({1, ca + cb});
    for (std::size_t i = 0; i < ca; ++i) out[i] = A[i];
    for (std::size_t i = 0; i < cb; ++i) out[ca + i] = B[i];
    return append(std::move(out), [a, b, ca, cb](GradTape& t, const Tensor& g) {
      Tensor ga = t.value(a), gb = t.value(b);
      for (std::size_t i = 0; i < ca; ++i) ga[i] = g[i];
      for (std::size_t i = 0; i < cb; ++i) gb[i] = g[ca + i];
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  // Scalar element at flat index i.
  Var pick(Var v, std::size_t i) {
    const Tensor& V = value(v);
    if (i >= V.size()) throw DimensionError("pick index out of range");
    return append(Tensor::scalar(V[i]), [v, i](GradTape& t, const Tensor& g) {
      const Tensor& V = t.value(v);
      Tensor gv(V.shape());
      gv[i] = g[0];
      t.accumulate(v, gv);
    });
  }

  Var sum(Var a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) s += A[i];
    return append(Tensor::scalar(s), [a](GradTape& t, const Tensor& g) {
      Tensor ga = t.value(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[0];
      t.accumulate(a, ga);
    });
  }

  // log(max(x, floor)); the clamped region has zero gradient.
  Var log_clamped(Var a, double floor = 1e-12) {
    const Tensor& A = value(a);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(out[i], floor));
    return append(std::move(out), [a, floor](GradTape& t, const Tensor& g) {
      const Tensor& x = t.value(a);
      Tensor ga = g;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > floor ? g[i] / x[i] : 0.0;
      t.accumulate(a, ga);
    });
  }

  // Mean of scalar nodes.
  Var mean_of(const std::vector<Var>& scalars) {
    if (scalars.empty()) throw DimensionError("mean of zero scalars");
    double s = 0.0;
    for (Var v : scalars) s += value(v)[0];
    double n = static_cast<double>(scalars.size());
    return append(Tensor::scalar(s / n), [scalars, n](GradTape& t, const Tensor& g) {
      Tensor gs = Tensor::scalar(g[0] / n);
      for (Var v : scalars) t.accumulate(v, gs);
    });
  }

  // Inverted dropout: survivors scaled by 1/(1-rate) at training time,
  // identity (same node, bit-identical) otherwise.
  Var dropout(Var a, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) {
      throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return a;
    const Tensor& A = value(a);
    double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(A.size());
    Tensor out = A;
    for (std::size_t i = 0; i < A.size(); ++i) {
      double m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
      (*mask)[i] = m;
      out[i] *= m;
    }
    return append(std::move(out), [a, mask](GradTape& t, const Tensor& g) {
      Tensor ga = g;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] *= (*mask)[i];
      t.accumulate(a, ga);
    });
  }

  // Gather rows of an embedding table (leaf) into an [n x m] matrix.
  Var gather_rows(Var table, const std::vector<int>& ids) {
    const Tensor& T = value(table);
    if (T.ndim() != 2) throw DimensionError("gather_rows expects a matrix");
    std::size_t m = T.cols();
    Tensor out({ids.size(), m});
    for (std::size_t r = 0; r < ids.size(); ++r) {
      int id = ids[r];
      if (id < 0 || static_cast<std::size_t>(id) >= T.rows()) {
        throw ContractError("token id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(T.rows()) + ")");
      }
      for (std::size_t j = 0; j < m; ++j) out.at(r, j) = T.at(static_cast<std::size_t>(id), j);
    }
    return append(std::move(out), [table, ids](GradTape& t, const Tensor& g) {
      const Tensor& T = t.value(table);
      Tensor gt({T.rows(), T.cols()});
      for (std::size_t r = 0; r < ids.size(); ++r)
        for (std::size_t j = 0; j < g.cols(); ++j)
          gt.at(static_cast<std::size_t>(ids[r]), j) += g.at(r, j);
      t.accumulate(table, gt);
    });
  }

  // ---- reverse pass ----------------------------------------------------

  void backward(Var loss) {
    if (loss.tape != this || loss.idx >= nodes_.size()) {
      throw ContractError("backward: loss was not produced on this tape");
    }
    if (nodes_[loss.idx].value.size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " +
                          nodes_[loss.idx].value.shape_str());
    }
    grads_.assign(nodes_.size(), Tensor{});
    has_grad_.assign(nodes_.size(), 0);
    grads_[loss.idx] = Tensor::scalar(1.0);
    has_grad_[loss.idx] = 1;
    for (std::size_t i = loss.idx + 1; i-- > 0;) {
      if (!has_grad_[i] || !nodes_[i].back) continue;
      nodes_[i].back(*this, grads_[i]);
    }
  }

  bool has_grad(Var v) const {
    return v.tape == this && v.idx < has_grad_.size() && has_grad_[v.idx];
  }

  // Gradient of the last backward() loss w.r.t. node v (zeros if unreached).
  Tensor grad(Var v) const {
    if (has_grad(v)) return grads_[v.idx];
    Tensor z = value(v);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = 0.0;
    return z;
  }

  void accumulate(Var v, const Tensor& g) {
    std::size_t i = check(v);
    if (!has_grad_[i]) {
      grads_[i] = g;
      has_grad_[i] = 1;
      return;
    }
    Tensor& acc = grads_[i];
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
  }

  // ---- plain helpers (no tape) ----------------------------------------

  static Tensor matmul_raw(const Tensor& A, const Tensor& B) {
    std::size_t p = A.rows(), q = A.cols(), r = B.cols();
    Tensor C({p, r});
    for (std::size_t i = 0; i < p; ++i) {
      const double* arow = A.data() + i * q;
      double* crow = C.data() + i * r;
      for (std::size_t k = 0; k < q; ++k) {
        double a = arow[k];
        const double* brow = B.data() + k * r;
        for (std::size_t j = 0; j < r; ++j) crow[j] += a * brow[j];
      }
    }
    return C;
  }

 private:
  struct Node {
    Tensor value;
    BackFn back;
    bool is_param = false;
    std::string name;
  };

  // A . B^T
  static Tensor matmul_nt(const Tensor& A, const Tensor& B) {
    std::size_t p = A.rows(), q = A.cols(), r = B.rows();
    Tensor C({p, r});
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < r; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < q; ++k) s += A.at(i, k) * B.at(j, k);
        C.at(i, j) = s;
      }
    return C;
  }

  // A^T . B
  static Tensor matmul_tn(const Tensor& A, const Tensor& B) {
    std::size_t p = A.cols(), q = A.rows(), r = B.cols();
    Tensor C({p, r});
    for (std::size_t k = 0; k < q; ++k)
      for (std::size_t i = 0; i < p; ++i) {
        double a = A.at(k, i);
        for (std::size_t j = 0; j < r; ++j) C.at(i, j) += a * B.at(k, j);
      }
    return C;
  }

  template <typename F>
  Var binary(Var a, Var b, const char* op, F f, BackFn back) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) {
      throw DimensionError(std::string(op) + " shape mismatch: " + A.shape_str() +
                           " vs " + B.shape_str());
    }
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i], B[i]);
    return append(std::move(out), std::move(back));
  }

  Var push(Tensor value, BackFn back, bool is_param, std::string name) {
    nodes_.push_back(Node{std::move(value), std::move(back), is_param, std::move(name)});
    return Var{this, nodes_.size() - 1};
  }

  std::size_t check(Var v) const {
    if (v.tape != this || v.idx >= nodes_.size()) {
      throw ContractError("variable does not belong to this tape");
    }
    return v.idx;
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> has_grad_;
};

}  // namespace ecga
