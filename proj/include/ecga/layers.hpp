#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ecga/autodiff.hpp"
#include "ecga/errors.hpp"
#include "ecga/rng.hpp"
#include "ecga/tensor.hpp"

namespace ecga {

// ---- parameter blocks ---------------------------------------------------

struct ConvParams {
  std::size_t kernel_size = 1;
  Tensor filters;  // [k x m x f]
  Tensor bias;     // [f]
};

struct GruDirection {
  Tensor w_update, u_update, b_update;  // z gate
  Tensor w_reset, u_reset, b_reset;     // r gate
  Tensor w_cand, u_cand, b_cand;        // candidate state
};

struct GruParams {
  std::size_t units = 1;  // per direction
  GruDirection fwd, bwd;
};

struct AttentionParams {
  Tensor proj;     // [2u x d_a]
  Tensor bias;     // [d_a]
  Tensor context;  // [d_a x 1]
};

struct HeadParams {
  Tensor weight;  // [2u x c]
  Tensor bias;    // [c]
};

// All trainable weights of one conv -> BiGRU -> attention -> softmax learner.
struct LearnerParams {
  ConvParams conv;
  GruParams gru;
  AttentionParams attn;
  HeadParams head;

  template <typename F>
  void for_each_tensor(F&& f) {
    f("conv.filters", conv.filters);
    f("conv.bias", conv.bias);
    const std::pair<const char*, GruDirection*> dirs[] = {{"gru.fwd", &gru.fwd},
                                                          {"gru.bwd", &gru.bwd}};
    for (auto [dir, p] : dirs) {
      std::string d(dir);
      f(d + ".w_update", p->w_update);
      f(d + ".u_update", p->u_update);
      f(d + ".b_update", p->b_update);
      f(d + ".w_reset", p->w_reset);
      f(d + ".u_reset", p->u_reset);
      f(d + ".b_reset", p->b_reset);
      f(d + ".w_cand", p->w_cand);
      f(d + ".u_cand", p->u_cand);
      f(d + ".b_cand", p->b_cand);
    }
    f("attn.proj", attn.proj);
    f("attn.bias", attn.bias);
    f("attn.context", attn.context);
    f("head.weight", head.weight);
    f("head.bias", head.bias);
  }

  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<LearnerParams*>(this)->for_each_tensor(
        [&](const std::string& n, Tensor& t) { f(n, static_cast<const Tensor&>(t)); });
  }
};

// ---- initialization -----------------------------------------------------

inline Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in,
                             std::size_t fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

inline ConvParams make_conv(std::size_t k, std::size_t m, std::size_t f, Rng& rng) {
  ConvParams p;
  p.kernel_size = k;
  p.filters = glorot_uniform({k, m, f}, k * m, f, rng);
  p.bias = Tensor({f});
  return p;
}

inline GruDirection make_gru_direction(std::size_t in, std::size_t u, Rng& rng) {
  GruDirection d;
  d.w_update = glorot_uniform({in, u}, in, u, rng);
  d.u_update = glorot_uniform({u, u}, u, u, rng);
  d.b_update = Tensor({u});
  d.w_reset = glorot_uniform({in, u}, in, u, rng);
  d.u_reset = glorot_uniform({u, u}, u, u, rng);
  d.b_reset = Tensor({u});
  d.w_cand = glorot_uniform({in, u}, in, u, rng);
  d.u_cand = glorot_uniform({u, u}, u, u, rng);
  d.b_cand = Tensor({u});
  return d;
}

inline GruParams make_gru(std::size_t in, std::size_t u, Rng& rng) {
  GruParams p;
  p.units = u;
  p.fwd = make_gru_direction(in, u, rng);
  p.bwd = make_gru_direction(in, u, rng);
  return p;
}

inline AttentionParams make_attention(std::size_t state_width, std::size_t d_a, Rng& rng) {
  AttentionParams p;
  p.proj = glorot_uniform({state_width, d_a}, state_width, d_a, rng);
  p.bias = Tensor({d_a});
  p.context = glorot_uniform({d_a, 1}, d_a, 1, rng);
  return p;
}

inline HeadParams make_head(std::size_t state_width, std::size_t classes, Rng& rng) {
  HeadParams p;
  p.weight = glorot_uniform({state_width, classes}, state_width, classes, rng);
  p.bias = Tensor({classes});
  return p;
}

inline LearnerParams make_learner(std::size_t k, std::size_t m, std::size_t f, std::size_t u,
                                  std::size_t d_a, std::size_t classes, Rng& rng) {
  LearnerParams p;
  p.conv = make_conv(k, m, f, rng);
  p.gru = make_gru(f, u, rng);
  p.attn = make_attention(2 * u, d_a, rng);
  p.head = make_head(2 * u, classes, rng);
  return p;
}

// ---- tape mirrors -------------------------------------------------------

struct GruDirectionVars {
  Var w_update, u_update, b_update;
  Var w_reset, u_reset, b_reset;
  Var w_cand, u_cand, b_cand;
};

struct LearnerVars {
  std::size_t kernel_size = 1;
  std::size_t units = 1;
  Var conv_filters, conv_bias;
  GruDirectionVars fwd, bwd;
  Var attn_proj, attn_bias, attn_context;
  Var head_weight, head_bias;
  std::vector<std::pair<std::string, Var>> named;  // lift order
};

// Put every parameter tensor of a learner onto the tape as leaves.
inline LearnerVars lift(GradTape& tape, const LearnerParams& p, bool as_params = true,
                        const std::string& prefix = {}) {
  LearnerVars v;
  v.kernel_size = p.conv.kernel_size;
  v.units = p.gru.units;
  std::vector<Var*> slots = {&v.conv_filters, &v.conv_bias,
                             &v.fwd.w_update, &v.fwd.u_update, &v.fwd.b_update,
                             &v.fwd.w_reset, &v.fwd.u_reset, &v.fwd.b_reset,
                             &v.fwd.w_cand, &v.fwd.u_cand, &v.fwd.b_cand,
                             &v.bwd.w_update, &v.bwd.u_update, &v.bwd.b_update,
                             &v.bwd.w_reset, &v.bwd.u_reset, &v.bwd.b_reset,
                             &v.bwd.w_cand, &v.bwd.u_cand, &v.bwd.b_cand,
                             &v.attn_proj, &v.attn_bias, &v.attn_context,
                             &v.head_weight, &v.head_bias};
  std::size_t slot = 0;
  p.for_each_tensor([&](const std::string& name, const Tensor& t) {
    Var var = tape.leaf(t, as_params, prefix + name);
    *slots[slot++] = var;
    v.named.emplace_back(prefix + name, var);
  });
  return v;
}

// ---- forward stages -----------------------------------------------------

// Rows of the embedding table for each token id; pad id 0 is the zero row.
inline Var embed_lookup(GradTape& tape, Var table, const std::vector<int>& token_ids) {
  if (token_ids.empty()) throw DimensionError("embed_lookup of empty sequence");
  return tape.gather_rows(table, token_ids);
}

// Valid k-gram convolution, stride 1, no pooling: output row j scores the
// j-th k-gram.  [n x m] -> [(n-k+1) x f].
inline Var conv_kgram(GradTape& tape, Var input, Var filters, Var bias, std::size_t k) {
  const Tensor& in = tape.value(input);
  const Tensor& filt = tape.value(filters);
  const Tensor& b = tape.value(bias);
  std::size_t n = in.rows(), m = in.cols();
  if (n < k) {
    throw DimensionError("conv_kgram: sequence length n=" + std::to_string(n) +
                         " shorter than kernel size k=" + std::to_string(k));
  }
  if (filt.ndim() != 3 || filt.shape()[0] != k || filt.shape()[1] != m) {
    throw DimensionError("conv_kgram filter shape " + filt.shape_str() +
                         " incompatible with input " + in.shape_str());
  }
  std::size_t f = filt.shape()[2];
  std::size_t rows = n - k + 1;
  Tensor out({rows, f});
  for (std::size_t j = 0; j < rows; ++j) {
    double* orow = out.data() + j * f;
    for (std::size_t o = 0; o < f; ++o) orow[o] = b[o];
    for (std::size_t a = 0; a < k; ++a) {
      const double* irow = in.data() + (j + a) * m;
      const double* frow = filt.data() + a * m * f;
      for (std::size_t bb = 0; bb < m; ++bb) {
        double x = irow[bb];
        const double* fr = frow + bb * f;
        for (std::size_t o = 0; o < f; ++o) orow[o] += x * fr[o];
      }
    }
  }
  return tape.append(std::move(out), [input, filters, bias, k](GradTape& t, const Tensor& g) {
    const Tensor& in = t.value(input);
    const Tensor& filt = t.value(filters);
    std::size_t n = in.rows(), m = in.cols(), f = filt.shape()[2];
    std::size_t rows = n - k + 1;
    Tensor gin({n, m});
    Tensor gfilt({k, m, f});
    Tensor gbias({f});
    for (std::size_t j = 0; j < rows; ++j) {
      const double* grow = g.data() + j * f;
      for (std::size_t o = 0; o < f; ++o) gbias[o] += grow[o];
      for (std::size_t a = 0; a < k; ++a) {
        const double* irow = in.data() + (j + a) * m;
        double* girow = gin.data() + (j + a) * m;
        const double* frow = filt.data() + a * m * f;
        double* gfrow = gfilt.data() + a * m * f;
        for (std::size_t bb = 0; bb < m; ++bb) {
          double x = irow[bb];
          const double* fr = frow + bb * f;
          double* gfr = gfrow + bb * f;
          double acc = 0.0;
          for (std::size_t o = 0; o < f; ++o) {
            acc += grow[o] * fr[o];
            gfr[o] += grow[o] * x;
          }
          girow[bb] += acc;
        }
      }
    }
    t.accumulate(input, gin);
    t.accumulate(filters, gfilt);
    t.accumulate(bias, gbias);
  });
}

namespace detail {

inline std::vector<Var> gru_direction(GradTape& tape, Var seq, const GruDirectionVars& p,
                                      std::size_t units, bool reverse) {
  const Tensor& S = tape.value(seq);
  std::size_t steps = S.rows();
  Var h = tape.leaf(Tensor({1, units}));  // zero initial state, not a parameter
  std::vector<Var> states(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    std::size_t t = reverse ? steps - 1 - s : s;
    Var x = tape.row(seq, t);
    Var z = tape.sigmoid(tape.add_row_bias(
        tape.add(tape.matmul(x, p.w_update), tape.matmul(h, p.u_update)), p.b_update));
    Var r = tape.sigmoid(tape.add_row_bias(
        tape.add(tape.matmul(x, p.w_reset), tape.matmul(h, p.u_reset)), p.b_reset));
    Var cand = tape.tanh(tape.add_row_bias(
        tape.add(tape.matmul(x, p.w_cand), tape.matmul(tape.mul(r, h), p.u_cand)), p.b_cand));
    // h_t = (1 - z) * h_{t-1} + z * cand
    h = tape.add(h, tape.mul(z, tape.sub(cand, h)));
    states[t] = h;
  }
  return states;
}

}  // namespace detail

// Bidirectional GRU from zero initial states; output row t is
// [forward h_t ; backward h_t].  [T x f] -> [T x 2u].
inline Var bigru_forward(GradTape& tape, Var seq, const LearnerVars& p) {
  const Tensor& S = tape.value(seq);
  if (S.ndim() != 2 || S.rows() < 1) {
    throw DimensionError("bigru_forward expects a non-empty [T x f] matrix, got " + S.shape_str());
  }
  auto fwd = detail::gru_direction(tape, seq, p.fwd, p.units, false);
  auto bwd = detail::gru_direction(tape, seq, p.bwd, p.units, true);
  std::vector<Var> rows(fwd.size());
  for (std::size_t t = 0; t < fwd.size(); ++t) rows[t] = tape.concat(fwd[t], bwd[t]);
  return tape.stack_rows(rows);
}

// Additive attention: e_j = v . tanh(W_a s_j + b_a), weights = softmax(e),
// alpha = sum_j weights_j s_j.  Returns (alpha [1 x 2u], weights [T x 1]).
inline std::pair<Var, Var> attention_pool(GradTape& tape, Var states, Var proj, Var bias,
                                          Var context) {
  const Tensor& S = tape.value(states);
  if (S.ndim() != 2 || S.rows() < 1) {
    throw DimensionError("attention_pool expects [T x 2u] states, got " + S.shape_str());
  }
  Var scores = tape.matmul(tape.tanh(tape.add_row_bias(tape.matmul(states, proj), bias)), context);
  Var weights = tape.softmax(scores);  // [T x 1]
  Var alpha = tape.matmul(tape.transpose(weights), states);
  return {alpha, weights};
}

// Softmax classification head.  [1 x 2u] -> [1 x c].
inline Var classify(GradTape& tape, Var alpha, Var weight, Var bias) {
  return tape.softmax(tape.add_row_bias(tape.matmul(alpha, weight), bias));
}

struct ForwardConfig {
  double dropout_rate = 0.0;
  bool conv_relu = true;  // nonlinearity after the conv stage
  bool training = false;
};

// Full single-learner pass: embed -> dropout -> conv -> dropout -> bigru ->
// dropout -> attention -> dropout -> classify.
inline Var learner_forward(GradTape& tape, const std::vector<int>& token_ids, Var table,
                           const LearnerVars& p, const ForwardConfig& cfg, Rng& rng) {
  Var x = embed_lookup(tape, table, token_ids);
  x = tape.dropout(x, cfg.dropout_rate, rng, cfg.training);
  x = conv_kgram(tape, x, p.conv_filters, p.conv_bias, p.kernel_size);
  if (cfg.conv_relu) x = tape.relu(x);
  x = tape.dropout(x, cfg.dropout_rate, rng, cfg.training);
  x = bigru_forward(tape, x, p);
  x = tape.dropout(x, cfg.dropout_rate, rng, cfg.training);
  Var alpha = attention_pool(tape, x, p.attn_proj, p.attn_bias, p.attn_context).first;
  alpha = tape.dropout(alpha, cfg.dropout_rate, rng, cfg.training);
  return classify(tape, alpha, p.head_weight, p.head_bias);
}

}  // namespace ecga
