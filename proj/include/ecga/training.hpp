#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "ecga/autodiff.hpp"
#include "ecga/ensemble.hpp"
#include "ecga/errors.hpp"
#include "ecga/rng.hpp"
#include "ecga/tensor.hpp"

namespace ecga {

// ---- Adam ---------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers, zero-initialized; t counts completed steps.
class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::size_t step_count() const { return t_; }

  // p <- p - lr * m_hat / (sqrt(v_hat) + eps), with bias correction.
  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) {
      throw ContractError("adam_step: " + std::to_string(params.size()) + " params vs " +
                          std::to_string(grads.size()) + " grads");
    }
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    if (m_.size() != params.size()) throw ContractError("adam_step: parameter count changed");
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      if (!p.same_shape(g)) {
        throw ContractError("adam_step: gradient shape " + g.shape_str() +
                            " does not match parameter " + p.shape_str());
      }
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        double m_hat = m[j] / bc1;
        double v_hat = v[j] / bc2;
        p[j] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                      AdamState& state) {
  state.step(params, grads);
}

// ---- metrics ------------------------------------------------------------

struct MetricsReport {
  std::size_t classes = 0;
  std::vector<std::size_t> confusion;  // [true * classes + predicted]
  double accuracy = 0.0;
  double error_rate = 0.0;
  std::vector<double> precision, recall, f1;
  double macro_f1 = 0.0;
  double positive_f1 = 0.0;  // F1 of class index 1

  std::size_t count(std::size_t truth, std::size_t pred) const {
    return confusion[truth * classes + pred];
  }
};

inline MetricsReport metrics_from_confusion(std::vector<std::size_t> confusion,
                                            std::size_t classes) {
  MetricsReport r;
  r.classes = classes;
  r.confusion = std::move(confusion);
  std::size_t total = 0, correct = 0;
  for (std::size_t t = 0; t < classes; ++t)
    for (std::size_t p = 0; p < classes; ++p) {
      total += r.count(t, p);
      if (t == p) correct += r.count(t, p);
    }
  r.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  r.error_rate = 1.0 - r.accuracy;
  r.precision.resize(classes);
  r.recall.resize(classes);
  r.f1.resize(classes);
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t tp = r.count(c, c), pred = 0, truth = 0;
    for (std::size_t i = 0; i < classes; ++i) {
      pred += r.count(i, c);
      truth += r.count(c, i);
    }
    r.precision[c] = pred ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
    r.recall[c] = truth ? static_cast<double>(tp) / static_cast<double>(truth) : 0.0;
    double pr = r.precision[c] + r.recall[c];
    r.f1[c] = pr > 0.0 ? 2.0 * r.precision[c] * r.recall[c] / pr : 0.0;
    f1_sum += r.f1[c];
  }
  r.macro_f1 = f1_sum / static_cast<double>(classes);
  r.positive_f1 = classes > 1 ? r.f1[1] : r.f1[0];
  return r;
}

inline std::size_t argmax_lowest(const Tensor& probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;  // strict: ties keep the lower index
  return best;
}

inline MetricsReport evaluate(const EnsembleModel& model, const EncodedBatch& data) {
  std::vector<std::size_t> confusion(model.classes * model.classes, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor probs = ensemble_predict(model, data.ids[i]);
    std::size_t pred = argmax_lowest(probs);
    confusion[static_cast<std::size_t>(data.labels[i]) * model.classes + pred] += 1;
  }
  return metrics_from_confusion(std::move(confusion), model.classes);
}

// ---- k-fold cross validation -------------------------------------------

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Disjoint exhaustive folds with sizes differing by at most one.  When
// labels are given the split is stratified: per-class counts per fold also
// differ by at most one.
inline std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed,
                                     const std::vector<int>* labels = nullptr) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2, got " + std::to_string(k));
  if (n < k) {
    throw ConfigError("k-fold needs at least k examples: N=" + std::to_string(n) +
                      ", k=" + std::to_string(k));
  }
  if (labels && labels->size() != n) throw ConfigError("k-fold labels length mismatch");
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> groups;
  if (labels) {
    int max_label = *std::max_element(labels->begin(), labels->end());
    groups.resize(static_cast<std::size_t>(max_label) + 1);
    for (std::size_t i = 0; i < n; ++i)
      groups[static_cast<std::size_t>((*labels)[i])].push_back(i);
  } else {
    groups.resize(1);
    groups[0].resize(n);
    std::iota(groups[0].begin(), groups[0].end(), 0);
  }
  std::vector<std::vector<std::size_t>> fold_members(k);
  std::size_t cursor = 0;
  for (auto& g : groups) {
    rng.shuffle(g);
    for (std::size_t idx : g) fold_members[cursor++ % k].push_back(idx);
  }
  std::vector<Fold> folds(k);
  for (std::size_t f = 0; f < k; ++f) {
    folds[f].validation = fold_members[f];
    for (std::size_t o = 0; o < k; ++o) {
      if (o == f) continue;
      folds[f].train.insert(folds[f].train.end(), fold_members[o].begin(),
                            fold_members[o].end());
    }
  }
  return folds;
}

inline EncodedBatch subset(const EncodedBatch& data, const std::vector<std::size_t>& indices) {
  EncodedBatch out;
  out.pad_length = data.pad_length;
  out.ids.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    out.ids.push_back(data.ids[i]);
    out.labels.push_back(data.labels[i]);
  }
  return out;
}

// ---- training loop ------------------------------------------------------

struct TrainOptions {
  AdamConfig adam;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  double dropout = 0.3;
  bool conv_relu = true;
  TrainingMode mode = TrainingMode::joint;
  std::uint64_t seed = 0;
  bool select_best_epoch = true;  // restore params from the best validation epoch
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainTrace {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 1-based; 0 when no epochs ran
};

// Shuffled mini-batch epochs with dropout active; deterministic per seed.
// If a validation set is given, parameters from the best-accuracy epoch are
// kept (when select_best_epoch is set).
inline TrainTrace train(EnsembleModel& model, const EncodedBatch& train_set,
                        const EncodedBatch* val_set, const TrainOptions& opt) {
  if (train_set.size() == 0) throw ConfigError("training set is empty");
  TrainTrace trace;
  std::vector<Tensor*> params;
  model.for_each_param([&](const std::string&, Tensor& t) { params.push_back(&t); });
  AdamState adam(opt.adam);
  Rng rng(opt.seed);
  ForwardConfig cfg{opt.dropout, opt.conv_relu, true};
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double best_acc = -1.0;
  std::vector<Tensor> best_params;
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      std::size_t stop = std::min(order.size(), start + opt.batch_size);
      EncodedBatch batch;
      batch.pad_length = train_set.pad_length;
      for (std::size_t i = start; i < stop; ++i) {
        batch.ids.push_back(train_set.ids[order[i]]);
        batch.labels.push_back(train_set.labels[order[i]]);
      }
      GradTape tape;
      EnsembleVars vars = lift_ensemble(tape, model);
      Var loss = ensemble_loss(tape, vars, batch, model.classes, cfg, rng, opt.mode);
      double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss_value;
      ++batches;
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (const auto& lv : vars.learners)
        for (const auto& [name, var] : lv.named) grads.push_back(tape.grad(var));
      adam.step(params, grads);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(batches);
    if (val_set && val_set->size() > 0) {
      stats.val_accuracy = evaluate(model, *val_set).accuracy;
      if (stats.val_accuracy > best_acc) {
        best_acc = stats.val_accuracy;
        trace.best_epoch = epoch;
        if (opt.select_best_epoch) {
          best_params.clear();
          for (Tensor* p : params) best_params.push_back(*p);
        }
      }
    } else {
      trace.best_epoch = epoch;
    }
    trace.epochs.push_back(stats);
  }
  if (opt.select_best_epoch && !best_params.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best_params[i];
  }
  return trace;
}

// ---- report emission ----------------------------------------------------

namespace detail {

inline std::string num17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_metrics_kv(const MetricsReport& r, std::ostream& out) {
  out << "accuracy " << detail::num17(r.accuracy) << '\n';
  out << "error_rate " << detail::num17(r.error_rate) << '\n';
  out << "macro_f1 " << detail::num17(r.macro_f1) << '\n';
  out << "positive_f1 " << detail::num17(r.positive_f1) << '\n';
  for (std::size_t c = 0; c < r.classes; ++c) {
    out << "precision_" << c << ' ' << detail::num17(r.precision[c]) << '\n';
    out << "recall_" << c << ' ' << detail::num17(r.recall[c]) << '\n';
    out << "f1_" << c << ' ' << detail::num17(r.f1[c]) << '\n';
  }
}

inline void write_metrics_table(const MetricsReport& r, std::ostream& out,
                                const std::vector<std::string>& labels = {}) {
  char line[160];
  std::snprintf(line, sizeof(line), "accuracy   %8.4f\nerror rate %8.4f\nmacro F1   %8.4f\n",
                r.accuracy, r.error_rate, r.macro_f1);
  out << line;
  out << "class      precision   recall       f1\n";
  for (std::size_t c = 0; c < r.classes; ++c) {
    std::string name = c < labels.size() ? labels[c] : std::to_string(c);
    if (name.size() > 10) name.resize(10);
    std::snprintf(line, sizeof(line), "%-10s %9.4f %8.4f %8.4f\n", name.c_str(), r.precision[c],
                  r.recall[c], r.f1[c]);
    out << line;
  }
}

inline void write_trace_csv(const TrainTrace& trace, std::ostream& out) {
  out << "epoch,train_loss,val_accuracy\n";
  for (const auto& e : trace.epochs) {
    out << e.epoch << ',' << detail::num17(e.train_loss) << ',';
    if (std::isnan(e.val_accuracy))
      out << "NA";
    else
      out << detail::num17(e.val_accuracy);
    out << '\n';
  }
}

}  // namespace ecga
