#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ecga/autodiff.hpp"
#include "ecga/errors.hpp"
#include "ecga/layers.hpp"
#include "ecga/rng.hpp"
#include "ecga/tensor.hpp"
#include "ecga/text_pipeline.hpp"

namespace ecga {

struct LearnerSpec {
  std::size_t kernel_size = 2;
  std::size_t filters = 256;
  std::size_t units = 128;
  std::size_t attention_dim = 0;  // 0 -> defaults to 2 * units

  std::size_t attn_dim() const { return attention_dim ? attention_dim : 2 * units; }
};

// Learners share the embedding table and fork everything from the
// convolution stage down; predictions are averaged.
struct EnsembleModel {
  std::vector<LearnerSpec> specs;
  std::vector<LearnerParams> learners;
  Vocabulary vocab;
  EmbeddingTable embedding;
  std::vector<std::string> labels;
  std::size_t classes = 0;
  bool conv_relu = true;
  // text-pipeline settings carried along so a checkpoint is self-contained
  std::size_t pad_length = 0;
  bool clean_text = false;

  template <typename F>
  void for_each_param(F&& f) {
    for (std::size_t i = 0; i < learners.size(); ++i) {
      std::string prefix = "learner" + std::to_string(i) + ".";
      learners[i].for_each_tensor(
          [&](const std::string& name, Tensor& t) { f(prefix + name, t); });
    }
  }

  template <typename F>
  void for_each_param(F&& f) const {
    const_cast<EnsembleModel*>(this)->for_each_param(
        [&](const std::string& n, Tensor& t) { f(n, static_cast<const Tensor&>(t)); });
  }
};

inline EnsembleModel build_ensemble(const std::vector<LearnerSpec>& specs, std::size_t classes,
                                    Vocabulary vocab, EmbeddingTable embedding,
                                    std::vector<std::string> labels, Rng& rng,
                                    bool conv_relu = true) {
  if (specs.empty()) throw ConfigError("ensemble needs at least one learner spec");
  if (classes < 2) throw ConfigError("ensemble needs at least 2 classes");
  EnsembleModel model;
  model.specs = specs;
  model.vocab = std::move(vocab);
  model.embedding = std::move(embedding);
  model.labels = std::move(labels);
  model.classes = classes;
  model.conv_relu = conv_relu;
  for (const auto& s : specs) {
    if (s.kernel_size < 1 || s.filters < 1 || s.units < 1) {
      throw ConfigError("learner spec extents must be >= 1");
    }
    model.learners.push_back(make_learner(s.kernel_size, model.embedding.dim, s.filters,
                                          s.units, s.attn_dim(), classes, rng));
  }
  return model;
}

// Tape handles for the whole model.
struct EnsembleVars {
  Var table;
  std::vector<LearnerVars> learners;
};

inline EnsembleVars lift_ensemble(GradTape& tape, const EnsembleModel& model,
                                  bool as_params = true) {
  EnsembleVars v;
  v.table = tape.leaf(model.embedding.matrix, false, "embedding");
  for (std::size_t i = 0; i < model.learners.size(); ++i) {
    v.learners.push_back(
        lift(tape, model.learners[i], as_params, "learner" + std::to_string(i) + "."));
  }
  return v;
}

// Averaged prediction on the tape (differentiable path used for training).
inline Var ensemble_forward_avg(GradTape& tape, const EnsembleVars& vars,
                                const std::vector<int>& token_ids, const ForwardConfig& cfg,
                                Rng& rng) {
  Var sum{};
  for (std::size_t i = 0; i < vars.learners.size(); ++i) {
    Var p = learner_forward(tape, token_ids, vars.table, vars.learners[i], cfg, rng);
    sum = i == 0 ? p : tape.add(sum, p);
  }
  return tape.scale(sum, 1.0 / static_cast<double>(vars.learners.size()));
}

// Arithmetic mean of the learners' softmax outputs.  Accumulated in extended
// precision so an ensemble of identical learners reproduces the single
// learner bit-for-bit.
inline Tensor ensemble_predict(const EnsembleModel& model, const std::vector<int>& token_ids) {
  GradTape tape;
  EnsembleVars vars = lift_ensemble(tape, model, false);
  ForwardConfig cfg{0.0, model.conv_relu, false};
  Rng rng(0);  // unused in inference mode
  std::vector<long double> acc(model.classes, 0.0L);
  for (const auto& lv : vars.learners) {
    Var p = learner_forward(tape, token_ids, vars.table, lv, cfg, rng);
    const Tensor& probs = tape.value(p);
    for (std::size_t c = 0; c < model.classes; ++c) acc[c] += probs[c];
  }
  Tensor out({model.classes});
  auto n = static_cast<long double>(model.learners.size());
  for (std::size_t c = 0; c < model.classes; ++c) out[c] = static_cast<double>(acc[c] / n);
  return out;
}

enum class TrainingMode { joint, independent };

// Mean cross-entropy over the batch, on the tape.  `joint` trains one loss
// on the averaged prediction; `independent` gives each learner its own
// cross-entropy (gradients never cross learners).
inline Var ensemble_loss(GradTape& tape, const EnsembleVars& vars, const EncodedBatch& batch,
                         std::size_t classes, const ForwardConfig& cfg, Rng& rng,
                         TrainingMode mode = TrainingMode::joint) {
  if (batch.size() == 0) throw ContractError("ensemble_loss on empty batch");
  std::vector<Var> example_losses;
  example_losses.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    int label = batch.labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ContractError("label " + std::to_string(label) + " out of range [0, " +
                          std::to_string(classes) + ")");
    }
    auto idx = static_cast<std::size_t>(label);
    if (mode == TrainingMode::joint) {
      Var avg = ensemble_forward_avg(tape, vars, batch.ids[b], cfg, rng);
      example_losses.push_back(tape.scale(tape.pick(tape.log_clamped(avg), idx), -1.0));
    } else {
      std::vector<Var> per_learner;
      for (const auto& lv : vars.learners) {
        Var p = learner_forward(tape, batch.ids[b], vars.table, lv, cfg, rng);
        per_learner.push_back(tape.scale(tape.pick(tape.log_clamped(p), idx), -1.0));
      }
      example_losses.push_back(tape.mean_of(per_learner));
    }
  }
  return tape.mean_of(example_losses);
}

// Loss as a plain number (inference-style forward, no dropout).
inline double ensemble_loss_value(const EnsembleModel& model, const EncodedBatch& batch,
                                  TrainingMode mode = TrainingMode::joint) {
  GradTape tape;
  EnsembleVars vars = lift_ensemble(tape, model, false);
  ForwardConfig cfg{0.0, model.conv_relu, false};
  Rng rng(0);
  Var loss = ensemble_loss(tape, vars, batch, model.classes, cfg, rng, mode);
  return tape.value(loss)[0];
}

}  // namespace ecga
