#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ecga/checkpoint.hpp"
#include "ecga/config.hpp"
#include "ecga/dataset.hpp"
#include "ecga/ensemble.hpp"
#include "ecga/errors.hpp"
#include "ecga/gradcheck.hpp"
#include "ecga/training.hpp"

namespace ecga {

// End-to-end command implementations shared by the CLI and the test suites.

inline std::vector<LearnerSpec> specs_from_config(const RunConfig& cfg) {
  std::vector<LearnerSpec> specs;
  for (std::size_t k : cfg.kernel_sizes) {
    specs.push_back(LearnerSpec{k, cfg.filters, cfg.units, cfg.attention_dim});
  }
  return specs;
}

inline EncodedBatch encode_dataset(const RawDataset& ds, const Vocabulary& vocab,
                                   std::size_t pad_length, bool clean) {
  EncodedBatch batch;
  batch.pad_length = pad_length;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::string text = clean ? clean_tweet(ds.texts[i]) : ds.texts[i];
    batch.ids.push_back(encode(tokenize(text), vocab, pad_length));
    batch.labels.push_back(ds.labels[i]);
  }
  return batch;
}

struct PreparedData {
  EncodedBatch data;
  Vocabulary vocab;
  EmbeddingTable embedding;
  std::vector<std::string> label_names;
};

// Dataset file -> cleaned/tokenized/encoded batch plus vocabulary and
// embedding table per the config's preset rules.
inline PreparedData prepare_training_data(const RunConfig& cfg) {
  RawDataset ds = load_dataset(cfg.train_path, schema_from_config(cfg));
  if (ds.label_names.size() < 2) {
    throw ConfigError("training data must contain at least 2 distinct labels");
  }
  std::vector<std::vector<std::string>> corpus;
  corpus.reserve(ds.size());
  for (const auto& text : ds.texts) {
    corpus.push_back(tokenize(cfg.clean ? clean_tweet(text) : text));
  }
  PreparedData out;
  if (cfg.vocab_cap > 0) {
    out.vocab = build_vocab(corpus, cfg.vocab_cap);
  } else {
    out.vocab = build_vocab(corpus);
    if (!cfg.embedding_path.empty()) {
      // uncapped vocabularies keep only embedding-covered words
      auto covered = read_embedding_words(cfg.embedding_path);
      out.vocab = filter_vocab(out.vocab,
                               [&](const std::string& t) { return covered.count(t) != 0; });
    }
  }
  if (!cfg.embedding_path.empty()) {
    out.embedding = load_embeddings(cfg.embedding_path, out.vocab);
  } else {
    Rng erng(cfg.seed ^ 0x5eedULL);
    out.embedding = random_embeddings(out.vocab, cfg.embedding_dim, erng);
  }
  out.data = encode_dataset(ds, out.vocab, cfg.pad_length, cfg.clean);
  out.label_names = ds.label_names;
  return out;
}

inline TrainOptions train_options_from_config(const RunConfig& cfg) {
  TrainOptions opt;
  opt.adam = AdamConfig{cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8};
  opt.batch_size = cfg.batch_size;
  opt.epochs = cfg.epochs;
  opt.dropout = cfg.dropout;
  opt.conv_relu = cfg.conv_activation == "relu";
  opt.mode = cfg.training == "independent" ? TrainingMode::independent : TrainingMode::joint;
  opt.seed = cfg.seed;
  return opt;
}

struct TrainOutputs {
  EnsembleModel model;
  TrainTrace trace;
  MetricsReport metrics;
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_kv_path;
  std::filesystem::path metrics_table_path;
  std::filesystem::path trace_path;
  std::filesystem::path config_path;
};

namespace detail {

// Hold out a stratified validation split; k ~ 1/val_fraction.
inline std::pair<EncodedBatch, EncodedBatch> holdout_split(const EncodedBatch& data,
                                                           double val_fraction,
                                                           bool stratified,
                                                           std::uint64_t seed) {
  std::size_t k = static_cast<std::size_t>(1.0 / val_fraction + 0.5);
  if (k < 2 || data.size() < k) return {data, EncodedBatch{{}, {}, data.pad_length}};
  auto folds = kfold_split(data.size(), k, seed, stratified ? &data.labels : nullptr);
  return {subset(data, folds[0].train), subset(data, folds[0].validation)};
}

}  // namespace detail

// The train command: optional k-fold cross-validation, a final fit, and the
// four run artifacts (checkpoint, metrics, epoch trace, resolved config).
inline TrainOutputs run_train(const RunConfig& cfg, std::ostream& log = std::cout) {
  validate_config(cfg);
  if (cfg.train_path.empty()) throw ConfigError("train_path is required");
  PreparedData prep = prepare_training_data(cfg);
  std::size_t classes = prep.label_names.size();
  auto specs = specs_from_config(cfg);
  TrainOptions opt = train_options_from_config(cfg);

  TrainOutputs out;
  std::vector<std::size_t> cv_confusion(classes * classes, 0);
  bool have_cv = cfg.kfold >= 2;
  if (have_cv) {
    auto folds = kfold_split(prep.data.size(), cfg.kfold, cfg.seed,
                             cfg.stratified ? &prep.data.labels : nullptr);
    for (std::size_t f = 0; f < folds.size(); ++f) {
      Rng mrng = Rng(cfg.seed).fork(f + 1);
      EnsembleModel fold_model =
          build_ensemble(specs, classes, prep.vocab, prep.embedding, prep.label_names, mrng,
                         cfg.conv_activation == "relu");
      EncodedBatch tr = subset(prep.data, folds[f].train);
      EncodedBatch va = subset(prep.data, folds[f].validation);
      TrainOptions fopt = opt;
      fopt.seed = Rng(cfg.seed).fork(f + 100).next_u64();
      train(fold_model, tr, &va, fopt);
      MetricsReport fm = evaluate(fold_model, va);
      for (std::size_t i = 0; i < fm.confusion.size(); ++i) cv_confusion[i] += fm.confusion[i];
      log << "fold " << (f + 1) << "/" << folds.size() << " accuracy "
          << fm.accuracy << " macro-F1 " << fm.macro_f1 << "\n";
    }
  }

  // final model on the full training data with a held-out validation split
  Rng mrng(cfg.seed);
  out.model = build_ensemble(specs, classes, prep.vocab, prep.embedding, prep.label_names, mrng,
                             cfg.conv_activation == "relu");
  out.model.pad_length = cfg.pad_length;
  out.model.clean_text = cfg.clean;
  auto [tr, va] = cfg.val_fraction > 0.0
                      ? detail::holdout_split(prep.data, cfg.val_fraction, cfg.stratified,
                                              cfg.seed + 1)
                      : std::pair<EncodedBatch, EncodedBatch>{prep.data,
                                                              EncodedBatch{{}, {}, cfg.pad_length}};
  out.trace = train(out.model, tr, va.size() ? &va : nullptr, opt);
  out.metrics = have_cv ? metrics_from_confusion(std::move(cv_confusion), classes)
                        : evaluate(out.model, va.size() ? va : prep.data);

  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  out.checkpoint_path = dir / "checkpoint.ecga";
  out.metrics_kv_path = dir / "metrics.kv";
  out.metrics_table_path = dir / "metrics.txt";
  out.trace_path = dir / "trace.csv";
  out.config_path = dir / "config.resolved";
  save_checkpoint(out.model, out.checkpoint_path.string());
  {
    std::ofstream kv(out.metrics_kv_path);
    write_metrics_kv(out.metrics, kv);
    std::ofstream table(out.metrics_table_path);
    write_metrics_table(out.metrics, table, prep.label_names);
    std::ofstream trace(out.trace_path);
    write_trace_csv(out.trace, trace);
    std::ofstream conf(out.config_path);
    conf << serialize_config(cfg);
  }
  return out;
}

// The eval command: metrics of a checkpoint on a labelled dataset.
inline MetricsReport run_eval(const std::string& checkpoint_path, const std::string& data_path,
                              const RunConfig& cfg, std::ostream& log = std::cout) {
  EnsembleModel model = load_checkpoint(checkpoint_path);
  DatasetSchema schema = schema_from_config(cfg);
  schema.label_names = model.labels;  // dataset labels must match the checkpoint
  RawDataset ds = load_dataset(data_path, schema);
  EncodedBatch batch = encode_dataset(ds, model.vocab, model.pad_length, model.clean_text);
  MetricsReport report = evaluate(model, batch);
  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream kv(dir / "metrics.kv");
    write_metrics_kv(report, kv);
    std::ofstream table(dir / "metrics.txt");
    write_metrics_table(report, table, model.labels);
  }
  write_metrics_table(report, log, model.labels);
  return report;
}

// The predict command: one "label TAB probabilities" line per input line.
inline void run_predict(const std::string& checkpoint_path, std::istream& in,
                        std::ostream& out) {
  EnsembleModel model = load_checkpoint(checkpoint_path);
  std::string line;
  char buf[32];
  while (std::getline(in, line)) {
    std::string text = model.clean_text ? clean_tweet(line) : line;
    std::vector<int> ids = encode(tokenize(text), model.vocab, model.pad_length);
    Tensor probs = ensemble_predict(model, ids);
    std::size_t pred = argmax_lowest(probs);
    out << (pred < model.labels.size() ? model.labels[pred] : std::to_string(pred)) << '\t';
    for (std::size_t c = 0; c < probs.size(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.9f", probs[c]);
      out << (c ? " " : "") << buf;
    }
    out << '\n';
  }
}

// The gradcheck command: finite-difference audit of a miniature ensemble.
inline GradCheckResult run_gradcheck(std::size_t pad, std::size_t emb_dim, std::size_t filters,
                                     std::size_t units, std::size_t classes,
                                     const std::vector<std::size_t>& kernels,
                                     std::uint64_t seed, TrainingMode mode,
                                     const std::string& corrupt_tensor,
                                     std::ostream& log = std::cout) {
  Rng rng(seed);
  Vocabulary vocab;
  for (char c = 'a'; c <= 'j'; ++c) vocab.add(std::string(1, c));
  EmbeddingTable table = random_embeddings(vocab, emb_dim, rng);
  std::vector<LearnerSpec> specs;
  for (std::size_t k : kernels) specs.push_back(LearnerSpec{k, filters, units, 0});
  std::vector<std::string> labels;
  for (std::size_t c = 0; c < classes; ++c) labels.push_back("class" + std::to_string(c));
  EnsembleModel model = build_ensemble(specs, classes, vocab, table, labels, rng);
  // jitter zero-initialized biases so no conv preactivation sits exactly on
  // the relu kink, where central differences are undefined
  model.for_each_param([&](const std::string&, Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += rng.uniform(-0.05, 0.05);
  });
  EncodedBatch batch;
  batch.pad_length = pad;
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<int> ids(pad);
    for (auto& id : ids) id = 2 + static_cast<int>(rng.index(vocab.size() - 2));
    batch.ids.push_back(ids);
    batch.labels.push_back(static_cast<int>(rng.index(classes)));
  }
  GradCheckResult result =
      gradcheck_ensemble(model, batch, mode, 1e-4, 1e-3, corrupt_tensor);
  for (const auto& entry : result.tensors) {
    log << (entry.max_rel_error < result.tolerance ? "pass" : "FAIL") << "  "
        << entry.tensor << "  max_rel_error " << entry.max_rel_error << "\n";
  }
  log << (result.pass ? "gradcheck PASS" : "gradcheck FAIL") << " (max "
      << result.max_rel_error << ", tolerance " << result.tolerance << ")\n";
  return result;
}

}  // namespace ecga
