#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ecga/ensemble.hpp"
#include "ecga/errors.hpp"

namespace ecga {

// Self-describing textual checkpoint.  Values are written as C hexfloats so
// a load/save round trip is bit-exact.

namespace detail {

inline std::string hexf(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  out << "tensor " << name << ' ' << t.ndim();
  for (std::size_t e : t.shape()) out << ' ' << e;
  out << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << hexf(t[i]) << (((i + 1) % 8 == 0 || i + 1 == t.size()) ? '\n' : ' ');
  }
}

inline Tensor read_tensor(std::istream& in, const std::string& expect_name) {
  std::string kw, name;
  std::size_t ndim;
  if (!(in >> kw >> name >> ndim) || kw != "tensor") {
    throw ParseError("checkpoint: expected tensor record");
  }
  if (!expect_name.empty() && name != expect_name) {
    throw ParseError("checkpoint: expected tensor '" + expect_name + "', found '" + name + "'");
  }
  std::vector<std::size_t> shape(ndim);
  std::size_t total = 1;
  for (auto& e : shape) {
    if (!(in >> e)) throw ParseError("checkpoint: truncated shape for " + name);
    total *= e;
  }
  std::vector<double> data(total);
  for (auto& v : data) {
    std::string field;
    if (!(in >> field)) throw ParseError("checkpoint: truncated data for " + name);
    char* end = nullptr;
    v = std::strtod(field.c_str(), &end);
    if (end == field.c_str()) throw ParseError("checkpoint: bad value in " + name);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace detail

inline void save_checkpoint(const EnsembleModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write checkpoint: " + path);
  out << "ECGA-CHECKPOINT 1\n";
  out << "classes " << model.classes << '\n';
  out << "conv_relu " << (model.conv_relu ? 1 : 0) << '\n';
  out << "pad_length " << model.pad_length << '\n';
  out << "clean " << (model.clean_text ? 1 : 0) << '\n';
  out << "labels " << model.labels.size() << '\n';
  for (const auto& l : model.labels) out << l << '\n';
  out << "vocab " << model.vocab.size() << '\n';
  for (const auto& t : model.vocab.tokens()) out << t << '\n';
  detail::write_tensor(out, "embedding", model.embedding.matrix);
  out << "learners " << model.specs.size() << '\n';
  for (std::size_t i = 0; i < model.specs.size(); ++i) {
    const auto& s = model.specs[i];
    out << "learner " << i << ' ' << s.kernel_size << ' ' << s.filters << ' ' << s.units << ' '
        << s.attn_dim() << '\n';
    model.learners[i].for_each_tensor([&](const std::string& name, const Tensor& t) {
      detail::write_tensor(out, name, t);
    });
  }
  out << "end\n";
  if (!out) throw ParseError("failed writing checkpoint: " + path);
}

inline EnsembleModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "ECGA-CHECKPOINT" || version != 1) {
    throw ParseError(path + ": not an ECGA checkpoint");
  }
  EnsembleModel model;
  std::string kw;
  std::size_t count = 0;
  in >> kw >> model.classes;
  if (kw != "classes") throw ParseError("checkpoint: expected classes");
  int relu = 1;
  in >> kw >> relu;
  if (kw != "conv_relu") throw ParseError("checkpoint: expected conv_relu");
  model.conv_relu = relu != 0;
  in >> kw >> model.pad_length;
  if (kw != "pad_length") throw ParseError("checkpoint: expected pad_length");
  int clean = 0;
  in >> kw >> clean;
  if (kw != "clean") throw ParseError("checkpoint: expected clean");
  model.clean_text = clean != 0;
  in >> kw >> count;
  if (kw != "labels") throw ParseError("checkpoint: expected labels");
  in.ignore();  // rest of the count line
  model.labels.resize(count);
  for (auto& l : model.labels) {
    if (!std::getline(in, l)) throw ParseError("checkpoint: truncated labels");
  }
  in >> kw >> count;
  if (kw != "vocab") throw ParseError("checkpoint: expected vocab");
  std::vector<std::string> tokens(count);
  for (auto& t : tokens) {
    if (!(in >> t)) throw ParseError("checkpoint: truncated vocabulary");
  }
  if (count < 2 || tokens[0] != kPadToken || tokens[1] != kUnkToken) {
    throw ParseError("checkpoint: vocabulary missing reserved tokens");
  }
  model.vocab = Vocabulary::from_tokens(tokens);
  model.embedding.matrix = detail::read_tensor(in, "embedding");
  model.embedding.dim = model.embedding.matrix.cols();
  model.embedding.coverage = 1.0;
  if (model.embedding.matrix.rows() != model.vocab.size()) {
    throw ParseError("checkpoint: embedding rows do not match vocabulary size");
  }
  in >> kw >> count;
  if (kw != "learners") throw ParseError("checkpoint: expected learners");
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t idx = 0;
    LearnerSpec spec;
    in >> kw >> idx >> spec.kernel_size >> spec.filters >> spec.units >> spec.attention_dim;
    if (kw != "learner" || idx != i) throw ParseError("checkpoint: bad learner header");
    LearnerParams params;
    params.conv.kernel_size = spec.kernel_size;
    params.gru.units = spec.units;
    params.for_each_tensor([&](const std::string& name, Tensor& t) {
      t = detail::read_tensor(in, name);
    });
    model.specs.push_back(spec);
    model.learners.push_back(std::move(params));
  }
  in >> kw;
  if (kw != "end") throw ParseError("checkpoint: missing end marker");
  return model;
}

}  // namespace ecga
