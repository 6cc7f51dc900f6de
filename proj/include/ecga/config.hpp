#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ecga/errors.hpp"

namespace ecga {

// Fully resolved run configuration.  A preset fills every field; any field
// can then be overridden individually.  Round-trips losslessly through the
// flat key = value file format.
struct RunConfig {
  std::string preset = "custom";
  std::string train_path;
  std::string eval_path;
  std::string embedding_path;
  std::size_t embedding_dim = 50;  // used when no embedding file is given
  std::size_t pad_length = 60;
  std::size_t vocab_cap = 0;  // 0 = uncapped
  std::vector<std::size_t> kernel_sizes = {2, 3};
  std::size_t filters = 64;
  std::size_t units = 32;
  std::size_t attention_dim = 0;  // 0 = 2 * units
  double dropout = 0.3;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::uint64_t seed = 42;
  std::size_t kfold = 1;  // 1 = plain train/validation split
  bool stratified = true;
  double val_fraction = 0.1;
  std::string conv_activation = "relu";  // relu | none
  std::string training = "joint";        // joint | independent
  bool clean = false;                    // tweet-style standardization
  std::string delimiter = ",";           // "\t" allowed
  std::size_t label_column = 0;
  std::vector<std::size_t> text_columns = {1};
  bool has_header = false;
  std::vector<std::string> labels;  // optional fixed label-name order
  std::string out_dir = "ecga-out";
};

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    char* end = nullptr;
    long v = std::strtol(item.c_str(), &end, 10);
    if (end == item.c_str() || *end != '\0' || v < 0) {
      throw ConfigError("invalid value for " + key + ": " + s);
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline std::vector<std::string> parse_strings(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

inline std::string join_strings(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

inline std::size_t parse_size(const std::string& s, const std::string& key) {
  char* end = nullptr;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || v < 0) {
    throw ConfigError("invalid value for " + key + ": " + s);
  }
  return static_cast<std::size_t>(v);
}

inline double parse_double(const std::string& s, const std::string& key) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw ConfigError("invalid value for " + key + ": " + s);
  }
  return v;
}

inline bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": " + s);
}

inline std::string escape_delim(const std::string& d) { return d == "\t" ? "\\t" : d; }
inline std::string unescape_delim(const std::string& d) { return d == "\\t" ? "\t" : d; }

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Named presets carrying the per-dataset hyperparameter sets.
inline RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "dbpedia") {
    c.pad_length = 60;
    c.kernel_sizes = {2, 3};
    c.filters = 256;
    c.units = 128;
    c.dropout = 0.3;
    c.learning_rate = 1e-4;
    c.beta1 = 0.7;
    c.beta2 = 0.99;
    c.vocab_cap = 0;
    c.kfold = 1;
    c.clean = false;
    c.delimiter = ",";
    c.label_column = 0;
    c.text_columns = {1, 2};  // title and abstract, concatenated
    c.has_header = false;
  } else if (name == "argmine_task_a") {
    c.pad_length = 60;
    c.kernel_sizes = {2, 3};
    c.filters = 256;
    c.units = 128;
    c.dropout = 0.5;
    c.learning_rate = 1e-3;
    c.beta1 = 0.9;
    c.beta2 = 0.999;
    c.vocab_cap = 0;
    c.kfold = 1;
    c.clean = false;
    c.delimiter = "\t";
    c.label_column = 0;
    c.text_columns = {1};
    c.has_header = false;
  } else if (name == "argmine_task_c") {
    c = preset_config("argmine_task_a");
    c.preset = name;
    c.filters = 512;
    c.units = 256;
  } else if (name == "churn") {
    c.pad_length = 50;
    c.kernel_sizes = {1, 2};
    c.filters = 128;
    c.units = 64;
    c.dropout = 0.5;
    c.learning_rate = 1e-3;
    c.beta1 = 0.9;
    c.beta2 = 0.999;
    c.vocab_cap = 1000;
    c.kfold = 10;
    c.stratified = true;
    c.clean = true;
    c.delimiter = "\t";
    c.label_column = 0;
    c.text_columns = {1};
    c.has_header = false;
  } else if (name == "custom") {
    // struct defaults
  } else {
    throw ConfigError("unknown preset: " + name);
  }
  return c;
}

// Apply one "key=value" override.
inline void config_set(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "preset") c.preset = value;
  else if (key == "train_path") c.train_path = value;
  else if (key == "eval_path") c.eval_path = value;
  else if (key == "embedding_path") c.embedding_path = value;
  else if (key == "embedding_dim") c.embedding_dim = parse_size(value, key);
  else if (key == "pad_length") c.pad_length = parse_size(value, key);
  else if (key == "vocab_cap") c.vocab_cap = parse_size(value, key);
  else if (key == "kernel_sizes") c.kernel_sizes = parse_sizes(value, key);
  else if (key == "filters") c.filters = parse_size(value, key);
  else if (key == "units") c.units = parse_size(value, key);
  else if (key == "attention_dim") c.attention_dim = parse_size(value, key);
  else if (key == "dropout") c.dropout = parse_double(value, key);
  else if (key == "learning_rate") c.learning_rate = parse_double(value, key);
  else if (key == "beta1") c.beta1 = parse_double(value, key);
  else if (key == "beta2") c.beta2 = parse_double(value, key);
  else if (key == "batch_size") c.batch_size = parse_size(value, key);
  else if (key == "epochs") c.epochs = parse_size(value, key);
  else if (key == "seed") c.seed = parse_size(value, key);
  else if (key == "kfold") c.kfold = parse_size(value, key);
  else if (key == "stratified") c.stratified = parse_bool(value, key);
  else if (key == "val_fraction") c.val_fraction = parse_double(value, key);
  else if (key == "conv_activation") c.conv_activation = value;
  else if (key == "training") c.training = value;
  else if (key == "clean") c.clean = parse_bool(value, key);
  else if (key == "delimiter") c.delimiter = unescape_delim(value);
  else if (key == "label_column") c.label_column = parse_size(value, key);
  else if (key == "text_columns") c.text_columns = parse_sizes(value, key);
  else if (key == "has_header") c.has_header = parse_bool(value, key);
  else if (key == "labels") c.labels = value.empty() ? std::vector<std::string>{} : parse_strings(value);
  else if (key == "out_dir") c.out_dir = value;
  else throw ConfigError("unknown config key: " + key);
}

inline void validate_config(const RunConfig& c) {
  if (c.kernel_sizes.empty()) throw ConfigError("kernel_sizes must not be empty");
  for (std::size_t k : c.kernel_sizes) {
    if (k < 1) throw ConfigError("kernel_sizes entries must be >= 1");
    if (k > c.pad_length) {
      throw ConfigError("kernel size " + std::to_string(k) + " exceeds pad_length " +
                        std::to_string(c.pad_length));
    }
  }
  if (c.filters < 1) throw ConfigError("filters must be >= 1");
  if (c.units < 1) throw ConfigError("units must be >= 1");
  if (c.pad_length < 1) throw ConfigError("pad_length must be >= 1");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  if (c.learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (c.beta1 < 0.0 || c.beta1 >= 1.0) throw ConfigError("beta1 must be in [0, 1)");
  if (c.beta2 < 0.0 || c.beta2 >= 1.0) throw ConfigError("beta2 must be in [0, 1)");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.val_fraction < 0.0 || c.val_fraction >= 1.0) {
    throw ConfigError("val_fraction must be in [0, 1)");
  }
  if (c.conv_activation != "relu" && c.conv_activation != "none") {
    throw ConfigError("conv_activation must be relu or none");
  }
  if (c.training != "joint" && c.training != "independent") {
    throw ConfigError("training must be joint or independent");
  }
  if (c.text_columns.empty()) throw ConfigError("text_columns must not be empty");
}

inline std::string serialize_config(const RunConfig& c) {
  using namespace detail;
  std::ostringstream out;
  out << "preset = " << c.preset << '\n';
  out << "train_path = " << c.train_path << '\n';
  out << "eval_path = " << c.eval_path << '\n';
  out << "embedding_path = " << c.embedding_path << '\n';
  out << "embedding_dim = " << c.embedding_dim << '\n';
  out << "pad_length = " << c.pad_length << '\n';
  out << "vocab_cap = " << c.vocab_cap << '\n';
  out << "kernel_sizes = " << join_sizes(c.kernel_sizes) << '\n';
  out << "filters = " << c.filters << '\n';
  out << "units = " << c.units << '\n';
  out << "attention_dim = " << c.attention_dim << '\n';
  out << "dropout = " << fmt_double(c.dropout) << '\n';
  out << "learning_rate = " << fmt_double(c.learning_rate) << '\n';
  out << "beta1 = " << fmt_double(c.beta1) << '\n';
  out << "beta2 = " << fmt_double(c.beta2) << '\n';
  out << "batch_size = " << c.batch_size << '\n';
  out << "epochs = " << c.epochs << '\n';
  out << "seed = " << c.seed << '\n';
  out << "kfold = " << c.kfold << '\n';
  out << "stratified = " << (c.stratified ? "true" : "false") << '\n';
  out << "val_fraction = " << fmt_double(c.val_fraction) << '\n';
  out << "conv_activation = " << c.conv_activation << '\n';
  out << "training = " << c.training << '\n';
  out << "clean = " << (c.clean ? "true" : "false") << '\n';
  out << "delimiter = " << escape_delim(c.delimiter) << '\n';
  out << "label_column = " << c.label_column << '\n';
  out << "text_columns = " << join_sizes(c.text_columns) << '\n';
  out << "has_header = " << (c.has_header ? "true" : "false") << '\n';
  out << "labels = " << join_strings(c.labels) << '\n';
  out << "out_dir = " << c.out_dir << '\n';
  return out.str();
}

inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (key == "preset" && value != base.preset && value != "custom" && base.preset == "custom") {
      // a preset named in the file seeds the remaining defaults
      std::string kept_out = base.out_dir;
      base = preset_config(value);
      base.out_dir = kept_out;
      continue;
    }
    config_set(base, key, value);
  }
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_config(in, base);
}

}  // namespace ecga
