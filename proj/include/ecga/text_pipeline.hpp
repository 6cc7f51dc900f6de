#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ecga/errors.hpp"
#include "ecga/rng.hpp"
#include "ecga/tensor.hpp"

namespace ecga {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";

namespace detail {

inline const std::unordered_set<std::string>& placeholder_tokens() {
  static const std::unordered_set<std::string> set = {"<url>", "<user>", "<number>",
                                                      "<smiley>", kPadToken, kUnkToken};
  return set;
}

inline const std::unordered_set<std::string>& emoticons() {
  static const std::unordered_set<std::string> set = {
      ":)", ":-)", ":(", ":-(", ";)", ";-)", ":D", ":-D", ":P", ":p", ":-P",
      "=)", "=(", ":'(", ":'-(", "<3", ":/", ":|", ":o", ":O", "xD", "XD", "^^"};
  return set;
}

inline std::string ascii_lower(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return s;
}

}  // namespace detail

// Standardize URLs, usernames, numbers and emoticons, then lowercase.
// Total and idempotent; placeholder tokens pass through unchanged.
inline std::string clean_tweet(const std::string& text) {
  static const std::regex url_re(R"(https?://\S+|www\.\S+)");
  static const std::regex user_re(R"(@\w+)");
  static const std::regex num_re(R"([+-]?\d+([.,]\d+)*)");
  std::string s = std::regex_replace(text, url_re, "<url>");
  s = std::regex_replace(s, user_re, "<user>");
  std::istringstream in(s);
  std::string tok, out;
  while (in >> tok) {
    std::string mapped;
    if (detail::emoticons().count(tok)) {
      mapped = "<smiley>";
    } else if (std::regex_match(tok, num_re)) {
      mapped = "<number>";
    } else {
      mapped = detail::ascii_lower(tok);
    }
    if (!out.empty()) out += ' ';
    out += mapped;
  }
  return out;
}

// Whitespace tokenizer that splits ASCII punctuation into standalone tokens.
// Placeholder tokens like <url> survive as single tokens.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream in(text);
  std::string chunk;
  while (in >> chunk) {
    std::string cur;
    std::size_t i = 0;
    while (i < chunk.size()) {
      // placeholders stay whole even when glued to punctuation
      if (chunk[i] == '<') {
        bool matched = false;
        for (const auto& ph : detail::placeholder_tokens()) {
          if (chunk.compare(i, ph.size(), ph) == 0) {
            if (!cur.empty()) tokens.push_back(std::move(cur));
            cur.clear();
            tokens.push_back(ph);
            i += ph.size();
            matched = true;
            break;
          }
        }
        if (matched) continue;
      }
      char c = chunk[i++];
      bool punct = static_cast<unsigned char>(c) < 128 &&
                   std::ispunct(static_cast<unsigned char>(c));
      if (punct) {
        if (!cur.empty()) tokens.push_back(std::move(cur));
        cur.clear();
        tokens.push_back(std::string(1, c));
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
  }
  return tokens;
}

// Dense token -> id map with PAD=0 and UNK=1 reserved.
class Vocabulary {
 public:
  Vocabulary() {
    add(kPadToken);
    add(kUnkToken);
  }

  static Vocabulary from_tokens(const std::vector<std::string>& ordered_tokens) {
    Vocabulary v;
    for (const auto& t : ordered_tokens)
      if (!v.contains(t)) v.add(t);
    return v;
  }

  std::size_t size() const { return id_to_token_.size(); }
  bool contains(const std::string& t) const { return token_to_id_.count(t) != 0; }

  int id(const std::string& t) const {
    auto it = token_to_id_.find(t);
    return it == token_to_id_.end() ? kUnkId : it->second;
  }

  const std::string& token(std::size_t id) const { return id_to_token_.at(id); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  void add(const std::string& t) {
    if (contains(t)) return;
    token_to_id_.emplace(t, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(t);
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Frequency-ranked vocabulary, lexicographic tie-break, optional cap on
// non-reserved tokens.
inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus,
                              std::optional<std::size_t> max_size = std::nullopt) {
  if (max_size && *max_size < 1) throw ConfigError("vocabulary cap must be >= 1");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& seq : corpus)
    for (const auto& tok : seq)
      if (!detail::placeholder_tokens().count(tok) || (tok != kPadToken && tok != kUnkToken))
        ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (max_size && ranked.size() > *max_size) ranked.resize(*max_size);
  Vocabulary v;
  for (const auto& [tok, cnt] : ranked) v.add(tok);
  return v;
}

// Keep only tokens satisfying `keep` (reserved ids always stay); ids are
// re-densified preserving order.
template <typename Pred>
inline Vocabulary filter_vocab(const Vocabulary& vocab, Pred keep) {
  Vocabulary v;
  for (std::size_t i = 2; i < vocab.size(); ++i)
    if (keep(vocab.token(i))) v.add(vocab.token(i));
  return v;
}

// Map tokens to ids, truncating to the first n and right-padding with PAD.
inline std::vector<int> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                               std::size_t n) {
  if (n < 1) throw ConfigError("pad length must be >= 1");
  std::vector<int> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < tokens.size() && i < n; ++i) ids.push_back(vocab.id(tokens[i]));
  while (ids.size() < n) ids.push_back(kPadId);
  return ids;
}

// Pretrained word vectors aligned to a vocabulary.  PAD row is zero; words
// missing from the file get the zero row as well.
struct EmbeddingTable {
  std::size_t dim = 0;
  Tensor matrix;           // [V x dim]
  double coverage = 0.0;   // fraction of non-reserved vocab found in the file
};

// Word-vector text format: optional "V m" header, then one line per word:
// token followed by m reals.
inline EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open embedding file: " + path);
  EmbeddingTable table;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::vector<double>> rows(vocab.size());
  std::size_t covered = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    std::vector<double> vals;
    std::string field;
    bool bad = false;
    while (ls >> field) {
      char* end = nullptr;
      double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0') {
        bad = true;
        break;
      }
      vals.push_back(v);
    }
    if (first) {
      first = false;
      // header line: exactly two integer-valued fields and an integer token
      char* end = nullptr;
      long hv = std::strtol(word.c_str(), &end, 10);
      if (!bad && vals.size() == 1 && end != word.c_str() && *end == '\0' && hv >= 0) {
        continue;  // "V m" header
      }
    }
    if (bad) throw ParseError(path + ":" + std::to_string(lineno) + ": malformed vector value");
    if (table.dim == 0) {
      if (vals.empty())
        throw ParseError(path + ":" + std::to_string(lineno) + ": no vector values");
      table.dim = vals.size();
    } else if (vals.size() != table.dim) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(table.dim) + " values, got " + std::to_string(vals.size()));
    }
    if (vocab.contains(word)) {
      int id = vocab.id(word);
      if (id >= 2 && rows[static_cast<std::size_t>(id)].empty()) ++covered;
      rows[static_cast<std::size_t>(id)] = std::move(vals);
    }
  }
  if (table.dim == 0) throw ParseError(path + ": no word vectors found");
  table.matrix = Tensor({vocab.size(), table.dim});
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (i == static_cast<std::size_t>(kPadId) || rows[i].empty()) continue;  // zero row
    for (std::size_t j = 0; j < table.dim; ++j) table.matrix.at(i, j) = rows[i][j];
  }
  std::size_t non_reserved = vocab.size() > 2 ? vocab.size() - 2 : 0;
  table.coverage = non_reserved ? static_cast<double>(covered) / non_reserved : 1.0;
  return table;
}

// Tokens of an embedding file, for coverage-based vocabulary filtering.
inline std::unordered_set<std::string> read_embedding_words(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open embedding file: " + path);
  std::unordered_set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    if (ls >> word) words.insert(word);
  }
  return words;
}

// Seeded random table for runs without pretrained vectors; PAD row zero.
inline EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t dim, Rng& rng) {
  EmbeddingTable table;
  table.dim = dim;
  table.matrix = Tensor({vocab.size(), dim});
  for (std::size_t i = 1; i < vocab.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j) table.matrix.at(i, j) = rng.uniform(-0.5, 0.5);
  table.coverage = 1.0;
  return table;
}

// Padded token-id matrix plus labels; the unit of training and inference.
struct EncodedBatch {
  std::vector<std::vector<int>> ids;  // B rows, each exactly pad_length long
  std::vector<int> labels;            // B entries in [0, c)
  std::size_t pad_length = 0;

  std::size_t size() const { return ids.size(); }
};

}  // namespace ecga
