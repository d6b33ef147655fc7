#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace bft {

struct TextPipeError : std::runtime_error {
  explicit TextPipeError(const std::string& what) : std::runtime_error(what) {}
};

struct PipelineConfig {
  std::set<std::string> stoplist;
  size_t max_vocab = 20000;
  size_t min_df = 2;
  bool stemming_enabled = true;
};

struct Vocabulary {
  std::unordered_map<std::string, int> token_to_index;  // dense 0..V-1
  std::vector<std::string> index_to_token;              // lexicographic order
  std::vector<size_t> df;                               // per index
  size_t n_docs = 0;

  size_t size() const { return index_to_token.size(); }

  int index_of(const std::string& token) const {
    auto it = token_to_index.find(token);
    return it == token_to_index.end() ? -1 : it->second;
  }

  // Smoothed inverse document frequency: ln((1+N)/(1+df)) + 1.
  double idf(int index) const {
    return std::log((1.0 + double(n_docs)) / (1.0 + double(df[index]))) + 1.0;
  }
};

// Sparse L2-normalized feature vector; indices strictly increasing.
struct TfIdfVector {
  std::vector<std::pair<int, double>> entries;
  double norm = 0.0;  // Euclidean norm of the raw weights before normalization

  double weight_at(int index) const {
    for (const auto& [i, w] : entries)
      if (i == index) return w;
    return 0.0;
  }
};

// A small fixed English stoplist, versioned with the code so runs are
// reproducible without external files. Deliberately short; completeness is
// not the goal.
inline const std::set<std::string>& default_stoplist() {
  static const std::set<std::string> words = {
      "a",    "an",   "and",  "are",  "as",   "at",    "be",    "been",  "but",  "by",
      "for",  "from", "had",  "has",  "have", "he",    "her",   "his",   "i",    "if",
      "in",   "into", "is",   "it",   "its",  "may",   "not",   "of",    "on",   "or",
      "she",  "that", "the",  "their","them", "there", "they",  "this",  "to",   "was",
      "we",   "were", "what", "which","who",  "will",  "with",  "would", "you"};
  return words;
}

// Stoplist file: one token per line, UTF-8, '#' starts a comment line.
inline std::set<std::string> load_stoplist(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TextPipeError("MissingFile: stoplist " + path);
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    size_t e = line.find_last_not_of(" \t");
    words.insert(line.substr(b, e - b + 1));
  }
  return words;
}

namespace detail {

// UTF-8 decode of one codepoint; malformed bytes are treated as single
// non-word characters.
inline uint32_t decode_utf8(const std::string& s, size_t& i) {
  unsigned char c = s[i];
  if (c < 0x80) {
    ++i;
    return c;
  }
  int extra = (c >= 0xF0) ? 3 : (c >= 0xE0) ? 2 : (c >= 0xC0) ? 1 : 0;
  if (extra == 0 || i + extra >= s.size()) {
    ++i;
    return 0xFFFD;
  }
  uint32_t cp = c & (0x3F >> extra);
  for (int k = 0; k < extra; ++k) {
    unsigned char cc = s[i + 1 + k];
    if ((cc & 0xC0) != 0x80) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | (cc & 0x3F);
  }
  i += size_t(extra) + 1;
  return cp;
}

// Word characters: ASCII letters/digits plus non-ASCII codepoints outside
// the common punctuation blocks. A pragmatic approximation of "Unicode
// letters/digits" that needs no Unicode tables.
inline bool is_word_cp(uint32_t cp) {
  if (cp < 0x80)
    return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
  if (cp >= 0xA0 && cp <= 0xBF) return false;    // Latin-1 punctuation/symbols
  if (cp >= 0x2000 && cp <= 0x206F) return false;  // general punctuation
  if (cp >= 0x2E00 && cp <= 0x2E7F) return false;  // supplemental punctuation
  if (cp >= 0x3000 && cp <= 0x303F) return false;  // CJK punctuation
  if (cp == 0xFFFD) return false;
  return true;
}

inline void append_cp_lower(std::string& out, uint32_t cp) {
  if (cp < 0x80) {
    char c = char(cp);
    if (c >= 'A' && c <= 'Z') c = char(c - 'A' + 'a');
    out += c;
    return;
  }
  // Re-encode unchanged; only ASCII is case-folded.
  if (cp < 0x800) {
    out += char(0xC0 | (cp >> 6));
    out += char(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += char(0xE0 | (cp >> 12));
    out += char(0x80 | ((cp >> 6) & 0x3F));
    out += char(0x80 | (cp & 0x3F));
  } else {
    out += char(0xF0 | (cp >> 18));
    out += char(0x80 | ((cp >> 12) & 0x3F));
    out += char(0x80 | ((cp >> 6) & 0x3F));
    out += char(0x80 | (cp & 0x3F));
  }
}

}  // namespace detail

// Lowercased maximal runs of letters/digits; everything else separates.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  size_t i = 0;
  while (i < text.size()) {
    uint32_t cp = detail::decode_utf8(text, i);
    if (detail::is_word_cp(cp)) {
      detail::append_cp_lower(current, cp);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

inline std::vector<std::string> remove_stopwords(const std::vector<std::string>& tokens,
                                                 const std::set<std::string>& stoplist) {
  std::vector<std::string> kept;
  kept.reserve(tokens.size());
  for (const std::string& t : tokens)
    if (!stoplist.count(t)) kept.push_back(t);
  return kept;
}

// Three-rule S-stemmer, applied once per token:
//   1. ends "ies" and length > 4  ->  "...y"
//   2. ends "ss"                  ->  unchanged
//   3. ends "s"  and length > 3   ->  drop the final "s"
inline std::string stem(const std::string& token) {
  size_t n = token.size();
  if (n > 4 && token.compare(n - 3, 3, "ies") == 0) return token.substr(0, n - 3) + "y";
  if (n >= 2 && token.compare(n - 2, 2, "ss") == 0) return token;
  if (n > 3 && token.back() == 's') return token.substr(0, n - 1);
  return token;
}

// Full preprocessing of one document: tokenize, stop, stem.
inline std::vector<std::string> preprocess(const std::string& text, const PipelineConfig& cfg) {
  std::vector<std::string> tokens = remove_stopwords(tokenize(text), cfg.stoplist);
  if (cfg.stemming_enabled)
    for (std::string& t : tokens) t = stem(t);
  return tokens;
}

// Fits the vocabulary on preprocessed documents: min_df filter, then keep
// the max_vocab highest-df tokens (lexicographic tie-break), indices in
// lexicographic token order.
inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus,
                              const PipelineConfig& cfg) {
  if (corpus.empty()) throw TextPipeError("EmptyVocabulary: empty corpus");
  std::map<std::string, size_t> df;
  for (const auto& doc : corpus) {
    std::set<std::string> seen(doc.begin(), doc.end());
    for (const std::string& t : seen) df[t]++;
  }
  std::vector<std::pair<std::string, size_t>> kept;
  for (const auto& [t, d] : df)
    if (d >= cfg.min_df) kept.push_back({t, d});
  if (kept.empty()) throw TextPipeError("EmptyVocabulary: no token reaches min_df=" +
                                        std::to_string(cfg.min_df));
  if (kept.size() > cfg.max_vocab) {
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    kept.resize(cfg.max_vocab);
    std::sort(kept.begin(), kept.end());  // back to lexicographic for indexing
  }
  Vocabulary v;
  v.n_docs = corpus.size();
  for (const auto& [t, d] : kept) {
    v.token_to_index[t] = int(v.index_to_token.size());
    v.index_to_token.push_back(t);
    v.df.push_back(d);
  }
  return v;
}

// count(t) * idf(t) over in-vocabulary tokens, L2-normalized. All-OOV input
// yields the empty vector with norm 0.
inline TfIdfVector tfidf_vector(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::map<int, double> counts;
  for (const std::string& t : tokens) {
    int idx = vocab.index_of(t);
    if (idx >= 0) counts[idx] += 1.0;
  }
  TfIdfVector out;
  double sq = 0.0;
  for (auto& [idx, c] : counts) {
    double w = c * vocab.idf(idx);
    sq += w * w;
    out.entries.push_back({idx, w});
  }
  out.norm = std::sqrt(sq);
  if (out.norm > 0.0)
    for (auto& [idx, w] : out.entries) w /= out.norm;
  else
    out.entries.clear();
  return out;
}

inline std::vector<TfIdfVector> transform_corpus(const std::vector<std::vector<std::string>>& corpus,
                                                 const Vocabulary& vocab) {
  std::vector<TfIdfVector> rows;
  rows.reserve(corpus.size());
  for (const auto& doc : corpus) rows.push_back(tfidf_vector(doc, vocab));
  return rows;
}

// Vocabulary export: "#vocab v1 n_docs=N" then token<TAB>index<TAB>df.
inline void save_vocab(const Vocabulary& v, std::ostream& out) {
  out << "#vocab v1 n_docs=" << v.n_docs << "\n";
  for (size_t i = 0; i < v.index_to_token.size(); ++i)
    out << v.index_to_token[i] << "\t" << i << "\t" << v.df[i] << "\n";
}

inline Vocabulary load_vocab(std::istream& in) {
  Vocabulary v;
  std::string line;
  if (!std::getline(in, line) || line.rfind("#vocab v1 n_docs=", 0) != 0)
    throw TextPipeError("bad vocabulary header");
  v.n_docs = std::stoull(line.substr(std::string("#vocab v1 n_docs=").size()));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    size_t index, df;
    if (!std::getline(ss, token, '\t') || !(ss >> index) || !(ss.ignore(1), ss >> df))
      throw TextPipeError("bad vocabulary line: " + line);
    if (index != v.index_to_token.size()) throw TextPipeError("non-dense vocabulary indices");
    v.token_to_index[token] = int(index);
    v.index_to_token.push_back(token);
    v.df.push_back(df);
  }
  return v;
}

}  // namespace bft
