#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bft/prng.hpp"
#include "bft/textpipe.hpp"

using namespace bft;

TEST_CASE("tokenize") {
  REQUIRE(tokenize("Trump says healthcare reform push") ==
          std::vector<std::string>({"trump", "says", "healthcare", "reform", "push"}));
  REQUIRE(tokenize("").empty());
  REQUIRE(tokenize("U.S. President Donald Trump") ==
          std::vector<std::string>({"u", "s", "president", "donald", "trump"}));
  REQUIRE(tokenize("foo123 bar-baz") == std::vector<std::string>({"foo123", "bar", "baz"}));
  // curly quotes and dashes are separators, accented letters are kept
  REQUIRE(tokenize("caf\xC3\xA9 \xE2\x80\x9Cnews\xE2\x80\x9D") ==
          std::vector<std::string>({"caf\xC3\xA9", "news"}));
}

TEST_CASE("remove_stopwords") {
  REQUIRE(remove_stopwords({"the", "push"}, default_stoplist()) ==
          std::vector<std::string>({"push"}));
  REQUIRE(remove_stopwords({}, default_stoplist()).empty());
  REQUIRE(remove_stopwords({"that", "may", "be", "adding"}, default_stoplist()) ==
          std::vector<std::string>({"adding"}));
}

TEST_CASE("stem") {
  REQUIRE(stem("issues") == "issue");
  REQUIRE(stem("a") == "a");
  REQUIRE(stem("policies") == "policy");
  REQUIRE(stem("press") == "press");   // -ss unchanged
  REQUIRE(stem("gas") == "gas");       // length guard on final -s
  // The "ies" rule needs length > 4, but the rules cascade: a 4-letter
  // "-ies" word falls through to the plain "-s" rule and drops the s.
  REQUIRE(stem("ties") == "tie");
}

TEST_CASE("build_vocab") {
  PipelineConfig cfg;
  cfg.min_df = 1;
  cfg.max_vocab = 10;
  std::vector<std::vector<std::string>> corpus = {{"a", "b"}, {"b", "c"}};
  SECTION("hand counts") {
    Vocabulary v = build_vocab(corpus, cfg);
    REQUIRE(v.size() == 3);
    REQUIRE(v.index_of("a") == 0);
    REQUIRE(v.index_of("b") == 1);
    REQUIRE(v.index_of("c") == 2);
    REQUIRE(v.df == std::vector<size_t>({1, 2, 1}));
    REQUIRE(v.n_docs == 2);
  }
  SECTION("min_df filter") {
    cfg.min_df = 2;
    Vocabulary v = build_vocab(corpus, cfg);
    REQUIRE(v.size() == 1);
    REQUIRE(v.index_of("b") == 0);
  }
  SECTION("max_vocab keeps highest df with lexicographic tie-break") {
    cfg.max_vocab = 2;
    Vocabulary v = build_vocab(corpus, cfg);
    // b has df 2; a and c tie at 1, "a" wins lexicographically
    REQUIRE(v.size() == 2);
    REQUIRE(v.index_of("a") == 0);
    REQUIRE(v.index_of("b") == 1);
    REQUIRE(v.index_of("c") == -1);
  }
  SECTION("nothing survives") {
    std::vector<std::vector<std::string>> empty_docs = {{}, {}};
    REQUIRE_THROWS_WITH(build_vocab(empty_docs, cfg),
                        Catch::Matchers::ContainsSubstring("EmptyVocabulary"));
  }
}

TEST_CASE("tfidf values") {
  PipelineConfig cfg;
  cfg.min_df = 1;
  std::vector<std::vector<std::string>> corpus = {{"a", "a", "b"}, {"a"}};
  Vocabulary v = build_vocab(corpus, cfg);

  SECTION("idf of an everywhere-token is 1") {
    REQUIRE(v.idf(v.index_of("a")) == Catch::Approx(1.0).epsilon(1e-15));
  }
  SECTION("idf of a df=1 token on a 2-doc fit") {
    REQUIRE(v.idf(v.index_of("b")) == Catch::Approx(std::log(1.5) + 1.0).epsilon(1e-12));
    REQUIRE(v.idf(v.index_of("b")) == Catch::Approx(1.405465).margin(1e-6));
  }
  SECTION("weights and normalization by hand") {
    TfIdfVector vec = tfidf_vector({"a", "a", "b"}, v);
    double wa = 2.0 * 1.0;
    double wb = 1.0 * (std::log(1.5) + 1.0);
    double norm = std::sqrt(wa * wa + wb * wb);
    REQUIRE(vec.norm == Catch::Approx(norm).epsilon(1e-12));
    REQUIRE(vec.weight_at(v.index_of("a")) == Catch::Approx(wa / norm).epsilon(1e-12));
    REQUIRE(vec.weight_at(v.index_of("b")) == Catch::Approx(wb / norm).epsilon(1e-12));
    REQUIRE(vec.weight_at(v.index_of("a")) == Catch::Approx(0.818).margin(5e-4));
    REQUIRE(vec.weight_at(v.index_of("b")) == Catch::Approx(0.575).margin(5e-4));
  }
  SECTION("all-OOV gives the empty vector") {
    TfIdfVector vec = tfidf_vector({"zzz"}, v);
    REQUIRE(vec.entries.empty());
    REQUIRE(vec.norm == 0.0);
  }
}

TEST_CASE("idf monotonicity in df") {
  Vocabulary v;
  v.n_docs = 100;
  v.df = {1, 5, 50, 100};
  for (size_t i = 1; i < v.df.size(); ++i) REQUIRE(v.idf(int(i - 1)) > v.idf(int(i)));
}

namespace {

// Independent straight-line recomputation of the TF-IDF pipeline; shares no
// code with the library path.
std::vector<std::vector<double>> tfidf_oracle(const std::vector<std::vector<std::string>>& corpus,
                                              const Vocabulary& vocab) {
  std::vector<std::vector<double>> rows;
  for (const auto& doc : corpus) {
    std::vector<double> dense(vocab.size(), 0.0);
    for (size_t j = 0; j < vocab.size(); ++j) {
      const std::string& token = vocab.index_to_token[j];
      double count = 0;
      for (const auto& t : doc)
        if (t == token) count += 1;
      double idf = std::log((1.0 + double(vocab.n_docs)) / (1.0 + double(vocab.df[j]))) + 1.0;
      dense[j] = count * idf;
    }
    double sq = 0;
    for (double w : dense) sq += w * w;
    if (sq > 0)
      for (double& w : dense) w /= std::sqrt(sq);
    rows.push_back(dense);
  }
  return rows;
}

std::vector<std::vector<std::string>> random_corpus(SplitMix64& rng) {
  int n_docs = 1 + int(rng.next_below(10));
  std::vector<std::vector<std::string>> corpus(n_docs);
  for (auto& doc : corpus) {
    int len = int(rng.next_below(51));
    for (int t = 0; t < len; ++t) doc.push_back("w" + std::to_string(rng.next_below(30)));
  }
  return corpus;
}

}  // namespace

TEST_CASE("oracle equivalence on random corpora") {
  SplitMix64 rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    auto corpus = random_corpus(rng);
    PipelineConfig cfg;
    cfg.min_df = 1;
    Vocabulary vocab;
    try {
      vocab = build_vocab(corpus, cfg);
    } catch (const TextPipeError&) {
      continue;  // all-empty corpus draw
    }
    auto oracle = tfidf_oracle(corpus, vocab);
    auto got = transform_corpus(corpus, vocab);
    REQUIRE(got.size() == oracle.size());
    for (size_t d = 0; d < got.size(); ++d) {
      std::vector<double> dense(vocab.size(), 0.0);
      double sq = 0.0;
      int last_idx = -1;
      for (const auto& [idx, w] : got[d].entries) {
        REQUIRE(idx > last_idx);  // strictly increasing sparse indices
        last_idx = idx;
        dense[size_t(idx)] = w;
        sq += w * w;
      }
      for (size_t j = 0; j < dense.size(); ++j) REQUIRE(dense[j] == oracle[d][j]);
      if (!got[d].entries.empty()) REQUIRE(std::fabs(std::sqrt(sq) - 1.0) < 1e-12);
    }
    ++checked;
  }
  REQUIRE(checked >= 100);
}

TEST_CASE("pipeline determinism") {
  PipelineConfig cfg;
  cfg.stoplist = default_stoplist();
  cfg.min_df = 1;
  std::vector<std::vector<std::string>> corpus;
  for (int d = 0; d < 8; ++d)
    corpus.push_back(preprocess("Senators push the healthcare policies again round " +
                                    std::to_string(d % 3),
                                cfg));
  Vocabulary a = build_vocab(corpus, cfg);
  Vocabulary b = build_vocab(corpus, cfg);
  REQUIRE(a.index_to_token == b.index_to_token);
  REQUIRE(a.df == b.df);
  auto ra = transform_corpus(corpus, a);
  auto rb = transform_corpus(corpus, b);
  for (size_t i = 0; i < ra.size(); ++i) REQUIRE(ra[i].entries == rb[i].entries);
}

TEST_CASE("vocab save/load round trip") {
  PipelineConfig cfg;
  cfg.min_df = 1;
  Vocabulary v = build_vocab({{"alpha", "beta"}, {"beta", "gamma"}}, cfg);
  std::stringstream ss;
  save_vocab(v, ss);
  REQUIRE(ss.str().rfind("#vocab v1 n_docs=2", 0) == 0);
  Vocabulary loaded = load_vocab(ss);
  REQUIRE(loaded.index_to_token == v.index_to_token);
  REQUIRE(loaded.df == v.df);
  REQUIRE(loaded.n_docs == v.n_docs);
}

TEST_CASE("stoplist file parsing") {
  auto path = std::filesystem::temp_directory_path() / "bft_stoplist_test.txt";
  {
    std::ofstream out(path);
    out << "# comment\nthe\n  and  \n\nor\n";
  }
  auto words = load_stoplist(path.string());
  REQUIRE(words == std::set<std::string>({"the", "and", "or"}));
  std::filesystem::remove(path);
}
