#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "bft/ingest.hpp"
#include "testutil.hpp"

using namespace bft;

namespace {

struct TempCsv {
  std::string path;
  explicit TempCsv(const std::string& content) {
    path = (std::filesystem::temp_directory_path() /
            ("bft_ingest_" + std::to_string(::getpid()) + "_" +
             std::to_string(reinterpret_cast<uintptr_t>(this)) + ".csv"))
               .string();
    std::ofstream out(path, std::ios::binary);
    out << content;
  }
  ~TempCsv() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("load_csv happy path") {
  TempCsv csv(
      "text,type\n"
      "\"Trump says healthcare reform push may need additional money\",Real\n"
      "\"China's Xi, Trump discuss global hot-spot issues\",Real\n"
      "Trump has talked to top lawmakers about immigration reform,Real\n");
  Dataset ds = load_csv(csv.path, "text", "type", LabelMap::defaults());
  REQUIRE(ds.records.size() == 3);
  for (const Record& r : ds.records) REQUIRE(r.label == Label::Real);
  // quoted comma stays inside the field
  REQUIRE(ds.records[1].text == "China's Xi, Trump discuss global hot-spot issues");
}

TEST_CASE("load_csv quoting: embedded newline and escaped quote") {
  TempCsv csv(
      "text,type\n"
      "\"line one\nline two\",fake\n"
      "\"he said \"\"hi\"\"\",real\n");
  Dataset ds = load_csv(csv.path, "text", "type", LabelMap::defaults());
  REQUIRE(ds.records.size() == 2);
  REQUIRE(ds.records[0].text == "line one\nline two");
  REQUIRE(ds.records[0].label == Label::Fake);
  REQUIRE(ds.records[1].text == "he said \"hi\"");
}

TEST_CASE("load_csv error cases") {
  SECTION("missing file") {
    REQUIRE_THROWS_WITH(load_csv("/no/such/file.csv", "text", "type", LabelMap::defaults()),
                        Catch::Matchers::ContainsSubstring("MissingFile"));
  }
  SECTION("missing column") {
    TempCsv csv("text,label\nfoo,Real\n");
    REQUIRE_THROWS_WITH(load_csv(csv.path, "text", "type", LabelMap::defaults()),
                        Catch::Matchers::ContainsSubstring("MissingColumn: type"));
  }
  SECTION("header only") {
    TempCsv csv("text,type\n");
    REQUIRE_THROWS_WITH(load_csv(csv.path, "text", "type", LabelMap::defaults()),
                        Catch::Matchers::ContainsSubstring("EmptyDataset"));
  }
  SECTION("unmapped label reports the row") {
    TempCsv csv("text,type\nfoo,Real\nbar,Bogus\n");
    REQUIRE_THROWS_WITH(load_csv(csv.path, "text", "type", LabelMap::defaults()),
                        Catch::Matchers::ContainsSubstring("UnmappedLabel: row 3"));
  }
  SECTION("empty text reports the row") {
    TempCsv csv("text,type\nfoo,Real\n\"  \",Fake\n");
    REQUIRE_THROWS_WITH(load_csv(csv.path, "text", "type", LabelMap::defaults()),
                        Catch::Matchers::ContainsSubstring("EmptyText: row 3"));
  }
}

TEST_CASE("label normalization is trimmed and case-insensitive") {
  TempCsv csv("text,type\nfoo,REAL \nbar, fake\n");
  Dataset ds = load_csv(csv.path, "text", "type", LabelMap::defaults());
  REQUIRE(ds.records[0].label == Label::Real);
  REQUIRE(ds.records[1].label == Label::Fake);
}

TEST_CASE("class_counts") {
  Dataset ds;
  for (int i = 0; i < 3; ++i) ds.records.push_back({"r", Label::Real});
  for (int i = 0; i < 2; ++i) ds.records.push_back({"f", Label::Fake});
  auto counts = class_counts(ds);
  REQUIRE(counts[Label::Real] == 3);
  REQUIRE(counts[Label::Fake] == 2);

  Dataset empty;
  auto zero = class_counts(empty);
  REQUIRE(zero[Label::Real] == 0);
  REQUIRE(zero[Label::Fake] == 0);
}

TEST_CASE("split sizes per the rounding rule") {
  SECTION("5000 rows at 7:3 gives exactly 3500/1500") {
    Dataset ds = testutil::synthetic_corpus(5000, 3, 1);
    auto [train, test] = split(ds, SplitSpec{0.7, 42, true});
    REQUIRE(train.records.size() == 3500);
    REQUIRE(test.records.size() == 1500);
  }
  SECTION("10 rows balanced: per-class floor, leftover to train in class order") {
    Dataset ds = testutil::synthetic_corpus(10, 3, 2);  // 5 Real + 5 Fake
    auto [train, test] = split(ds, SplitSpec{0.7, 42, true});
    REQUIRE(train.records.size() == 7);
    REQUIRE(test.records.size() == 3);
    auto tc = class_counts(train);
    // floor(0.7*5)=3 per class, leftover 1 goes to Real
    REQUIRE(tc[Label::Real] == 4);
    REQUIRE(tc[Label::Fake] == 3);
  }
  SECTION("degenerate split") {
    Dataset ds;
    ds.records.push_back({"x", Label::Real});
    REQUIRE_THROWS_WITH(split(ds, SplitSpec{0.7, 0, false}),
                        Catch::Matchers::ContainsSubstring("DegenerateSplit"));
  }
  SECTION("stratified with a missing class") {
    Dataset ds;
    ds.records.push_back({"x", Label::Real});
    ds.records.push_back({"y", Label::Real});
    REQUIRE_THROWS_WITH(split(ds, SplitSpec{0.5, 0, true}),
                        Catch::Matchers::ContainsSubstring("MissingClass"));
  }
}

TEST_CASE("split is a deterministic partition") {
  Dataset ds = testutil::synthetic_corpus(101, 4, 3);
  for (uint64_t seed : {0ULL, 1ULL, 12345ULL}) {
    SplitSpec spec{0.7, seed, true};
    auto [ta, sa] = split_indices(ds, spec);
    auto [tb, sb] = split_indices(ds, spec);
    REQUIRE(ta == tb);  // determinism
    REQUIRE(sa == sb);

    // partition: disjoint, union covers everything
    std::set<size_t> all(ta.begin(), ta.end());
    for (size_t i : sa) {
      REQUIRE(all.count(i) == 0);
      all.insert(i);
    }
    REQUIRE(all.size() == ds.records.size());
  }

  // different seeds give different assignments (overwhelmingly likely)
  auto [t0, s0] = split_indices(ds, SplitSpec{0.7, 0, true});
  auto [t1, s1] = split_indices(ds, SplitSpec{0.7, 999, true});
  REQUIRE(t0 != t1);
}

TEST_CASE("stratification keeps per-class fractions within one record") {
  Dataset ds = testutil::synthetic_corpus(137, 3, 4);  // odd sizes on purpose
  auto counts = class_counts(ds);
  auto [train, test] = split(ds, SplitSpec{0.7, 5, true});
  auto tc = class_counts(train);
  for (Label c : {Label::Real, Label::Fake}) {
    double per_class = double(tc[c]);
    double target = 0.7 * double(counts[c]);
    REQUIRE(std::fabs(per_class - target) < 1.0);
  }
}
