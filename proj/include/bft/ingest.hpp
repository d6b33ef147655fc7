#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bft/prng.hpp"

namespace bft {

enum class Label : int { Real = 0, Fake = 1 };

inline const char* label_name(Label l) { return l == Label::Real ? "Real" : "Fake"; }

struct Record {
  std::string text;
  Label label = Label::Real;
};

struct Dataset {
  std::vector<Record> records;
  std::string source;

  size_t size() const { return records.size(); }
};

struct SplitSpec {
  double train_fraction = 0.7;
  uint64_t seed = 0;
  bool stratified = true;
};

struct IngestError : std::runtime_error {
  explicit IngestError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string lower(std::string s) {
  for (char& c : s) c = char(std::tolower((unsigned char)c));
  return s;
}

// One RFC-style CSV record (quoted fields may contain commas, quotes and
// embedded newlines). Returns false at EOF with no data consumed.
inline bool read_csv_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  int ch;
  while ((ch = in.get()) != EOF) {
    any = true;
    char c = char(ch);
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get();
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
    } else {
      if (c == '"') {
        in_quotes = true;
      } else if (c == ',') {
        fields.push_back(std::move(field));
        field.clear();
      } else if (c == '\n') {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        fields.push_back(std::move(field));
        return true;
      } else {
        field += c;
      }
    }
  }
  if (!any) return false;
  if (!field.empty() && field.back() == '\r') field.pop_back();
  fields.push_back(std::move(field));
  return true;
}

}  // namespace detail

// Raw label string -> class, matched case-insensitively after trimming.
struct LabelMap {
  // e.g. {"real": Real, "true": Real, "fake": Fake}
  std::map<std::string, Label> entries;

  static LabelMap defaults() {
    return LabelMap{{{"real", Label::Real}, {"true", Label::Real},
                     {"fake", Label::Fake}, {"false", Label::Fake}}};
  }

  bool lookup(const std::string& raw, Label& out) const {
    auto it = entries.find(detail::lower(detail::trim(raw)));
    if (it == entries.end()) return false;
    out = it->second;
    return true;
  }
};

// Loads a labeled corpus from CSV. Any malformed row aborts the load with a
// row-numbered error.
inline Dataset load_csv(const std::string& path, const std::string& text_column,
                        const std::string& label_column, const LabelMap& label_map) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("MissingFile: " + path);

  std::vector<std::string> fields;
  if (!detail::read_csv_record(in, fields)) throw IngestError("EmptyDataset: " + path + " has no header");

  int text_idx = -1, label_idx = -1;
  for (size_t i = 0; i < fields.size(); ++i) {
    std::string h = detail::lower(detail::trim(fields[i]));
    if (h == detail::lower(text_column)) text_idx = int(i);
    if (h == detail::lower(label_column)) label_idx = int(i);
  }
  if (text_idx < 0) throw IngestError("MissingColumn: " + text_column);
  if (label_idx < 0) throw IngestError("MissingColumn: " + label_column);

  Dataset ds;
  ds.source = path;
  int row = 1;  // header is row 1
  while (detail::read_csv_record(in, fields)) {
    ++row;
    if (fields.size() == 1 && fields[0].empty()) continue;  // trailing blank line
    if (int(fields.size()) <= std::max(text_idx, label_idx))
      throw IngestError("MissingColumn: row " + std::to_string(row) + " has only " +
                        std::to_string(fields.size()) + " fields");
    std::string text = detail::trim(fields[text_idx]);
    if (text.empty()) throw IngestError("EmptyText: row " + std::to_string(row));
    Label label;
    if (!label_map.lookup(fields[label_idx], label))
      throw IngestError("UnmappedLabel: row " + std::to_string(row) + " value \"" +
                        fields[label_idx] + "\"");
    ds.records.push_back(Record{std::move(text), label});
  }
  if (ds.records.empty()) throw IngestError("EmptyDataset: " + path + " has 0 data rows");
  return ds;
}

inline std::map<Label, size_t> class_counts(const Dataset& ds) {
  std::map<Label, size_t> counts{{Label::Real, 0}, {Label::Fake, 0}};
  for (const Record& r : ds.records) counts[r.label]++;
  return counts;
}

namespace detail {

inline void shuffle_indices(std::vector<size_t>& idx, SplitMix64& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    size_t j = size_t(rng.next_below(i));
    std::swap(idx[i - 1], idx[j]);
  }
}

inline size_t round_half_up(double x) { return size_t(std::floor(x + 0.5)); }

}  // namespace detail

// Seeded train/test assignment as original-record indices, ascending per
// side. Stratified by default: per-class floor of the train fraction, with
// the leftover up to round(fraction*N) assigned to train in class order
// (Real first). Identical (dataset, spec) always produce identical splits.
inline std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(const Dataset& ds,
                                                                         const SplitSpec& spec) {
  size_t n = ds.records.size();
  if (n < 2) throw IngestError("DegenerateSplit: dataset of size " + std::to_string(n));
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw IngestError("DegenerateSplit: train_fraction must lie in (0,1)");

  size_t target_train = detail::round_half_up(spec.train_fraction * double(n));
  if (target_train == 0 || target_train == n)
    throw IngestError("DegenerateSplit: split " + std::to_string(target_train) + "/" +
                      std::to_string(n - target_train));

  std::vector<size_t> train_idx, test_idx;
  if (spec.stratified) {
    const Label classes[2] = {Label::Real, Label::Fake};
    std::vector<std::vector<size_t>> per_class(2);
    for (size_t i = 0; i < n; ++i) per_class[int(ds.records[i].label)].push_back(i);
    for (int c = 0; c < 2; ++c)
      if (per_class[c].empty())
        throw IngestError(std::string("MissingClass: no ") + label_name(classes[c]) + " records");

    std::vector<size_t> take(2);
    size_t base_total = 0;
    for (int c = 0; c < 2; ++c) {
      take[c] = size_t(std::floor(spec.train_fraction * double(per_class[c].size())));
      base_total += take[c];
    }
    // Leftover toward the global rounded target, in class order.
    for (int c = 0; c < 2 && base_total < target_train; ++c) {
      if (take[c] < per_class[c].size()) {
        take[c]++;
        base_total++;
      }
    }
    for (int c = 0; c < 2; ++c) {
      SplitMix64 rng(seed_stream(spec.seed, "split", uint64_t(c)));
      detail::shuffle_indices(per_class[c], rng);
      if (take[c] == 0 || take[c] == per_class[c].size())
        throw IngestError(std::string("DegenerateSplit: class ") + label_name(classes[c]) +
                          " would have an empty side");
      for (size_t i = 0; i < per_class[c].size(); ++i)
        (i < take[c] ? train_idx : test_idx).push_back(per_class[c][i]);
    }
  } else {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t(0));
    SplitMix64 rng(seed_stream(spec.seed, "split"));
    detail::shuffle_indices(idx, rng);
    train_idx.assign(idx.begin(), idx.begin() + target_train);
    test_idx.assign(idx.begin() + target_train, idx.end());
  }

  // Keep file order within each side for reproducible downstream iteration.
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {std::move(train_idx), std::move(test_idx)};
}

inline std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
  auto [train_idx, test_idx] = split_indices(ds, spec);
  Dataset train, test;
  train.source = ds.source + "#train";
  test.source = ds.source + "#test";
  for (size_t i : train_idx) train.records.push_back(ds.records[i]);
  for (size_t i : test_idx) test.records.push_back(ds.records[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace bft
