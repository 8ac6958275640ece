#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmqa/dataset.hpp"

namespace ssmqa {

// Short Devanagari passages (Hindi or Marathi sentence templates) mentioning
// one place, one year and one food among filler sentences; the question asks
// for exactly one of them. lang: "hi", "mr" or "mixed".
std::vector<QaRecord> synthetic_span_qa(std::size_t n, std::uint64_t seed, const std::string& lang = "hi");

// Every word the span-QA generator can emit, for building a closed vocabulary.
std::vector<std::string> synthetic_span_qa_corpus(std::size_t n, std::uint64_t seed, const std::string& lang = "mixed");

// Associative recall over raw ids: k1 v1 k2 v2 ... kp vp <sep> kq, target v(kq).
// Keys and values are drawn without replacement per sequence.
struct KvSample {
    std::vector<std::int64_t> ids;
    std::int64_t target = 0;
};

struct KvTaskSpec {
    int pairs = 8;
    int num_keys = 16;
    int num_values = 16;

    std::int64_t sep_id() const { return 4; }
    std::int64_t key_id(int k) const { return 5 + k; }
    std::int64_t value_id(int v) const { return 5 + num_keys + v; }
    std::int64_t vocab_size() const { return 5 + num_keys + num_values; }
};

std::vector<KvSample> synthetic_kv_recall(std::size_t n, const KvTaskSpec& spec, std::uint64_t seed);

// Records whose answer start grows with context length (planted positive
// dependence) plus independent noise.
std::vector<QaRecord> synthetic_correlated_records(std::size_t n, std::uint64_t seed);

} // namespace ssmqa
