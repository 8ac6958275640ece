#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmqa/model.hpp"
#include "ssmqa/tokenizer.hpp"

namespace ssmqa {

// NFC, ASCII punctuation removed, whitespace trimmed and collapsed to single
// spaces, trailing dandas (। ॥) stripped.
std::string normalize(std::string_view text);

using MetricTokenizer = std::function<std::vector<std::string>(const std::string&)>;
// Whitespace split of the normalized text.
std::vector<std::string> word_tokens(const std::string& text);
// Surface pieces of the normalized text under `vocab`, whitespace dropped.
MetricTokenizer vocab_tokenizer(const Vocab& vocab);

double exact_match(const std::string& pred, const std::string& gold);
double token_f1(const std::string& pred, const std::string& gold, const MetricTokenizer& tok = word_tokens);
// n-gram orders 1..min(n_max, |pred|), no smoothing; BP = min(1, exp(1 - |gold|/|pred|)).
double bleu(const std::string& pred, const std::string& gold, int n_max = 4,
            const MetricTokenizer& tok = word_tokens);
double rouge_l(const std::string& pred, const std::string& gold, const MetricTokenizer& tok = word_tokens);
double rouge_n(const std::string& pred, const std::string& gold, int n, const MetricTokenizer& tok = word_tokens);

// One embedding row per token.
using TokenEmbedder = std::function<std::vector<std::vector<double>>(const std::string&)>;
// Contextual final hidden states of `model` over the normalized text.
TokenEmbedder model_embedder(const SsmModel& model, const Vocab& vocab, const ForwardContext& ctx = {});
// Greedy cosine matching, cosines clipped to [0, 1]; 0 if either side is empty.
double embed_score(const std::string& pred, const std::string& gold, const TokenEmbedder& embed);

struct MetricSample {
    std::string id;
    std::string lang;
    std::string prediction;
    std::string gold;
};

struct MetricRow {
    std::string id;
    std::string lang;
    std::string prediction;
    std::string gold;
    double em = 0, f1 = 0, bleu = 0, rouge_l = 0, embed = 0;
    double rouge_1 = 0, rouge_2 = 0; // only filled with MetricOptions::rouge_n
};

struct MetricScores {
    double em = 0, f1 = 0, bleu = 0, rouge_l = 0, embed = 0;
    double rouge_1 = 0, rouge_2 = 0;
    std::int64_t count = 0;
};

struct MetricOptions {
    MetricTokenizer tokenizer = word_tokens;
    TokenEmbedder embedder; // required
    bool rouge_n = false;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    // Per language plus "all".
    std::map<std::string, MetricScores> corpus;
    bool has_rouge_n = false;

    nlohmann::json to_json() const;
    std::string rows_csv() const;
    std::string corpus_csv() const;
    // <prefix>.json, <prefix>.csv (rows), <prefix>_corpus.csv
    void write(const std::string& prefix) const;
};

MetricReport score_samples(const std::vector<MetricSample>& samples, const MetricOptions& options);

} // namespace ssmqa
