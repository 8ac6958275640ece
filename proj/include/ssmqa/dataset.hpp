#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmqa/tokenizer.hpp"

namespace ssmqa {

struct QaRecord {
    std::string id;
    std::string lang = "other"; // hi | mr | other
    std::string context;
    std::string question;
    std::string answer;
    std::int64_t answer_start = 0; // code-point index into context

    // Filled by prepare_record.
    std::vector<std::int64_t> token_ids; // [sos] question [eos] context [eos]
    std::vector<int> attention_mask;
    std::int64_t context_offset = -1; // position of the first context token
    std::int64_t context_len = 0;     // number of context tokens
    std::int64_t token_start = -1;    // inclusive, relative to the context
    std::int64_t token_end = -1;

    bool aligned() const { return token_start >= 0; }
};

// Throws ValidationError naming the record when answer_start is out of
// bounds or the context slice differs from the answer.
void validate_record(const QaRecord& r);

// Input: {"data":[{"id","lang","context","question","answer","answer_start"}]}.
// Aligned fields, when present, are read back too.
std::vector<QaRecord> records_from_json(const nlohmann::json& j);
std::vector<QaRecord> load_squad_style(const std::string& path);
// Canonical form; load(save(x)) == x.
nlohmann::json records_to_json(const std::vector<QaRecord>& records);
void save_records(const std::vector<QaRecord>& records, const std::string& path);

struct TokenSpan {
    std::int64_t start = 0;
    std::int64_t end = 0; // inclusive
};

// Smallest token span of the encoded context that covers the answer's
// characters at answer_start. Throws std::out_of_range for a bad
// answer_start and AlignmentError when the decoded span does not contain
// the answer (for example when part of it encodes to unk).
TokenSpan align_span(const std::string& context, const std::string& answer, std::int64_t answer_start,
                     const Vocab& vocab);

// Encodes, aligns and masks one record in place. Contexts are left-truncated
// so the sequence fits max_len; the answer must survive truncation.
void prepare_record(QaRecord& r, const Vocab& vocab, std::int64_t max_len);
// Same layout for a record without an answer (inference). Throws
// ValidationError when question and context exceed max_len.
void prepare_query(QaRecord& r, const Vocab& vocab, std::int64_t max_len);

struct PaddedBatch {
    std::int64_t batch = 0;
    std::int64_t max_len = 0;
    std::vector<std::int64_t> ids; // [batch, max_len] row-major
    std::vector<int> mask;
};

// Right-pads to max_len; longer sequences keep their last max_len tokens.
// Throws std::invalid_argument when max_len < 1.
PaddedBatch pad_and_mask(const std::vector<std::vector<std::int64_t>>& sequences, std::int64_t max_len,
                         std::int64_t pad_id = kPadId);
std::vector<std::vector<std::int64_t>> strip_padding(const PaddedBatch& batch);

// System / user / assistant rendering. Placeholders: {system} in `system`,
// {context} and {question} in `user`. The answer follows `assistant`.
struct ChatTemplate {
    std::string system_message;
    std::string system = "{system}\n";
    std::string user = "{context}\n{question}\n";
    std::string assistant = "";

    void validate() const;
    static ChatTemplate from_json(const nlohmann::json& j);
    static ChatTemplate load(const std::string& path);
    nlohmann::json to_json() const;
};

struct ChatExample {
    std::vector<std::int64_t> ids;
    std::vector<int> loss_mask; // 1 on answer tokens and the closing eos
    std::int64_t answer_begin = 0;
    std::int64_t truncated = 0; // context tokens dropped from the left
};

// [sos] system user assistant answer [eos]. Throws ValidationError if the
// sequence cannot fit even with the whole context removed.
ChatExample build_chat_example(const QaRecord& record, const ChatTemplate& tmpl, const Vocab& vocab,
                               std::int64_t max_len = 2048);
// Prompt part only (no answer, no eos), for generation.
std::vector<std::int64_t> build_chat_prompt(const std::string& context, const std::string& question,
                                            const ChatTemplate& tmpl, const Vocab& vocab, std::int64_t max_len);
// All rendered text of a record, for vocab training.
std::vector<std::string> chat_texts(const QaRecord& record, const ChatTemplate& tmpl);

// Expected split sizes per language, as published for the source corpus.
struct DatasetManifest {
    struct Split {
        std::string path;
        std::int64_t count = 0;
    };
    std::string name;
    std::string lang;
    std::map<std::string, Split> splits;

    static DatasetManifest load(const std::string& path);
    static DatasetManifest from_json(const nlohmann::json& j);
    std::int64_t count(const std::string& split) const;
};

struct FeatureSummary {
    double mean = 0, stddev = 0, min = 0, max = 0;
};

struct DatasetStats {
    static constexpr const char* kFeatures[4] = {"context_len", "question_len", "answer_len", "answer_start"};
    std::map<std::string, std::int64_t> counts; // per language
    std::vector<std::string> ids;
    std::vector<std::string> langs;
    // features[k][i]: feature k of record i, in code points
    std::vector<std::vector<double>> features;
    FeatureSummary summary[4];
    double correlation[4][4] = {};
    std::map<std::string, std::vector<std::vector<double>>> correlation_by_lang;
};

// Pearson correlation; 0 when either side is constant (1 for x with itself).
double pearson(const std::vector<double>& x, const std::vector<double>& y);
// Throws ValidationError for fewer than 2 records.
DatasetStats compute_stats(const std::vector<QaRecord>& records);
// lengths.csv, answer_start_vs_context.csv, correlation.csv,
// correlation_<lang>.csv and summary.json.
void write_stats(const DatasetStats& stats, const std::string& out_dir);

} // namespace ssmqa
