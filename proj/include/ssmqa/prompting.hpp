#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmqa/dataset.hpp"
#include "ssmqa/model.hpp"
#include "ssmqa/tokenizer.hpp"

namespace ssmqa {

// Text template with three sections, each introduced by a line holding only
// its tag:
//   [system]   free text, substituted for {system}
//   [example]  one shot; needs {context} {question} {answer}
//   [prompt]   the query; needs {examples} {context} {question}, may use {system}
// Rendered example blocks are each followed by a newline.
struct PromptTemplate {
    std::string system;
    std::string example;
    std::string prompt;
    int max_shots = 8;

    void validate() const;
    static PromptTemplate parse(const std::string& text);
    static PromptTemplate load(const std::string& path);
    std::string serialize() const;
    // Literal text of the template outside placeholders; inserted text must
    // not contain any of these lines or rendering stops being injective.
    std::vector<std::string> delimiters() const;
    // Throws ValidationError naming the record whose text contains a delimiter.
    void check_delimiters(const std::vector<QaRecord>& records) const;
};

struct Shot {
    std::string context;
    std::string question;
    std::string answer;
};

// Throws ValidationError when there are more shots than max_shots, or an
// insertion would merge with its surroundings into one grapheme cluster.
std::string render_prompt(const PromptTemplate& tmpl, const std::string& context, const std::string& question,
                          const std::vector<Shot>& shots);

struct SelectionConfig {
    int samples = 1;          // P
    double temperature = 0.0; // 0 = greedy
    int max_tokens = 32;
    double lambda = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Candidate {
    std::vector<std::int64_t> ids; // generated tokens, eos excluded
    std::string text;
    bool finished = false; // stopped at eos
};

// Greedy returns a single candidate; sampling draws `samples` candidates, the
// i-th from an RNG seeded with derive_seed(seed, i). Throws ValidationError
// when prompt + max_tokens exceeds the model's max_seq_len.
std::vector<Candidate> generate(const SsmModel& model, const std::vector<std::int64_t>& prompt,
                                const SelectionConfig& config, const Vocab& vocab, const ForwardContext& ctx = {});

// Mean log-probability of answer tokens followed by eos, given the prompt.
double answer_logprob(const SsmModel& model, const std::vector<std::int64_t>& prompt,
                      const std::vector<std::int64_t>& answer, const ForwardContext& ctx = {});

struct Selection {
    std::size_t index = 0;
    std::string answer;
    double score = 0;
    std::vector<double> scores;
    std::vector<double> agreement;
};

// score_i = lambda * exp(mean_logprob_i) + (1 - lambda) * mean token-F1 of
// candidate i against the others (1 when there are no others). Ties go to
// the lowest index.
Selection select_best(const std::vector<std::string>& candidates, const std::vector<double>& mean_logprobs,
                      double lambda);
Selection select_best(const std::vector<Candidate>& candidates, const SsmModel& model,
                      const std::vector<std::int64_t>& prompt, const SelectionConfig& config,
                      const ForwardContext& ctx = {});

struct SpanPrediction {
    std::int64_t start = 0; // context-relative, inclusive
    std::int64_t end = 0;
    double score = 0;
    std::string text;
};

// argmax of start[i] + end[j] subject to i <= j and j - i <= max_answer_tokens.
SpanPrediction best_span(const std::vector<double>& start_logits, const std::vector<double>& end_logits,
                         std::int64_t max_answer_tokens = 64);

// Needs prepared records and a model with a span head.
std::vector<SpanPrediction> predict_spans(const SsmModel& model, const std::vector<QaRecord>& records,
                                          const Vocab& vocab, const ForwardContext& ctx = {},
                                          std::int64_t max_answer_tokens = 64, std::size_t batch_size = 16);
SpanPrediction predict_span(const SsmModel& model, const QaRecord& record, const Vocab& vocab,
                            const ForwardContext& ctx = {}, std::int64_t max_answer_tokens = 64);

} // namespace ssmqa
