#include "ssmqa/prompting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "ssmqa/errors.hpp"
#include "ssmqa/metrics.hpp"
#include "ssmqa/ops.hpp"
#include "ssmqa/rng.hpp"
#include "ssmqa/serialize.hpp"
#include "ssmqa/unicode.hpp"

namespace ssmqa {

namespace {

bool has(const std::string& s, const char* slot) { return s.find(slot) != std::string::npos; }

// Single pass, so inserted text is never scanned for placeholders. Records
// the byte span of every non-empty insertion.
std::string substitute(const std::string& tmpl, const std::map<std::string, std::string>& values,
                       std::vector<std::pair<std::size_t, std::size_t>>& spans) {
    std::string out;
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const std::size_t open = tmpl.find('{', pos);
        if (open == std::string::npos) {
            break;
        }
        const std::size_t close = tmpl.find('}', open);
        if (close == std::string::npos) {
            break;
        }
        const auto it = values.find(tmpl.substr(open + 1, close - open - 1));
        if (it == values.end()) {
            out.append(tmpl, pos, open + 1 - pos);
            pos = open + 1;
            continue;
        }
        out.append(tmpl, pos, open - pos);
        if (!it->second.empty()) {
            spans.emplace_back(out.size(), out.size() + it->second.size());
        }
        out += it->second;
        pos = close + 1;
    }
    out.append(tmpl, pos, std::string::npos);
    return out;
}

void check_clusters(const std::string& text, const std::vector<std::pair<std::size_t, std::size_t>>& spans) {
    if (spans.empty()) {
        return;
    }
    const auto b = unicode::grapheme_boundaries(text);
    const std::set<std::size_t> bounds(b.begin(), b.end());
    for (const auto& [s, e] : spans) {
        if (!bounds.count(s) || !bounds.count(e)) {
            throw ValidationError("prompt template: inserted text at byte " + std::to_string(s) +
                                  " fuses with the surrounding template into one grapheme cluster");
        }
    }
}

std::string render_checked(const std::string& tmpl, const std::map<std::string, std::string>& values) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::string out = substitute(tmpl, values, spans);
    check_clusters(out, spans);
    return out;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (true) {
        const std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) {
            lines.push_back(text.substr(pos));
            break;
        }
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return lines;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Row t of [1, T, V] logits as log-probabilities.
std::vector<double> log_softmax_row(std::span<const double> logits, std::size_t t, std::size_t V) {
    std::vector<double> out(logits.begin() + static_cast<std::ptrdiff_t>(t * V),
                            logits.begin() + static_cast<std::ptrdiff_t>((t + 1) * V));
    const double mx = *std::max_element(out.begin(), out.end());
    double z = 0;
    for (double v : out) {
        z += std::exp(v - mx);
    }
    const double lz = mx + std::log(z);
    for (double& v : out) {
        v -= lz;
    }
    return out;
}

} // namespace

void PromptTemplate::validate() const {
    for (const char* slot : {"{context}", "{question}", "{answer}"}) {
        if (!has(example, slot)) {
            throw ValidationError(std::string("prompt template: [example] lacks ") + slot);
        }
    }
    for (const char* slot : {"{examples}", "{context}", "{question}"}) {
        if (!has(prompt, slot)) {
            throw ValidationError(std::string("prompt template: [prompt] lacks ") + slot);
        }
    }
    if (has(prompt, "{answer}")) {
        throw ValidationError("prompt template: [prompt] must not contain {answer}");
    }
    if (max_shots < 0) {
        throw ValidationError("prompt template: max_shots must be >= 0");
    }
}

PromptTemplate PromptTemplate::parse(const std::string& text) {
    auto lines = split_lines(text);
    if (!lines.empty() && lines.back().empty()) {
        lines.pop_back();
    }
    std::map<std::string, std::vector<std::string>> sections;
    std::string current;
    for (const auto& raw : lines) {
        const std::string line = !raw.empty() && raw.back() == '\r' ? raw.substr(0, raw.size() - 1) : raw;
        if (line == "[system]" || line == "[example]" || line == "[prompt]") {
            current = line.substr(1, line.size() - 2);
            if (sections.count(current)) {
                throw ValidationError("prompt template: duplicate section " + line);
            }
            sections[current];
            continue;
        }
        if (current.empty()) {
            if (!trim(line).empty()) {
                throw ValidationError("prompt template: text before the first section tag");
            }
            continue;
        }
        sections[current].push_back(line);
    }
    auto join = [&](const std::string& name) {
        const auto it = sections.find(name);
        if (it == sections.end()) {
            throw ValidationError("prompt template: missing [" + name + "] section");
        }
        std::string s;
        for (std::size_t i = 0; i < it->second.size(); ++i) {
            s += (i ? "\n" : "") + it->second[i];
        }
        return s;
    };
    PromptTemplate t;
    t.system = join("system");
    t.example = join("example");
    t.prompt = join("prompt");
    t.validate();
    return t;
}

PromptTemplate PromptTemplate::load(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::runtime_error& e) {
        throw ValidationError(e.what());
    }
    unicode::validate_utf8(text);
    return parse(text);
}

std::string PromptTemplate::serialize() const {
    return "[system]\n" + system + "\n[example]\n" + example + "\n[prompt]\n" + prompt + "\n";
}

std::vector<std::string> PromptTemplate::delimiters() const {
    std::set<std::string> out;
    for (const std::string* section : {&example, &prompt}) {
        std::string literal = *section;
        for (const char* slot : {"{context}", "{question}", "{answer}", "{examples}", "{system}"}) {
            std::size_t pos;
            while ((pos = literal.find(slot)) != std::string::npos) {
                literal.replace(pos, std::string(slot).size(), "\n");
            }
        }
        for (const auto& line : split_lines(literal)) {
            const auto t = trim(line);
            if (!t.empty()) {
                out.insert(t);
            }
        }
    }
    return {out.begin(), out.end()};
}

void PromptTemplate::check_delimiters(const std::vector<QaRecord>& records) const {
    const auto delims = delimiters();
    for (const auto& r : records) {
        for (const auto& d : delims) {
            for (const std::string* field : {&r.context, &r.question, &r.answer}) {
                if (field->find(d) != std::string::npos) {
                    throw ValidationError("record '" + r.id + "' contains the template delimiter '" + d + "'");
                }
            }
        }
    }
}

std::string render_prompt(const PromptTemplate& tmpl, const std::string& context, const std::string& question,
                          const std::vector<Shot>& shots) {
    tmpl.validate();
    if (static_cast<int>(shots.size()) > tmpl.max_shots) {
        throw ValidationError("prompt template holds at most " + std::to_string(tmpl.max_shots) + " examples, got " +
                              std::to_string(shots.size()));
    }
    std::string examples;
    for (const auto& s : shots) {
        examples += render_checked(tmpl.example, {{"context", s.context}, {"question", s.question}, {"answer", s.answer}});
        examples += "\n";
    }
    return render_checked(tmpl.prompt, {{"system", tmpl.system},
                                        {"examples", examples},
                                        {"context", context},
                                        {"question", question}});
}

void SelectionConfig::validate() const {
    if (samples < 1) {
        throw ValidationError("selection: samples (P) must be >= 1");
    }
    if (lambda < 0.0 || lambda > 1.0) {
        throw ValidationError("selection: lambda must lie in [0, 1]");
    }
    if (max_tokens < 1) {
        throw ValidationError("selection: max_tokens must be >= 1");
    }
    if (temperature < 0.0 || !std::isfinite(temperature)) {
        throw ValidationError("selection: temperature must be finite and >= 0");
    }
}

std::vector<Candidate> generate(const SsmModel& model, const std::vector<std::int64_t>& prompt,
                                const SelectionConfig& config, const Vocab& vocab, const ForwardContext& ctx) {
    config.validate();
    if (prompt.empty()) {
        throw ValidationError("generate: empty prompt");
    }
    const std::int64_t limit = model.config().max_seq_len;
    if (static_cast<std::int64_t>(prompt.size()) + config.max_tokens > limit) {
        throw ValidationError("prompt of " + std::to_string(prompt.size()) + " tokens plus " +
                              std::to_string(config.max_tokens) + " new tokens exceeds max_seq_len " +
                              std::to_string(limit));
    }
    NoGradGuard guard;
    ForwardContext eval = ctx;
    eval.training = false;
    const bool greedy = config.temperature == 0.0;
    const int n = greedy ? 1 : config.samples;
    const auto V = static_cast<std::size_t>(model.config().vocab_size);
    std::vector<Candidate> out;
    for (int c = 0; c < n; ++c) {
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(c)));
        Candidate cand;
        std::vector<std::int64_t> ids = prompt;
        for (int step = 0; step < config.max_tokens; ++step) {
            const auto T = static_cast<std::int64_t>(ids.size());
            const Tensor logits = model.logits(ids, 1, T, eval);
            const auto data = logits.data();
            const std::size_t row = static_cast<std::size_t>(T - 1) * V;
            std::vector<double> l(data.begin() + static_cast<std::ptrdiff_t>(row),
                                  data.begin() + static_cast<std::ptrdiff_t>(row + V));
            // pad and sos are never valid continuations
            l[static_cast<std::size_t>(kPadId)] = -std::numeric_limits<double>::infinity();
            l[static_cast<std::size_t>(kSosId)] = -std::numeric_limits<double>::infinity();
            std::int64_t next = 0;
            if (greedy) {
                next = std::max_element(l.begin(), l.end()) - l.begin();
            } else {
                const double mx = *std::max_element(l.begin(), l.end());
                double z = 0;
                for (double& v : l) {
                    v = std::exp((v - mx) / config.temperature);
                    z += v;
                }
                double u = rng.uniform() * z;
                next = static_cast<std::int64_t>(V) - 1;
                for (std::size_t k = 0; k < V; ++k) {
                    u -= l[k];
                    if (u < 0 && l[k] > 0) {
                        next = static_cast<std::int64_t>(k);
                        break;
                    }
                }
            }
            if (next == kEosId) {
                cand.finished = true;
                break;
            }
            cand.ids.push_back(next);
            ids.push_back(next);
        }
        cand.text = decode(cand.ids, vocab);
        out.push_back(std::move(cand));
    }
    return out;
}

double answer_logprob(const SsmModel& model, const std::vector<std::int64_t>& prompt,
                      const std::vector<std::int64_t>& answer, const ForwardContext& ctx) {
    if (prompt.empty()) {
        throw ValidationError("answer_logprob: empty prompt");
    }
    NoGradGuard guard;
    ForwardContext eval = ctx;
    eval.training = false;
    std::vector<std::int64_t> ids = prompt;
    ids.insert(ids.end(), answer.begin(), answer.end());
    ids.push_back(kEosId);
    const auto T = static_cast<std::int64_t>(ids.size());
    if (T - 1 > model.config().max_seq_len) {
        throw ValidationError("answer_logprob: sequence exceeds max_seq_len");
    }
    // the final eos is only a target, never an input
    const std::vector<std::int64_t> inputs(ids.begin(), ids.end() - 1);
    const Tensor logits = model.logits(inputs, 1, T - 1, eval);
    const auto V = static_cast<std::size_t>(model.config().vocab_size);
    double total = 0;
    for (std::size_t t = prompt.size() - 1; t + 1 < ids.size(); ++t) {
        total += log_softmax_row(logits.data(), t, V)[static_cast<std::size_t>(ids[t + 1])];
    }
    return total / static_cast<double>(answer.size() + 1);
}

Selection select_best(const std::vector<std::string>& candidates, const std::vector<double>& mean_logprobs,
                      double lambda) {
    if (candidates.empty()) {
        throw std::invalid_argument("select_best: no candidates");
    }
    if (mean_logprobs.size() != candidates.size()) {
        throw std::invalid_argument("select_best: one log-probability per candidate required");
    }
    if (lambda < 0.0 || lambda > 1.0) {
        throw std::invalid_argument("select_best: lambda must lie in [0, 1]");
    }
    Selection sel;
    const std::size_t n = candidates.size();
    for (std::size_t i = 0; i < n; ++i) {
        double agree = 1.0;
        if (n > 1) {
            agree = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i) {
                    agree += token_f1(candidates[i], candidates[j]);
                }
            }
            agree /= static_cast<double>(n - 1);
        }
        const double s = lambda * std::exp(mean_logprobs[i]) + (1.0 - lambda) * agree;
        sel.agreement.push_back(agree);
        sel.scores.push_back(s);
        if (i == 0 || s > sel.score) {
            sel.score = s;
            sel.index = i;
        }
    }
    sel.answer = candidates[sel.index];
    return sel;
}

Selection select_best(const std::vector<Candidate>& candidates, const SsmModel& model,
                      const std::vector<std::int64_t>& prompt, const SelectionConfig& config,
                      const ForwardContext& ctx) {
    std::vector<std::string> texts;
    std::vector<double> lp;
    for (const auto& c : candidates) {
        texts.push_back(c.text);
        lp.push_back(config.lambda > 0.0 ? answer_logprob(model, prompt, c.ids, ctx) : 0.0);
    }
    return select_best(texts, lp, config.lambda);
}

SpanPrediction best_span(const std::vector<double>& start_logits, const std::vector<double>& end_logits,
                         std::int64_t max_answer_tokens) {
    if (start_logits.empty() || start_logits.size() != end_logits.size()) {
        throw ValidationError("best_span: need equal, non-empty start and end logits");
    }
    if (max_answer_tokens < 0) {
        throw std::invalid_argument("best_span: max_answer_tokens must be >= 0");
    }
    const auto n = static_cast<std::int64_t>(start_logits.size());
    SpanPrediction best;
    best.score = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = i; j < n && j - i <= max_answer_tokens; ++j) {
            const double s = start_logits[static_cast<std::size_t>(i)] + end_logits[static_cast<std::size_t>(j)];
            if (s > best.score) {
                best.score = s;
                best.start = i;
                best.end = j;
            }
        }
    }
    return best;
}

std::vector<SpanPrediction> predict_spans(const SsmModel& model, const std::vector<QaRecord>& records,
                                          const Vocab& vocab, const ForwardContext& ctx,
                                          std::int64_t max_answer_tokens, std::size_t batch_size) {
    if (!model.has_span_head()) {
        throw ValidationError("predict_span: model has no span head");
    }
    for (const auto& r : records) {
        if (r.context_offset < 0 || r.token_ids.empty()) {
            throw ValidationError("predict_span: record '" + r.id + "' is not prepared");
        }
        if (r.context_len <= 0) {
            throw ValidationError("predict_span: record '" + r.id + "' has an empty context");
        }
    }
    NoGradGuard guard;
    ForwardContext eval = ctx;
    eval.training = false;
    std::vector<SpanPrediction> out;
    batch_size = std::max<std::size_t>(1, batch_size);
    for (std::size_t b0 = 0; b0 < records.size(); b0 += batch_size) {
        const std::size_t b1 = std::min(records.size(), b0 + batch_size);
        std::vector<std::vector<std::int64_t>> seqs;
        std::size_t T = 0;
        for (std::size_t i = b0; i < b1; ++i) {
            seqs.push_back(records[i].token_ids);
            T = std::max(T, records[i].token_ids.size());
        }
        const auto batch = pad_and_mask(seqs, static_cast<std::int64_t>(T));
        const Tensor h = model.hidden(batch.ids, batch.batch, batch.max_len, eval);
        const Tensor sl = model.span_logits(h);
        const auto d = sl.data();
        for (std::size_t i = b0; i < b1; ++i) {
            const auto& r = records[i];
            std::vector<double> st, en;
            for (std::int64_t k = 0; k < r.context_len; ++k) {
                const std::size_t at = ((i - b0) * T + static_cast<std::size_t>(r.context_offset + k)) * 2;
                st.push_back(d[at]);
                en.push_back(d[at + 1]);
            }
            SpanPrediction p = best_span(st, en, max_answer_tokens);
            const auto enc = encode_with_offsets(r.context, vocab);
            const auto drop = static_cast<std::int64_t>(enc.ids.size()) - r.context_len;
            const std::u32string cps = unicode::decode_utf8(r.context);
            const std::size_t cb = enc.offsets[static_cast<std::size_t>(drop + p.start)].first;
            const std::size_t ce = enc.offsets[static_cast<std::size_t>(drop + p.end)].second;
            std::u32string s = cps.substr(cb, ce - cb);
            while (!s.empty() && unicode::is_whitespace(s.front())) {
                s.erase(s.begin());
            }
            while (!s.empty() && unicode::is_whitespace(s.back())) {
                s.pop_back();
            }
            p.text = unicode::encode_utf8(s);
            out.push_back(std::move(p));
        }
    }
    return out;
}

SpanPrediction predict_span(const SsmModel& model, const QaRecord& record, const Vocab& vocab,
                            const ForwardContext& ctx, std::int64_t max_answer_tokens) {
    return predict_spans(model, {record}, vocab, ctx, max_answer_tokens, 1).front();
}

} // namespace ssmqa
