#include "ssmqa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include "ssmqa/serialize.hpp"
#include "ssmqa/unicode.hpp"

namespace ssmqa {

namespace {

constexpr char32_t kDanda = U'।';
constexpr char32_t kDoubleDanda = U'॥';

bool ascii_punct(char32_t c) {
    return c < 0x80 && std::ispunct(static_cast<unsigned char>(c));
}

using Counts = std::map<std::vector<std::string>, std::int64_t>;

Counts ngrams(const std::vector<std::string>& t, std::size_t n) {
    Counts c;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
        ++c[std::vector<std::string>(t.begin() + static_cast<std::ptrdiff_t>(i),
                                     t.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return c;
}

std::int64_t overlap(const Counts& a, const Counts& b) {
    std::int64_t m = 0;
    for (const auto& [g, n] : a) {
        const auto it = b.find(g);
        if (it != b.end()) {
            m += std::min(n, it->second);
        }
    }
    return m;
}

double f_measure(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        out += c;
        if (c == '"') {
            out += '"';
        }
    }
    return out + "\"";
}

} // namespace

std::string normalize(std::string_view text) {
    const std::u32string in = unicode::decode_utf8(unicode::nfc(text));
    std::u32string out;
    bool pending_space = false;
    for (char32_t c : in) {
        if (ascii_punct(c)) {
            continue;
        }
        if (unicode::is_whitespace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out += U' ';
            pending_space = false;
        }
        out += c;
    }
    while (!out.empty() && (out.back() == kDanda || out.back() == kDoubleDanda || out.back() == U' ')) {
        out.pop_back();
    }
    // punctuation removal can bring a base and a combining mark together
    return unicode::nfc(unicode::encode_utf8(out));
}

std::vector<std::string> word_tokens(const std::string& text) {
    const std::string n = normalize(text);
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < n.size()) {
        const std::size_t sp = n.find(' ', pos);
        const std::size_t end = sp == std::string::npos ? n.size() : sp;
        if (end > pos) {
            out.push_back(n.substr(pos, end - pos));
        }
        pos = end + 1;
    }
    return out;
}

MetricTokenizer vocab_tokenizer(const Vocab& vocab) {
    return [&vocab](const std::string& text) {
        std::vector<std::string> out;
        for (auto& s : token_strings(normalize(text), vocab)) {
            s.erase(std::remove(s.begin(), s.end(), ' '), s.end());
            if (!s.empty()) {
                out.push_back(std::move(s));
            }
        }
        return out;
    };
}

double exact_match(const std::string& pred, const std::string& gold) {
    return normalize(pred) == normalize(gold) ? 1.0 : 0.0;
}

double token_f1(const std::string& pred, const std::string& gold, const MetricTokenizer& tok) {
    const auto p = tok(pred);
    const auto g = tok(gold);
    if (p.empty() || g.empty()) {
        return p.empty() && g.empty() ? 1.0 : 0.0;
    }
    const auto common = static_cast<double>(overlap(ngrams(p, 1), ngrams(g, 1)));
    return f_measure(common / static_cast<double>(p.size()), common / static_cast<double>(g.size()));
}

double bleu(const std::string& pred, const std::string& gold, int n_max, const MetricTokenizer& tok) {
    if (n_max < 1) {
        throw std::invalid_argument("bleu: n_max must be >= 1");
    }
    const auto p = tok(pred);
    const auto g = tok(gold);
    if (p.empty()) {
        return 0.0;
    }
    const std::size_t orders = std::min(static_cast<std::size_t>(n_max), p.size());
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= orders; ++n) {
        const auto matched = overlap(ngrams(p, n), ngrams(g, n));
        if (matched == 0) {
            return 0.0;
        }
        log_sum += std::log(static_cast<double>(matched) / static_cast<double>(p.size() - n + 1));
    }
    const double bp =
        std::min(1.0, std::exp(1.0 - static_cast<double>(g.size()) / static_cast<double>(p.size())));
    return std::clamp(bp * std::exp(log_sum / static_cast<double>(orders)), 0.0, 1.0);
}

double rouge_l(const std::string& pred, const std::string& gold, const MetricTokenizer& tok) {
    const auto p = tok(pred);
    const auto g = tok(gold);
    if (p.empty() || g.empty()) {
        return 0.0;
    }
    std::vector<std::size_t> prev(g.size() + 1, 0), cur(g.size() + 1, 0);
    for (std::size_t i = 1; i <= p.size(); ++i) {
        for (std::size_t j = 1; j <= g.size(); ++j) {
            cur[j] = p[i - 1] == g[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const auto lcs = static_cast<double>(prev[g.size()]);
    return f_measure(lcs / static_cast<double>(p.size()), lcs / static_cast<double>(g.size()));
}

double rouge_n(const std::string& pred, const std::string& gold, int n, const MetricTokenizer& tok) {
    if (n < 1) {
        throw std::invalid_argument("rouge_n: n must be >= 1");
    }
    const auto p = ngrams(tok(pred), static_cast<std::size_t>(n));
    const auto g = ngrams(tok(gold), static_cast<std::size_t>(n));
    std::int64_t np = 0, ng = 0;
    for (const auto& [k, c] : p) {
        np += c;
    }
    for (const auto& [k, c] : g) {
        ng += c;
    }
    if (np == 0 || ng == 0) {
        return 0.0;
    }
    const auto m = static_cast<double>(overlap(p, g));
    return f_measure(m / static_cast<double>(np), m / static_cast<double>(ng));
}

TokenEmbedder model_embedder(const SsmModel& model, const Vocab& vocab, const ForwardContext& ctx) {
    return [&model, &vocab, ctx](const std::string& text) {
        std::vector<std::vector<double>> rows;
        auto ids = encode(normalize(text), vocab);
        const auto limit = static_cast<std::size_t>(model.config().max_seq_len);
        if (ids.size() > limit) {
            ids.resize(limit);
        }
        if (ids.empty()) {
            return rows;
        }
        NoGradGuard guard;
        const auto T = static_cast<std::int64_t>(ids.size());
        const Tensor h = model.hidden(ids, 1, T, ctx);
        const auto d = static_cast<std::size_t>(h.dim(2));
        const auto data = h.data();
        for (std::size_t t = 0; t < ids.size(); ++t) {
            rows.emplace_back(data.begin() + static_cast<std::ptrdiff_t>(t * d),
                              data.begin() + static_cast<std::ptrdiff_t>((t + 1) * d));
        }
        return rows;
    };
}

double embed_score(const std::string& pred, const std::string& gold, const TokenEmbedder& embed) {
    if (!embed) {
        throw std::invalid_argument("embed_score: no embedder");
    }
    const auto p = embed(pred);
    const auto g = embed(gold);
    if (p.empty() || g.empty()) {
        return 0.0;
    }
    auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
        if (a.size() != b.size()) {
            throw std::invalid_argument("embed_score: embedding widths differ");
        }
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        if (aa == 0.0 || bb == 0.0) {
            return 0.0;
        }
        return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), 0.0, 1.0);
    };
    std::vector<std::vector<double>> sim(p.size(), std::vector<double>(g.size()));
    for (std::size_t i = 0; i < p.size(); ++i) {
        for (std::size_t j = 0; j < g.size(); ++j) {
            sim[i][j] = cosine(p[i], g[j]);
        }
    }
    double prec = 0, rec = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        prec += *std::max_element(sim[i].begin(), sim[i].end());
    }
    for (std::size_t j = 0; j < g.size(); ++j) {
        double best = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            best = std::max(best, sim[i][j]);
        }
        rec += best;
    }
    prec /= static_cast<double>(p.size());
    rec /= static_cast<double>(g.size());
    return std::clamp(f_measure(prec, rec), 0.0, 1.0);
}

MetricReport score_samples(const std::vector<MetricSample>& samples, const MetricOptions& options) {
    if (samples.empty()) {
        throw std::invalid_argument("metric report needs at least one sample");
    }
    if (!options.embedder) {
        throw std::invalid_argument("metric report needs a token embedder");
    }
    MetricReport rep;
    rep.has_rouge_n = options.rouge_n;
    for (const auto& s : samples) {
        MetricRow r{s.id, s.lang, s.prediction, s.gold};
        r.em = exact_match(s.prediction, s.gold);
        r.f1 = token_f1(s.prediction, s.gold, options.tokenizer);
        r.bleu = bleu(s.prediction, s.gold, 4, options.tokenizer);
        r.rouge_l = rouge_l(s.prediction, s.gold, options.tokenizer);
        r.embed = embed_score(s.prediction, s.gold, options.embedder);
        if (options.rouge_n) {
            r.rouge_1 = rouge_n(s.prediction, s.gold, 1, options.tokenizer);
            r.rouge_2 = rouge_n(s.prediction, s.gold, 2, options.tokenizer);
        }
        rep.rows.push_back(std::move(r));
    }
    for (const auto& r : rep.rows) {
        for (const std::string& key : {r.lang, std::string("all")}) {
            auto& c = rep.corpus[key];
            c.em += r.em;
            c.f1 += r.f1;
            c.bleu += r.bleu;
            c.rouge_l += r.rouge_l;
            c.embed += r.embed;
            c.rouge_1 += r.rouge_1;
            c.rouge_2 += r.rouge_2;
            ++c.count;
        }
    }
    for (auto& [lang, c] : rep.corpus) {
        const auto n = static_cast<double>(c.count);
        c.em /= n;
        c.f1 /= n;
        c.bleu /= n;
        c.rouge_l /= n;
        c.embed /= n;
        c.rouge_1 /= n;
        c.rouge_2 /= n;
    }
    return rep;
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json e{{"id", r.id},     {"lang", r.lang},       {"prediction", r.prediction},
                         {"gold", r.gold}, {"em", r.em},           {"f1", r.f1},
                         {"bleu", r.bleu}, {"rouge_l", r.rouge_l}, {"embed", r.embed}};
        if (has_rouge_n) {
            e["rouge_1"] = r.rouge_1;
            e["rouge_2"] = r.rouge_2;
        }
        rows_j.push_back(std::move(e));
    }
    nlohmann::json corpus_j = nlohmann::json::object();
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [lang, c] : corpus) {
        corpus_j[lang] = {{"em", c.em}, {"f1", c.f1}, {"bleu", c.bleu}, {"rouge_l", c.rouge_l}, {"embed", c.embed}};
        if (has_rouge_n) {
            corpus_j[lang]["rouge_1"] = c.rouge_1;
            corpus_j[lang]["rouge_2"] = c.rouge_2;
        }
        counts[lang] = c.count;
    }
    return {{"per_sample", rows_j}, {"corpus", corpus_j}, {"counts", counts}};
}

std::string MetricReport::rows_csv() const {
    std::string out = "id,lang,em,f1,bleu,rouge_l,embed";
    out += has_rouge_n ? ",rouge_1,rouge_2\n" : "\n";
    for (const auto& r : rows) {
        out += csv_field(r.id) + "," + csv_field(r.lang) + "," + fmt(r.em) + "," + fmt(r.f1) + "," + fmt(r.bleu) +
               "," + fmt(r.rouge_l) + "," + fmt(r.embed);
        out += has_rouge_n ? "," + fmt(r.rouge_1) + "," + fmt(r.rouge_2) + "\n" : "\n";
    }
    return out;
}

std::string MetricReport::corpus_csv() const {
    std::string out = "lang,count,em,f1,bleu,rouge_l,embed";
    out += has_rouge_n ? ",rouge_1,rouge_2\n" : "\n";
    for (const auto& [lang, c] : corpus) {
        out += csv_field(lang) + "," + std::to_string(c.count) + "," + fmt(c.em) + "," + fmt(c.f1) + "," +
               fmt(c.bleu) + "," + fmt(c.rouge_l) + "," + fmt(c.embed);
        out += has_rouge_n ? "," + fmt(c.rouge_1) + "," + fmt(c.rouge_2) + "\n" : "\n";
    }
    return out;
}

void MetricReport::write(const std::string& prefix) const {
    write_file_atomic(prefix + ".json", to_json().dump(2) + "\n");
    write_file_atomic(prefix + ".csv", rows_csv());
    write_file_atomic(prefix + "_corpus.csv", corpus_csv());
}

} // namespace ssmqa
