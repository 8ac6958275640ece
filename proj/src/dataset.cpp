#include "ssmqa/dataset.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <set>
#include <stdexcept>

#include "ssmqa/errors.hpp"
#include "ssmqa/serialize.hpp"
#include "ssmqa/unicode.hpp"

namespace ssmqa {

namespace {

std::string label(const QaRecord& r) { return "record '" + r.id + "'"; }

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) {
        s.replace(pos, from.size(), to);
    }
    return s;
}

std::vector<std::int64_t> concat(std::initializer_list<const std::vector<std::int64_t>*> parts) {
    std::vector<std::int64_t> out;
    for (const auto* p : parts) {
        out.insert(out.end(), p->begin(), p->end());
    }
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) {
        return s;
    }
    return "\"" + replace_all(s, "\"", "\"\"") + "\"";
}

} // namespace

void validate_record(const QaRecord& r) {
    if (r.id.empty()) {
        throw ValidationError("record without id");
    }
    if (r.lang != "hi" && r.lang != "mr" && r.lang != "other") {
        throw ValidationError(label(r) + ": unknown language tag '" + r.lang + "'");
    }
    std::u32string ctx;
    std::u32string ans;
    try {
        ctx = unicode::decode_utf8(r.context);
        ans = unicode::decode_utf8(r.answer);
        unicode::validate_utf8(r.question);
    } catch (const EncodingError& e) {
        throw ValidationError(label(r) + ": " + e.what());
    }
    if (r.answer_start < 0 || static_cast<std::size_t>(r.answer_start) + ans.size() > ctx.size()) {
        throw ValidationError(label(r) + ": answer_start " + std::to_string(r.answer_start) +
                              " out of bounds for a context of " + std::to_string(ctx.size()) + " characters");
    }
    if (ctx.compare(static_cast<std::size_t>(r.answer_start), ans.size(), ans) != 0) {
        throw ValidationError(label(r) + ": context at answer_start " + std::to_string(r.answer_start) +
                              " reads '" +
                              unicode::encode_utf8(ctx.substr(static_cast<std::size_t>(r.answer_start), ans.size())) +
                              "', not the answer '" + r.answer + "'");
    }
}

std::vector<QaRecord> records_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("data") || !j["data"].is_array()) {
        throw ValidationError("dataset: expected an object with a \"data\" array");
    }
    std::vector<QaRecord> out;
    std::set<std::string> seen;
    std::size_t index = 0;
    for (const auto& e : j["data"]) {
        QaRecord r;
        const std::string where =
            e.is_object() && e.contains("id") && e["id"].is_string() ? "record '" + e["id"].get<std::string>() + "'"
                                                                     : "record #" + std::to_string(index);
        try {
            r.id = e.at("id").get<std::string>();
            r.lang = e.value("lang", std::string("other"));
            r.context = e.at("context").get<std::string>();
            r.question = e.at("question").get<std::string>();
            r.answer = e.at("answer").get<std::string>();
            r.answer_start = e.at("answer_start").get<std::int64_t>();
            if (e.contains("token_ids")) {
                r.token_ids = e.at("token_ids").get<std::vector<std::int64_t>>();
                r.attention_mask = e.at("attention_mask").get<std::vector<int>>();
                r.context_offset = e.at("context_offset").get<std::int64_t>();
                r.context_len = e.at("context_len").get<std::int64_t>();
                r.token_start = e.at("token_start").get<std::int64_t>();
                r.token_end = e.at("token_end").get<std::int64_t>();
            }
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError(where + ": malformed (" + std::string(ex.what()) + ")");
        }
        validate_record(r);
        if (!seen.insert(r.id).second) {
            throw ValidationError(where + ": duplicate id");
        }
        out.push_back(std::move(r));
        ++index;
    }
    return out;
}

std::vector<QaRecord> load_squad_style(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::runtime_error& e) {
        throw ValidationError(e.what());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("dataset '" + path + "' is not valid JSON: " + e.what());
    }
    return records_from_json(j);
}

nlohmann::json records_to_json(const std::vector<QaRecord>& records) {
    nlohmann::json data = nlohmann::json::array();
    for (const auto& r : records) {
        nlohmann::json e{{"id", r.id},         {"lang", r.lang},     {"context", r.context},
                         {"question", r.question}, {"answer", r.answer}, {"answer_start", r.answer_start}};
        if (r.aligned()) {
            e["token_ids"] = r.token_ids;
            e["attention_mask"] = r.attention_mask;
            e["context_offset"] = r.context_offset;
            e["context_len"] = r.context_len;
            e["token_start"] = r.token_start;
            e["token_end"] = r.token_end;
        }
        data.push_back(std::move(e));
    }
    return nlohmann::json{{"data", data}};
}

void save_records(const std::vector<QaRecord>& records, const std::string& path) {
    write_file_atomic(path, records_to_json(records).dump(1) + "\n");
}

TokenSpan align_span(const std::string& context, const std::string& answer, std::int64_t answer_start,
                     const Vocab& vocab) {
    const std::size_t ctx_len = unicode::codepoint_count(context);
    const std::size_t ans_len = unicode::codepoint_count(answer);
    if (answer_start < 0 || static_cast<std::size_t>(answer_start) >= ctx_len ||
        static_cast<std::size_t>(answer_start) + ans_len > ctx_len) {
        throw std::out_of_range("answer_start " + std::to_string(answer_start) + " outside a context of " +
                                std::to_string(ctx_len) + " characters");
    }
    if (ans_len == 0) {
        throw AlignmentError("cannot align an empty answer");
    }
    const auto enc = encode_with_offsets(context, vocab, false);
    const auto s = static_cast<std::size_t>(answer_start);
    const std::size_t e = s + ans_len;
    std::int64_t first = -1;
    std::int64_t last = -1;
    for (std::size_t k = 0; k < enc.ids.size(); ++k) {
        const auto [b, en] = enc.offsets[k];
        if (en > s && b < e) {
            if (first < 0) {
                first = static_cast<std::int64_t>(k);
            }
            last = static_cast<std::int64_t>(k);
        }
    }
    if (first < 0) {
        throw AlignmentError("no token overlaps the answer at character " + std::to_string(answer_start));
    }
    const std::vector<std::int64_t> span(enc.ids.begin() + first, enc.ids.begin() + last + 1);
    const std::string decoded = decode(span, vocab, true);
    if (decoded.find(answer) == std::string::npos) {
        throw AlignmentError("tokens " + std::to_string(first) + ".." + std::to_string(last) + " decode to '" +
                             decoded + "', which does not contain the answer '" + answer + "'");
    }
    return {first, last};
}

void prepare_record(QaRecord& r, const Vocab& vocab, std::int64_t max_len) {
    validate_record(r);
    const auto q = encode(r.question, vocab, false);
    auto c = encode(r.context, vocab, false);
    TokenSpan span;
    try {
        span = align_span(r.context, r.answer, r.answer_start, vocab);
    } catch (const std::out_of_range& e) {
        throw ValidationError(label(r) + ": " + e.what());
    } catch (const AlignmentError& e) {
        throw AlignmentError(label(r) + ": " + e.what());
    }
    const auto fixed = static_cast<std::int64_t>(q.size()) + 3;
    std::int64_t drop = fixed + static_cast<std::int64_t>(c.size()) - max_len;
    if (drop > 0) {
        if (span.start < drop) {
            throw ValidationError(label(r) + ": answer does not fit in " + std::to_string(max_len) +
                                  " tokens after truncating the context");
        }
        c.erase(c.begin(), c.begin() + drop);
        span.start -= drop;
        span.end -= drop;
    }
    r.token_ids.clear();
    r.token_ids.push_back(kSosId);
    r.token_ids.insert(r.token_ids.end(), q.begin(), q.end());
    r.token_ids.push_back(kEosId);
    r.context_offset = static_cast<std::int64_t>(r.token_ids.size());
    r.token_ids.insert(r.token_ids.end(), c.begin(), c.end());
    r.token_ids.push_back(kEosId);
    r.context_len = static_cast<std::int64_t>(c.size());
    r.attention_mask.assign(r.token_ids.size(), 1);
    r.token_start = span.start;
    r.token_end = span.end;
}

void prepare_query(QaRecord& r, const Vocab& vocab, std::int64_t max_len) {
    const auto q = encode(r.question, vocab, false);
    const auto c = encode(r.context, vocab, false);
    if (c.empty()) {
        throw ValidationError(label(r) + ": empty context");
    }
    const auto total = static_cast<std::int64_t>(q.size() + c.size()) + 3;
    if (total > max_len) {
        throw ValidationError(label(r) + ": query needs " + std::to_string(total) + " tokens, limit is " +
                              std::to_string(max_len));
    }
    r.token_ids.clear();
    r.token_ids.push_back(kSosId);
    r.token_ids.insert(r.token_ids.end(), q.begin(), q.end());
    r.token_ids.push_back(kEosId);
    r.context_offset = static_cast<std::int64_t>(r.token_ids.size());
    r.token_ids.insert(r.token_ids.end(), c.begin(), c.end());
    r.token_ids.push_back(kEosId);
    r.context_len = static_cast<std::int64_t>(c.size());
    r.attention_mask.assign(r.token_ids.size(), 1);
    r.token_start = -1;
    r.token_end = -1;
}

PaddedBatch pad_and_mask(const std::vector<std::vector<std::int64_t>>& sequences, std::int64_t max_len,
                         std::int64_t pad_id) {
    if (max_len < 1) {
        throw std::invalid_argument("pad_and_mask: max_len must be >= 1");
    }
    PaddedBatch b;
    b.batch = static_cast<std::int64_t>(sequences.size());
    b.max_len = max_len;
    b.ids.assign(static_cast<std::size_t>(b.batch * max_len), pad_id);
    b.mask.assign(b.ids.size(), 0);
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        const auto& s = sequences[i];
        const std::size_t keep = std::min<std::size_t>(s.size(), static_cast<std::size_t>(max_len));
        const std::size_t from = s.size() - keep;
        for (std::size_t t = 0; t < keep; ++t) {
            b.ids[i * static_cast<std::size_t>(max_len) + t] = s[from + t];
            b.mask[i * static_cast<std::size_t>(max_len) + t] = 1;
        }
    }
    return b;
}

std::vector<std::vector<std::int64_t>> strip_padding(const PaddedBatch& batch) {
    std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(batch.batch));
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::int64_t t = 0; t < batch.max_len; ++t) {
            const std::size_t k = i * static_cast<std::size_t>(batch.max_len) + static_cast<std::size_t>(t);
            if (batch.mask[k] == 1) {
                out[i].push_back(batch.ids[k]);
            }
        }
    }
    return out;
}

void ChatTemplate::validate() const {
    if (system.find("{system}") == std::string::npos) {
        throw ValidationError("chat template: system slot lacks {system}");
    }
    if (user.find("{context}") == std::string::npos || user.find("{question}") == std::string::npos) {
        throw ValidationError("chat template: user slot needs {context} and {question}");
    }
    if (user.find("{context}") != user.rfind("{context}")) {
        throw ValidationError("chat template: {context} may appear only once");
    }
}

ChatTemplate ChatTemplate::from_json(const nlohmann::json& j) {
    ChatTemplate t;
    try {
        t.system_message = j.at("system_message").get<std::string>();
        t.system = j.at("system").get<std::string>();
        t.user = j.at("user").get<std::string>();
        t.assistant = j.at("assistant").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("chat template needs system_message, system, user and assistant: " +
                              std::string(e.what()));
    }
    t.validate();
    return t;
}

ChatTemplate ChatTemplate::load(const std::string& path) {
    try {
        return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("chat template '" + path + "': " + e.what());
    }
}

nlohmann::json ChatTemplate::to_json() const {
    return {{"system_message", system_message}, {"system", system}, {"user", user}, {"assistant", assistant}};
}

namespace {

struct ChatParts {
    std::vector<std::int64_t> system, user_pre, context, user_post, assistant;
};

ChatParts encode_parts(const std::string& context, const std::string& question, const ChatTemplate& tmpl,
                       const Vocab& vocab) {
    tmpl.validate();
    const std::string sys = replace_all(tmpl.system, "{system}", tmpl.system_message);
    const std::size_t at = tmpl.user.find("{context}");
    const std::string pre = replace_all(tmpl.user.substr(0, at), "{question}", question);
    const std::string post = replace_all(tmpl.user.substr(at + 9), "{question}", question);
    return {encode(sys, vocab), encode(pre, vocab), encode(context, vocab), encode(post, vocab),
            encode(tmpl.assistant, vocab)};
}

} // namespace

ChatExample build_chat_example(const QaRecord& record, const ChatTemplate& tmpl, const Vocab& vocab,
                               std::int64_t max_len) {
    ChatParts p = encode_parts(record.context, record.question, tmpl, vocab);
    const auto answer = encode(record.answer, vocab);
    const auto fixed = static_cast<std::int64_t>(2 + p.system.size() + p.user_pre.size() + p.user_post.size() +
                                                 p.assistant.size() + answer.size());
    if (fixed > max_len) {
        throw ValidationError(label(record) + ": question and answer need " + std::to_string(fixed) +
                              " tokens, more than max_len " + std::to_string(max_len));
    }
    ChatExample ex;
    const std::int64_t over = fixed + static_cast<std::int64_t>(p.context.size()) - max_len;
    if (over > 0) {
        p.context.erase(p.context.begin(), p.context.begin() + over);
        ex.truncated = over;
    }
    const std::vector<std::int64_t> sos{kSosId};
    ex.ids = concat({&sos, &p.system, &p.user_pre, &p.context, &p.user_post, &p.assistant});
    ex.answer_begin = static_cast<std::int64_t>(ex.ids.size());
    ex.ids.insert(ex.ids.end(), answer.begin(), answer.end());
    ex.ids.push_back(kEosId);
    ex.loss_mask.assign(ex.ids.size(), 0);
    for (std::size_t i = static_cast<std::size_t>(ex.answer_begin); i < ex.ids.size(); ++i) {
        ex.loss_mask[i] = 1;
    }
    return ex;
}

std::vector<std::int64_t> build_chat_prompt(const std::string& context, const std::string& question,
                                            const ChatTemplate& tmpl, const Vocab& vocab, std::int64_t max_len) {
    const ChatParts p = encode_parts(context, question, tmpl, vocab);
    const std::vector<std::int64_t> sos{kSosId};
    auto ids = concat({&sos, &p.system, &p.user_pre, &p.context, &p.user_post, &p.assistant});
    if (static_cast<std::int64_t>(ids.size()) > max_len) {
        throw ValidationError("prompt needs " + std::to_string(ids.size()) + " tokens, more than max_len " +
                              std::to_string(max_len));
    }
    return ids;
}

std::vector<std::string> chat_texts(const QaRecord& record, const ChatTemplate& tmpl) {
    return {replace_all(tmpl.system, "{system}", tmpl.system_message),
            replace_all(replace_all(tmpl.user, "{context}", record.context), "{question}", record.question),
            tmpl.assistant, record.answer};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
        m.name = j.at("name").get<std::string>();
        m.lang = j.at("lang").get<std::string>();
        for (const auto& [split, v] : j.at("splits").items()) {
            Split s;
            s.path = v.value("path", std::string());
            s.count = v.at("count").get<std::int64_t>();
            if (s.count < 0) {
                throw ValidationError("dataset manifest: negative count for split '" + split + "'");
            }
            m.splits.emplace(split, s);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("dataset manifest malformed: " + std::string(e.what()));
    }
    return m;
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    try {
        return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("dataset manifest '" + path + "': " + e.what());
    }
}

std::int64_t DatasetManifest::count(const std::string& split) const {
    const auto it = splits.find(split);
    if (it == splits.end()) {
        throw std::out_of_range("dataset manifest '" + name + "' has no split '" + split + "'");
    }
    return it->second.count;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("pearson: need two equal-length series of at least 2 values");
    }
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        return &x == &y || x == y ? 1.0 : 0.0;
    }
    return sxy / std::sqrt(sxx * syy);
}

namespace {

void correlation_matrix(const std::vector<std::vector<double>>& f, double out[4][4]) {
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            out[a][b] = a == b ? 1.0 : pearson(f[a], f[b]);
        }
    }
}

} // namespace

DatasetStats compute_stats(const std::vector<QaRecord>& records) {
    if (records.size() < 2) {
        throw ValidationError("dataset statistics need at least 2 records, got " + std::to_string(records.size()));
    }
    DatasetStats s;
    s.features.assign(4, {});
    for (const auto& r : records) {
        ++s.counts[r.lang];
        s.ids.push_back(r.id);
        s.langs.push_back(r.lang);
        s.features[0].push_back(static_cast<double>(unicode::codepoint_count(r.context)));
        s.features[1].push_back(static_cast<double>(unicode::codepoint_count(r.question)));
        s.features[2].push_back(static_cast<double>(unicode::codepoint_count(r.answer)));
        s.features[3].push_back(static_cast<double>(r.answer_start));
    }
    const double n = static_cast<double>(records.size());
    for (int k = 0; k < 4; ++k) {
        const auto& v = s.features[static_cast<std::size_t>(k)];
        FeatureSummary& fs = s.summary[k];
        fs.min = *std::min_element(v.begin(), v.end());
        fs.max = *std::max_element(v.begin(), v.end());
        double sum = 0;
        for (double x : v) {
            sum += x;
        }
        fs.mean = sum / n;
        double ss = 0;
        for (double x : v) {
            ss += (x - fs.mean) * (x - fs.mean);
        }
        fs.stddev = std::sqrt(ss / n);
    }
    correlation_matrix(s.features, s.correlation);
    for (const auto& [lang, count] : s.counts) {
        if (count < 2) {
            continue;
        }
        std::vector<std::vector<double>> sub(4);
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (s.langs[i] == lang) {
                for (int k = 0; k < 4; ++k) {
                    sub[static_cast<std::size_t>(k)].push_back(s.features[static_cast<std::size_t>(k)][i]);
                }
            }
        }
        double m[4][4];
        correlation_matrix(sub, m);
        auto& dst = s.correlation_by_lang[lang];
        dst.assign(4, std::vector<double>(4));
        for (int a = 0; a < 4; ++a) {
            for (int b = 0; b < 4; ++b) {
                dst[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = m[a][b];
            }
        }
    }
    return s;
}

void write_stats(const DatasetStats& s, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path root(out_dir);
    std::string lengths = "id,lang,context_len,question_len,answer_len,answer_start\n";
    std::string scatter = "lang,context_len,answer_start\n";
    for (std::size_t i = 0; i < s.ids.size(); ++i) {
        lengths += csv_field(s.ids[i]) + "," + s.langs[i];
        for (int k = 0; k < 4; ++k) {
            lengths += "," + fmt_double(s.features[static_cast<std::size_t>(k)][i]);
        }
        lengths += "\n";
        scatter += s.langs[i] + "," + fmt_double(s.features[0][i]) + "," + fmt_double(s.features[3][i]) + "\n";
    }
    write_file_atomic((root / "lengths.csv").string(), lengths);
    write_file_atomic((root / "answer_start_vs_context.csv").string(), scatter);
    auto matrix_csv = [](auto get) {
        std::string out = "feature";
        for (const char* f : DatasetStats::kFeatures) {
            out += std::string(",") + f;
        }
        out += "\n";
        for (int a = 0; a < 4; ++a) {
            out += DatasetStats::kFeatures[a];
            for (int b = 0; b < 4; ++b) {
                out += "," + fmt_double(get(a, b));
            }
            out += "\n";
        }
        return out;
    };
    write_file_atomic((root / "correlation.csv").string(),
                      matrix_csv([&](int a, int b) { return s.correlation[a][b]; }));
    nlohmann::json by_lang = nlohmann::json::object();
    for (const auto& [lang, m] : s.correlation_by_lang) {
        write_file_atomic((root / ("correlation_" + lang + ".csv")).string(),
                          matrix_csv([&](int a, int b) { return m[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]; }));
        by_lang[lang] = m;
    }
    nlohmann::json summary{{"records", s.ids.size()}, {"counts", s.counts}, {"correlation_by_lang", by_lang}};
    for (int k = 0; k < 4; ++k) {
        const auto& f = s.summary[k];
        summary["features"][DatasetStats::kFeatures[k]] = {
            {"mean", f.mean}, {"std", f.stddev}, {"min", f.min}, {"max", f.max}};
    }
    std::vector<std::vector<double>> corr(4, std::vector<double>(4));
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            corr[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = s.correlation[a][b];
        }
    }
    summary["correlation"] = corr;
    summary["feature_order"] = std::vector<std::string>(std::begin(DatasetStats::kFeatures), std::end(DatasetStats::kFeatures));
    write_file_atomic((root / "summary.json").string(), summary.dump(2) + "\n");
}

} // namespace ssmqa
