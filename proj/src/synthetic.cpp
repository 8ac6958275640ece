#include "ssmqa/synthetic.hpp"

#include <array>
#include <numeric>
#include <stdexcept>

#include "ssmqa/rng.hpp"
#include "ssmqa/unicode.hpp"

namespace ssmqa {

namespace {

const std::vector<std::string> kNames{"राम", "सीता", "मोहन", "गीता", "अर्जुन", "प्रिया",
                                      "रवि", "अनीता", "विजय", "कमला", "सुरेश", "नेहा"};
const std::vector<std::string> kPlaces{"दिल्ली", "मुंबई", "पुणे", "जयपुर", "लखनऊ", "पटना", "भोपाल",
                                       "नागपुर", "इंदौर", "कानपुर", "नई दिल्ली", "नवी मुंबई"};
const std::vector<std::string> kYears{"१९४७", "१९५२", "१९६१", "१९७३", "१९८०", "१९८४",
                                      "१९९१", "१९९९", "२००४", "२०११", "२०१५", "२०२०"};
const std::vector<std::string> kFoods{"आम", "चावल", "रोटी", "दाल", "खीर", "लड्डू", "जलेबी", "पनीर"};

struct Language {
    std::string tag;
    std::string place, year, food;  // sentence templates with {p} and {x}
    std::vector<std::string> fillers; // with {p}
    std::string ask_place, ask_year, ask_food;
};

const Language kHindi{"hi",
                      "{p} {x} में रहते हैं।",
                      "{p} का जन्म {x} में हुआ।",
                      "{p} को {x} पसंद है।",
                      {"{p} रोज़ सुबह टहलने जाते हैं।", "{p} के पास एक पुरानी किताब है।", "{p} बहुत मेहनती हैं।",
                       "{p} को गाना अच्छा लगता है।"},
                      "{p} कहाँ रहते हैं?",
                      "{p} का जन्म कब हुआ?",
                      "{p} को क्या पसंद है?"};

const Language kMarathi{"mr",
                        "{p} {x} येथे राहतात.",
                        "{p} यांचा जन्म {x} मध्ये झाला.",
                        "{p} यांना {x} आवडतो.",
                        {"{p} रोज सकाळी फिरायला जातात.", "{p} यांच्याकडे एक जुने पुस्तक आहे.", "{p} खूप मेहनती आहेत.",
                         "{p} यांना गाणे आवडते."},
                        "{p} कुठे राहतात?",
                        "{p} यांचा जन्म कधी झाला?",
                        "{p} यांना काय आवडते?"};

std::string fill_slots(std::string t, const std::string& p, const std::string& x = "") {
    for (auto [key, val] : std::array<std::pair<const char*, const std::string*>, 2>{{{"{p}", &p}, {"{x}", &x}}}) {
        const std::size_t at = t.find(key);
        if (at != std::string::npos) {
            t.replace(at, 3, *val);
        }
    }
    return t;
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[static_cast<std::size_t>(rng.below(v.size()))];
}

const Language& language_for(const std::string& lang, Rng& rng) {
    if (lang == "hi") {
        return kHindi;
    }
    if (lang == "mr") {
        return kMarathi;
    }
    if (lang == "mixed") {
        return rng.below(2) == 0 ? kHindi : kMarathi;
    }
    throw std::invalid_argument("synthetic_span_qa: lang must be hi, mr or mixed");
}

QaRecord one_record(const Language& L, Rng& rng, std::size_t index) {
    struct Sentence {
        std::string text;
        std::string answer; // empty for fillers
        int kind = -1;
    };
    const std::string place = pick(kPlaces, rng), year = pick(kYears, rng), food = pick(kFoods, rng);
    std::vector<std::string> people = kNames;
    rng.shuffle(people);
    std::vector<Sentence> sentences{{fill_slots(L.place, people[0], place), place, 0},
                                    {fill_slots(L.year, people[1], year), year, 1},
                                    {fill_slots(L.food, people[2], food), food, 2}};
    const auto fillers = rng.below(4);
    for (std::uint64_t f = 0; f < fillers; ++f) {
        sentences.push_back({fill_slots(pick(L.fillers, rng), people[3 + f]), "", -1});
    }
    rng.shuffle(sentences);
    const int kind = static_cast<int>(rng.below(3));
    QaRecord r;
    r.id = L.tag + "-" + std::to_string(index);
    r.lang = L.tag;
    const std::string* ask[3] = {&L.ask_place, &L.ask_year, &L.ask_food};
    r.question = fill_slots(*ask[kind], people[static_cast<std::size_t>(kind)]);
    for (const auto& s : sentences) {
        if (!r.context.empty()) {
            r.context += " ";
        }
        if (s.kind == kind) {
            const std::string head = fill_slots(kind == 0 ? L.place : kind == 1 ? L.year : L.food,
                                          people[static_cast<std::size_t>(kind)], "\x01");
            const std::size_t at = head.find('\x01');
            r.answer_start = static_cast<std::int64_t>(unicode::codepoint_count(r.context) +
                                                       unicode::codepoint_count(head.substr(0, at)));
            r.answer = s.answer;
        }
        r.context += s.text;
    }
    return r;
}

} // namespace

std::vector<QaRecord> synthetic_span_qa(std::size_t n, std::uint64_t seed, const std::string& lang) {
    Rng rng(seed);
    std::vector<QaRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(one_record(language_for(lang, rng), rng, i));
    }
    return out;
}

std::vector<std::string> synthetic_span_qa_corpus(std::size_t n, std::uint64_t seed, const std::string& lang) {
    std::vector<std::string> lines;
    for (const auto& r : synthetic_span_qa(n, seed, lang)) {
        lines.push_back(r.context);
        lines.push_back(r.question);
    }
    // make sure every entity appears even in a small sample
    for (const auto* list : {&kPlaces, &kYears, &kFoods, &kNames}) {
        std::string line;
        for (const auto& w : *list) {
            line += (line.empty() ? "" : " ") + w;
        }
        lines.push_back(line);
    }
    return lines;
}

std::vector<KvSample> synthetic_kv_recall(std::size_t n, const KvTaskSpec& spec, std::uint64_t seed) {
    if (spec.pairs < 1 || spec.pairs > spec.num_keys || spec.pairs > spec.num_values) {
        throw std::invalid_argument("synthetic_kv_recall: need 1 <= pairs <= num_keys, num_values");
    }
    Rng rng(seed);
    std::vector<int> keys(static_cast<std::size_t>(spec.num_keys));
    std::vector<int> values(static_cast<std::size_t>(spec.num_values));
    std::vector<KvSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::iota(keys.begin(), keys.end(), 0);
        std::iota(values.begin(), values.end(), 0);
        rng.shuffle(keys);
        rng.shuffle(values);
        KvSample s;
        for (int p = 0; p < spec.pairs; ++p) {
            s.ids.push_back(spec.key_id(keys[static_cast<std::size_t>(p)]));
            s.ids.push_back(spec.value_id(values[static_cast<std::size_t>(p)]));
        }
        const auto q = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(spec.pairs)));
        s.ids.push_back(spec.sep_id());
        s.ids.push_back(spec.key_id(keys[q]));
        s.target = spec.value_id(values[q]);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<QaRecord> synthetic_correlated_records(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    const std::vector<std::string> words{"नदी", "पहाड़", "गाँव", "शहर", "पेड़", "बादल", "सड़क", "मंदिर", "बाज़ार", "खेत"};
    std::vector<QaRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t len = 5 + static_cast<std::size_t>(rng.below(60));
        std::vector<std::string> ws;
        for (std::size_t k = 0; k < len; ++k) {
            ws.push_back(pick(words, rng));
        }
        // answer lands in the second half of the passage
        const std::size_t at = len / 2 + static_cast<std::size_t>(rng.below(len - len / 2));
        QaRecord r;
        r.id = "c-" + std::to_string(i);
        r.lang = i % 2 == 0 ? "hi" : "mr";
        for (std::size_t k = 0; k < len; ++k) {
            if (k == at) {
                r.answer_start = static_cast<std::int64_t>(unicode::codepoint_count(r.context) + (k ? 1 : 0));
                r.answer = ws[k];
            }
            r.context += (k ? " " : "") + ws[k];
        }
        r.question = pick(words, rng) + " कहाँ है?";
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace ssmqa
