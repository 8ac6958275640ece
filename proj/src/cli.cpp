#include "ssmqa/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ssmqa/dataset.hpp"
#include "ssmqa/errors.hpp"
#include "ssmqa/hash.hpp"
#include "ssmqa/prompting.hpp"
#include "ssmqa/trainer.hpp"

namespace fs = std::filesystem;

namespace ssmqa::cli {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot read '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

void require(bool ok, const std::string& msg) {
    if (!ok) {
        throw UsageError(msg);
    }
}

// Outputs must not overwrite inputs.
void check_distinct(const std::string& output, const std::vector<std::string>& inputs) {
    const auto o = fs::weakly_canonical(output);
    for (const auto& in : inputs) {
        if (!in.empty() && fs::weakly_canonical(in) == o) {
            throw UsageError("output '" + output + "' would overwrite input '" + in + "'");
        }
    }
}

void add_inputs(RunManifest& m, const std::vector<std::string>& paths) {
    for (const auto& p : paths) {
        if (p.empty()) {
            continue;
        }
        auto d = digest_inputs(p);
        m.inputs.insert(m.inputs.end(), d.begin(), d.end());
    }
}

void ensure_parent(const std::string& path) {
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty()) {
        fs::create_directories(parent);
    }
}

std::string resolve_preset(const std::string& name) { return name == "falcon" ? "falcon-mamba" : name; }

ForwardContext context_for(const LoadedRun& run) {
    ForwardContext ctx;
    ctx.adapters = run.adapters.empty() ? nullptr : &run.adapters;
    return ctx;
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss << std::setprecision(6) << v;
    return ss.str();
}

} // namespace

std::vector<FileDigest> digest_inputs(const std::string& path) {
    std::vector<FileDigest> out;
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(path)) {
            if (e.is_regular_file()) {
                files.push_back(e.path());
            }
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            out.push_back({f.string(), git_blob_hash(read_file(f.string()))});
        }
        return out;
    }
    out.push_back({path, git_blob_hash(read_file(path))});
    return out;
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json in = nlohmann::json::array();
    for (const auto& d : inputs) {
        in.push_back({{"path", d.path}, {"git_hash", d.git_hash}});
    }
    return {{"command", command}, {"config_path", config_path}, {"inputs", in},    {"outputs", outputs},
            {"seed", seed},       {"timestamp", timestamp},     {"args", args}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    try {
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.config_path = j.value("config_path", "");
        for (const auto& d : j.at("inputs")) {
            m.inputs.push_back({d.at("path").get<std::string>(), d.at("git_hash").get<std::string>()});
        }
        m.outputs = j.at("outputs").get<std::vector<std::string>>();
        m.seed = j.value("seed", std::uint64_t{0});
        m.timestamp = j.value("timestamp", "");
        m.args = j.value("args", nlohmann::json::object());
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("run manifest: ") + e.what());
    }
}

RunManifest RunManifest::load(const std::string& path) {
    try {
        return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("run manifest '" + path + "': " + e.what());
    }
}

void RunManifest::write(const std::string& path) const {
    ensure_parent(path);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw std::runtime_error("cannot write '" + path + "'");
    }
    f << to_json().dump(2) << "\n";
}

std::string manifest_path(const std::string& output, bool is_dir) {
    return is_dir ? (fs::path(output) / "manifest.json").string() : output + ".manifest.json";
}

RunManifest cmd_vocab(const VocabArgs& a) {
    require(!a.corpus.empty() && !a.out.empty(), "vocab: --corpus and --out are required");
    require(a.size > static_cast<std::size_t>(kNumSpecials), "vocab: --size must exceed the 4 special tokens");
    check_distinct(a.out, {a.corpus});
    std::vector<std::string> lines;
    std::istringstream in(read_file(a.corpus));
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (!line.empty()) {
            lines.push_back(line);
        }
    }
    const Vocab v = train_vocab(lines, a.size);
    ensure_parent(a.out);
    v.save(a.out);
    RunManifest m;
    m.command = "vocab";
    m.args = {{"corpus", a.corpus}, {"size", a.size}, {"out", a.out}};
    add_inputs(m, {a.corpus});
    m.outputs = {a.out};
    m.timestamp = utc_now();
    m.write(manifest_path(a.out, false));
    return m;
}

RunManifest cmd_preprocess(const PreprocessArgs& a) {
    require(!a.data.empty() && !a.vocab.empty() && !a.out.empty(), "preprocess: --data, --vocab and --out are required");
    require(a.max_len >= 4, "preprocess: --max-len must be >= 4");
    check_distinct(a.out, {a.data, a.vocab});
    const Vocab v = Vocab::load(a.vocab);
    auto records = load_squad_style(a.data);
    for (auto& r : records) {
        prepare_record(r, v, a.max_len);
    }
    ensure_parent(a.out);
    save_records(records, a.out);
    RunManifest m;
    m.command = "preprocess";
    m.args = {{"data", a.data}, {"vocab", a.vocab}, {"out", a.out}, {"max_len", a.max_len}};
    add_inputs(m, {a.data, a.vocab});
    m.outputs = {a.out};
    m.timestamp = utc_now();
    m.write(manifest_path(a.out, false));
    return m;
}

RunManifest cmd_stats(const StatsArgs& a) {
    require(!a.data.empty() && !a.out_dir.empty(), "stats: --data and --out are required");
    check_distinct(a.out_dir, {a.data});
    const auto records = load_squad_style(a.data);
    const DatasetStats s = compute_stats(records);
    write_stats(s, a.out_dir);
    RunManifest m;
    m.command = "stats";
    m.args = {{"data", a.data}, {"out", a.out_dir}};
    add_inputs(m, {a.data});
    for (const auto& e : fs::directory_iterator(a.out_dir)) {
        if (e.path().filename() != "manifest.json") {
            m.outputs.push_back(e.path().string());
        }
    }
    std::sort(m.outputs.begin(), m.outputs.end());
    m.timestamp = utc_now();
    m.write(manifest_path(a.out_dir, true));
    return m;
}

RunManifest cmd_train(const TrainArgs& a, std::ostream& out) {
    require(!a.data.empty() && !a.out_dir.empty(), "train: --data and --out are required");
    check_distinct(a.out_dir, {a.data, a.val, a.config, a.vocab, a.chat_template, a.resume});
    const auto records = load_squad_style(a.data);
    const auto val = a.val.empty() ? std::vector<QaRecord>{} : load_squad_style(a.val);

    TrainConfig tc;
    SsmModel model;
    AdapterSet adapters;
    RunArtifacts art;
    if (!a.resume.empty()) {
        LoadedRun run = load_training_checkpoint(a.resume);
        tc = run.config;
        model = std::move(run.model);
        adapters = std::move(run.adapters);
        art = std::move(run.artifacts);
        art.extra = nlohmann::json::object();
    } else {
        if (!a.config.empty()) {
            try {
                tc = nlohmann::json::parse(read_file(a.config)).get<TrainConfig>();
            } catch (const nlohmann::json::exception& e) {
                throw ValidationError("train config '" + a.config + "': " + e.what());
            }
        } else {
            try {
                tc = TrainConfig::preset(resolve_preset(a.preset));
            } catch (const ValidationError& e) {
                throw UsageError(e.what());
            }
        }
    }
    if (a.seed) {
        tc.seed = *a.seed;
    }
    if (a.epochs) {
        tc.epochs = *a.epochs;
    }
    tc.validate();

    if (a.resume.empty()) {
        art.chat_template = a.chat_template.empty() ? ChatTemplate{} : ChatTemplate::load(a.chat_template);
        if (!a.vocab.empty()) {
            art.vocab = Vocab::load(a.vocab);
        } else {
            std::vector<std::string> corpus;
            for (const auto& r : records) {
                const auto t = chat_texts(r, art.chat_template);
                corpus.insert(corpus.end(), t.begin(), t.end());
            }
            art.vocab = train_vocab(corpus, a.vocab_size);
        }
        ModelConfig mc = ModelConfig::preset(tc.model_preset);
        mc.vocab_size = static_cast<int>(art.vocab.size());
        model = SsmModel(mc, tc.seed);
        adapters = setup_finetune(model, tc);
    }

    fs::create_directories(a.out_dir);
    art.vocab.save((fs::path(a.out_dir) / "vocab.txt").string());
    TrainOptions opts;
    opts.out_dir = a.out_dir;
    opts.resume_from = a.resume;
    const TrainResult r = train(model, adapters, records, val, tc, art, opts);
    out << "trained " << r.steps << " steps";
    if (!r.epoch_mean_loss.empty()) {
        out << ", loss " << fmt(r.epoch_mean_loss.front()) << " -> " << fmt(r.epoch_mean_loss.back());
    }
    if (r.best_step >= 0) {
        out << ", best val loss " << fmt(r.best_val_loss) << " at step " << r.best_step;
    }
    out << "\n";

    RunManifest m;
    m.command = "train";
    m.args = {{"data", a.data},   {"val", a.val},           {"out", a.out_dir},
              {"config", a.config}, {"preset", a.preset},   {"vocab", a.vocab},
              {"vocab_size", a.vocab_size}, {"chat_template", a.chat_template}, {"resume", a.resume},
              {"train_config", tc}};
    m.config_path = a.config;
    add_inputs(m, {a.data, a.val, a.config, a.vocab, a.chat_template, a.resume});
    m.seed = tc.seed;
    m.outputs.push_back((fs::path(a.out_dir) / "final").string());
    if (r.best_step >= 0) {
        m.outputs.push_back((fs::path(a.out_dir) / "best").string());
    }
    for (const auto s : r.checkpoint_steps) {
        std::ostringstream name;
        name << "checkpoint-" << std::setw(6) << std::setfill('0') << s;
        m.outputs.push_back((fs::path(a.out_dir) / name.str()).string());
    }
    m.outputs.push_back((fs::path(a.out_dir) / "train_log.ndjson").string());
    m.outputs.push_back((fs::path(a.out_dir) / "vocab.txt").string());
    m.timestamp = utc_now();
    m.write(manifest_path(a.out_dir, true));
    return m;
}

RunManifest cmd_eval(const EvalArgs& a, std::ostream& out) {
    require(!a.checkpoint.empty() && !a.data.empty() && !a.out.empty(), "eval: --checkpoint, --data and --out are required");
    if (!fs::is_directory(a.checkpoint)) {
        throw CheckpointError("eval: no checkpoint at '" + a.checkpoint + "'");
    }
    const LoadedRun run = load_training_checkpoint(a.checkpoint);
    const auto records = load_squad_style(a.data);
    const EvalResult ev = evaluate(run.model, run.adapters, records, run.config, run.artifacts);
    ensure_parent(a.out);
    ev.report.write(a.out);
    for (const auto& [lang, s] : ev.report.corpus) {
        out << lang << " n=" << s.count << " em=" << fmt(s.em) << " f1=" << fmt(s.f1) << " bleu=" << fmt(s.bleu)
            << " rouge_l=" << fmt(s.rouge_l) << " embed=" << fmt(s.embed) << "\n";
    }
    RunManifest m;
    m.command = "eval";
    m.args = {{"checkpoint", a.checkpoint}, {"data", a.data}, {"out", a.out}};
    add_inputs(m, {a.checkpoint, a.data});
    m.seed = run.config.seed;
    m.outputs = {a.out + ".json", a.out + ".csv", a.out + "_corpus.csv"};
    m.timestamp = utc_now();
    m.write(manifest_path(a.out, false));
    return m;
}

RunManifest cmd_infer(const InferArgs& a, std::ostream& out) {
    require(!a.checkpoint.empty(), "infer: --checkpoint is required");
    require(!a.question.empty() && !a.context.empty(), "infer: --question and --context are required");
    require(a.shots >= 0, "infer: --shots must be >= 0");
    require(a.samples >= 1, "infer: --samples must be >= 1");
    if (!fs::is_directory(a.checkpoint)) {
        throw CheckpointError("infer: no checkpoint at '" + a.checkpoint + "'");
    }
    const LoadedRun run = load_training_checkpoint(a.checkpoint);
    const ForwardContext ctx = context_for(run);
    const Vocab& vocab = run.artifacts.vocab;

    if (run.config.span_head && !run.config.lm_loss) {
        require(a.shots == 0 && a.samples == 1 && a.prompt_template.empty(),
                "infer: span-head checkpoints extract spans; --shots, --samples and --template do not apply");
        QaRecord r;
        r.id = "query";
        r.context = a.context;
        r.question = a.question;
        prepare_query(r, vocab, run.config.max_seq_len);
        const SpanPrediction p = predict_span(run.model, r, vocab, ctx, run.config.max_answer_tokens);
        out << p.text << "\n";
        if (a.verbose) {
            out << "span tokens [" << p.start << ", " << p.end << "] score " << fmt(p.score) << "\n";
        }
    } else {
        std::vector<std::int64_t> prompt;
        if (!a.prompt_template.empty()) {
            const PromptTemplate tmpl = PromptTemplate::load(a.prompt_template);
            std::vector<Shot> shots;
            std::vector<QaRecord> checked;
            if (a.shots > 0) {
                require(!a.shots_file.empty(), "infer: --shots needs --shots-file");
                const auto pool = load_squad_style(a.shots_file);
                if (static_cast<std::size_t>(a.shots) > pool.size()) {
                    throw ValidationError("infer: asked for " + std::to_string(a.shots) + " shots, '" + a.shots_file +
                                          "' has " + std::to_string(pool.size()));
                }
                for (int i = 0; i < a.shots; ++i) {
                    shots.push_back({pool[i].context, pool[i].question, pool[i].answer});
                    checked.push_back(pool[i]);
                }
            }
            QaRecord q;
            q.id = "query";
            q.context = a.context;
            q.question = a.question;
            checked.push_back(q);
            tmpl.check_delimiters(checked);
            const std::string text = render_prompt(tmpl, a.context, a.question, shots);
            prompt.push_back(kSosId);
            const auto ids = encode(text, vocab);
            prompt.insert(prompt.end(), ids.begin(), ids.end());
        } else {
            require(a.shots == 0, "infer: --shots needs --template");
            prompt = build_chat_prompt(a.context, a.question, run.artifacts.chat_template, vocab,
                                       run.model.config().max_seq_len);
        }
        SelectionConfig sc;
        sc.samples = a.samples;
        sc.temperature = a.samples > 1 && a.temperature == 0.0 ? 0.8 : a.temperature;
        sc.max_tokens = run.config.max_new_tokens;
        sc.seed = a.seed;
        const auto cands = generate(run.model, prompt, sc, vocab, ctx);
        const Selection sel = select_best(cands, run.model, prompt, sc, ctx);
        out << sel.answer << "\n";
        if (a.verbose) {
            for (std::size_t i = 0; i < cands.size(); ++i) {
                out << "candidate " << i << " score " << fmt(sel.scores[i]) << " agreement " << fmt(sel.agreement[i])
                    << ": " << cands[i].text << "\n";
            }
            out << "chosen " << sel.index << " score " << fmt(sel.score) << "\n";
        }
    }

    RunManifest m;
    m.command = "infer";
    m.args = {{"checkpoint", a.checkpoint}, {"question", a.question}, {"context", a.context},
              {"shots", a.shots}, {"shots_file", a.shots_file}, {"template", a.prompt_template},
              {"samples", a.samples}, {"temperature", a.temperature}, {"seed", a.seed}};
    add_inputs(m, {a.checkpoint, a.shots_file, a.prompt_template});
    m.seed = a.seed;
    m.timestamp = utc_now();
    if (!a.manifest.empty()) {
        m.outputs = {"stdout"};
        m.write(a.manifest);
    }
    return m;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Span QA with selective state space models"};
    app.require_subcommand(1);

    VocabArgs va;
    auto* vocab = app.add_subcommand("vocab", "train a vocabulary on a text corpus");
    vocab->add_option("--corpus", va.corpus, "UTF-8 text, one sentence per line")->required();
    vocab->add_option("--size", va.size, "target vocabulary size including specials")->required();
    vocab->add_option("--out", va.out, "vocabulary file")->required();

    PreprocessArgs pa;
    auto* prep = app.add_subcommand("preprocess", "validate records and align answers to tokens");
    prep->add_option("--data", pa.data)->required();
    prep->add_option("--vocab", pa.vocab)->required();
    prep->add_option("--out", pa.out)->required();
    prep->add_option("--max-len", pa.max_len);

    StatsArgs sa;
    auto* stats = app.add_subcommand("stats", "length statistics and correlations");
    stats->add_option("--data", sa.data)->required();
    stats->add_option("--out", sa.out_dir, "output directory")->required();

    TrainArgs ta;
    std::uint64_t seed = 0;
    int epochs = 0;
    auto* train_cmd = app.add_subcommand("train", "fine-tune a model");
    train_cmd->add_option("--data", ta.data)->required();
    train_cmd->add_option("--val", ta.val);
    train_cmd->add_option("--out", ta.out_dir, "output directory")->required();
    train_cmd->add_option("--config", ta.config, "training config JSON");
    train_cmd->add_option("--preset", ta.preset);
    auto* seed_opt = train_cmd->add_option("--seed", seed);
    auto* epochs_opt = train_cmd->add_option("--epochs", epochs);
    train_cmd->add_option("--vocab", ta.vocab);
    train_cmd->add_option("--vocab-size", ta.vocab_size);
    train_cmd->add_option("--chat-template", ta.chat_template);
    train_cmd->add_option("--resume", ta.resume, "checkpoint directory to continue from");

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", ea.checkpoint)->required();
    eval_cmd->add_option("--data", ea.data)->required();
    eval_cmd->add_option("--out", ea.out, "report prefix")->required();

    InferArgs ia;
    auto* infer = app.add_subcommand("infer", "answer one question");
    infer->add_option("--checkpoint", ia.checkpoint)->required();
    infer->add_option("--question", ia.question)->required();
    infer->add_option("--context", ia.context)->required();
    infer->add_option("--shots", ia.shots);
    infer->add_option("--shots-file", ia.shots_file);
    infer->add_option("--template", ia.prompt_template);
    infer->add_option("--samples", ia.samples);
    infer->add_option("--temperature", ia.temperature);
    infer->add_option("--seed", ia.seed);
    infer->add_flag("--verbose", ia.verbose);
    infer->add_option("--manifest", ia.manifest);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        if (!app.get_subcommands().empty()) {
            err << app.get_subcommands().front()->help();
        } else {
            err << app.help();
        }
        return kExitUsage;
    }

    try {
        if (vocab->parsed()) {
            cmd_vocab(va);
        } else if (prep->parsed()) {
            cmd_preprocess(pa);
        } else if (stats->parsed()) {
            cmd_stats(sa);
        } else if (train_cmd->parsed()) {
            if (seed_opt->count() > 0) {
                ta.seed = seed;
            }
            if (epochs_opt->count() > 0) {
                ta.epochs = epochs;
            }
            cmd_train(ta, out);
        } else if (eval_cmd->parsed()) {
            cmd_eval(ea, out);
        } else if (infer->parsed()) {
            cmd_infer(ia, out);
        }
        return kExitOk;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ValidationError& e) {
        err << "invalid input: " << e.what() << "\n";
        return kExitValidation;
    } catch (const CheckpointError& e) {
        err << "invalid input: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

} // namespace ssmqa::cli
