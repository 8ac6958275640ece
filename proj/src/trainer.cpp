#include "ssmqa/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "ssmqa/checkpoint.hpp"
#include "ssmqa/errors.hpp"
#include "ssmqa/ops.hpp"
#include "ssmqa/prompting.hpp"
#include "ssmqa/rng.hpp"

namespace ssmqa {

namespace {

constexpr std::int64_t kIgnore = -1;
constexpr double kMasked = -1e9;

std::string step_dir(const std::string& root, std::int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "checkpoint-%06lld", static_cast<long long>(step));
    return (std::filesystem::path(root) / buf).string();
}

std::string join(const std::string& root, const std::string& leaf) {
    return (std::filesystem::path(root) / leaf).string();
}

} // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("train config: " + m); };
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        fail("learning_rate must be positive");
    }
    if (batch_size < 1 || accumulation_steps < 1) {
        fail("batch_size and accumulation_steps must be >= 1");
    }
    if (epochs < 0 || warmup_steps < 0 || eval_interval < 0) {
        fail("epochs, warmup_steps and eval_interval must be >= 0");
    }
    if (checkpoint_interval < 1) {
        fail("checkpoint_interval must be >= 1");
    }
    if (max_seq_len < 4) {
        fail("max_seq_len must be >= 4");
    }
    if (!lm_loss && !span_head) {
        fail("enable lm_loss, span_head or both");
    }
    if (use_lora && (lora.rank < 1 || !(lora.alpha > 0.0) || lora.dropout < 0.0 || lora.dropout >= 1.0)) {
        fail("lora needs rank >= 1, alpha > 0 and dropout in [0, 1)");
    }
    if (max_answer_tokens < 0 || max_new_tokens < 1) {
        fail("max_answer_tokens must be >= 0 and max_new_tokens >= 1");
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || !(adam_eps > 0.0)) {
        fail("adam betas must lie in [0, 1) and eps > 0");
    }
}

TrainConfig TrainConfig::preset(const std::string& name) {
    TrainConfig c;
    c.preset_name = name;
    if (name == "mamba" || name == "mamba2" || name == "jamba" || name == "zamba" || name == "samba" ||
        name == "hymba" || name == "custom") {
        c.model_preset = name == "custom" ? "toy" : name;
        c.learning_rate = 2e-4;
        c.batch_size = 4;
        c.accumulation_steps = 8;
        c.epochs = 3;
        c.warmup_steps = 100;
        if (name == "jamba") {
            c.lora = LoraConfig::wide();
        } else if (name == "zamba") {
            c.max_seq_len = 4096;
        } else if (name == "samba") {
            c.batch_size = 8;
        } else if (name == "hymba") {
            c.learning_rate = 3e-4;
        }
    } else if (name == "falcon-mamba" || name == "falcon") {
        c.preset_name = "falcon-mamba";
        c.model_preset = "falcon-mamba";
        c.learning_rate = 1e-4;
        c.batch_size = 4;
        c.accumulation_steps = 1;
        c.epochs = 10;
        c.warmup_steps = 100;
        c.span_head = true;
        c.lm_loss = false;
    } else if (name == "toy") {
        c.model_preset = "toy";
        c.learning_rate = 3e-3;
        c.batch_size = 8;
        c.accumulation_steps = 1;
        c.epochs = 20;
        c.warmup_steps = 20;
        c.max_seq_len = 256;
        c.span_head = true;
        c.lm_loss = false;
        c.lora = {4, 16.0, 0.0};
    } else {
        throw ValidationError("unknown train preset '" + name + "'");
    }
    return c;
}

std::vector<std::string> TrainConfig::preset_names() {
    return {"toy", "mamba", "mamba2", "falcon-mamba", "jamba", "zamba", "samba", "hymba"};
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"preset_name", c.preset_name},
                       {"model_preset", c.model_preset},
                       {"learning_rate", c.learning_rate},
                       {"batch_size", c.batch_size},
                       {"accumulation_steps", c.accumulation_steps},
                       {"epochs", c.epochs},
                       {"warmup_steps", c.warmup_steps},
                       {"max_seq_len", c.max_seq_len},
                       {"eval_interval", c.eval_interval},
                       {"checkpoint_interval", c.checkpoint_interval},
                       {"seed", c.seed},
                       {"lm_loss", c.lm_loss},
                       {"span_head", c.span_head},
                       {"use_lora", c.use_lora},
                       {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}, {"dropout", c.lora.dropout}}},
                       {"max_answer_tokens", c.max_answer_tokens},
                       {"max_new_tokens", c.max_new_tokens},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"adam_eps", c.adam_eps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (!j.is_object()) {
        throw ValidationError("train config must be a JSON object");
    }
    c = j.contains("preset_name") ? TrainConfig::preset(j["preset_name"].get<std::string>()) : TrainConfig{};
    static const std::set<std::string> known{"preset_name", "model_preset", "learning_rate", "batch_size",
                                             "accumulation_steps", "epochs", "warmup_steps", "max_seq_len",
                                             "eval_interval", "checkpoint_interval", "seed", "lm_loss", "span_head",
                                             "use_lora", "lora", "max_answer_tokens", "max_new_tokens", "beta1",
                                             "beta2", "adam_eps"};
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) {
            throw ValidationError("train config: unknown key '" + k + "'");
        }
    }
    try {
        c.model_preset = j.value("model_preset", c.model_preset);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.accumulation_steps = j.value("accumulation_steps", c.accumulation_steps);
        c.epochs = j.value("epochs", c.epochs);
        c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
        c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
        c.eval_interval = j.value("eval_interval", c.eval_interval);
        c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
        c.seed = j.value("seed", c.seed);
        c.lm_loss = j.value("lm_loss", c.lm_loss);
        c.span_head = j.value("span_head", c.span_head);
        c.use_lora = j.value("use_lora", c.use_lora);
        if (j.contains("lora")) {
            const auto& l = j["lora"];
            c.lora.rank = l.value("rank", c.lora.rank);
            c.lora.alpha = l.value("alpha", c.lora.alpha);
            c.lora.dropout = l.value("dropout", c.lora.dropout);
        }
        c.max_answer_tokens = j.value("max_answer_tokens", c.max_answer_tokens);
        c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("train config: " + std::string(e.what()));
    }
    c.validate();
}

double lr_schedule(std::int64_t step, const TrainConfig& config) {
    if (step < 0) {
        throw std::invalid_argument("lr_schedule: step must be >= 0");
    }
    if (step >= config.warmup_steps) {
        return config.learning_rate;
    }
    return config.learning_rate * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
}

void Adam::step(const std::vector<std::pair<std::string, Tensor>>& params, double lr) {
    NoGradGuard guard;
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, p] : params) {
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.empty()) {
            m.assign(p.numel(), 0.0);
            v.assign(p.numel(), 0.0);
        }
        const auto g = p.grad();
        Tensor target = p;
        auto w = target.mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

std::map<std::string, Tensor> Adam::state_tensors(const std::vector<std::pair<std::string, Tensor>>& params) const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, p] : params) {
        const auto it = m_.find(name);
        std::vector<double> m = it == m_.end() ? std::vector<double>(p.numel(), 0.0) : it->second;
        std::vector<double> v = it == m_.end() ? std::vector<double>(p.numel(), 0.0) : v_.at(name);
        out.emplace("optim/" + name + "/m", Tensor::from_values(p.shape(), std::move(m)));
        out.emplace("optim/" + name + "/v", Tensor::from_values(p.shape(), std::move(v)));
    }
    return out;
}

void Adam::load_state(const std::map<std::string, Tensor>& tensors, std::int64_t steps) {
    m_.clear();
    v_.clear();
    for (const auto& [key, t] : tensors) {
        if (key.rfind("optim/", 0) != 0 || key.size() < 9) {
            continue;
        }
        const std::string name = key.substr(6, key.size() - 8);
        const std::string which = key.substr(key.size() - 1);
        auto& dst = which == "m" ? m_[name] : v_[name];
        dst.assign(t.data().begin(), t.data().end());
    }
    t_ = steps;
}

AdapterSet setup_finetune(SsmModel& model, const TrainConfig& config) {
    if (config.span_head && !model.has_span_head()) {
        model.enable_span_head(derive_seed(config.seed, 77));
    }
    if (!config.use_lora) {
        for (auto& [name, t] : model.named_parameters()) {
            t.set_requires_grad(true);
        }
        return {};
    }
    const auto targets = select_target_layers(model);
    return attach_adapters(model, targets, config.lora, derive_seed(config.seed, 99));
}

std::vector<std::pair<std::string, Tensor>> trainable_parameters(const SsmModel& model, const AdapterSet& adapters) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& [name, t] : model.named_parameters()) {
        if (t.requires_grad()) {
            out.emplace_back("model/" + name, t);
        }
    }
    for (auto& [name, t] : adapters.named_parameters()) {
        out.emplace_back(name, t);
    }
    return out;
}

std::vector<TrainExample> make_examples(const std::vector<QaRecord>& records, const Vocab& vocab,
                                        const TrainConfig& config, const ChatTemplate& tmpl) {
    std::vector<TrainExample> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        TrainExample ex;
        if (config.lm_loss) {
            auto chat = build_chat_example(r, tmpl, vocab, config.max_seq_len);
            ex.chat_ids = std::move(chat.ids);
            ex.loss_mask = std::move(chat.loss_mask);
        }
        if (config.span_head) {
            QaRecord p = r;
            prepare_record(p, vocab, config.max_seq_len);
            ex.span_ids = std::move(p.token_ids);
            ex.context_offset = p.context_offset;
            ex.context_len = p.context_len;
            ex.start = p.context_offset + p.token_start;
            ex.end = p.context_offset + p.token_end;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

LossNormalizer normalizer_for(const std::vector<const TrainExample*>& examples, const TrainConfig& config) {
    LossNormalizer n;
    for (const auto* e : examples) {
        if (config.lm_loss) {
            for (std::size_t t = 1; t < e->loss_mask.size(); ++t) {
                n.lm_tokens += e->loss_mask[t];
            }
        }
        if (config.span_head) {
            n.span_examples += 1;
        }
    }
    return n;
}

Tensor batch_loss(const SsmModel& model, const std::vector<const TrainExample*>& batch, const TrainConfig& config,
                  const LossNormalizer& norm, const ForwardContext& ctx) {
    if (batch.empty()) {
        throw std::invalid_argument("batch_loss: empty batch");
    }
    const auto B = static_cast<std::int64_t>(batch.size());
    Tensor total;
    if (config.lm_loss) {
        std::vector<std::vector<std::int64_t>> seqs;
        std::size_t T = 0;
        for (const auto* e : batch) {
            seqs.push_back(e->chat_ids);
            T = std::max(T, e->chat_ids.size());
        }
        const auto padded = pad_and_mask(seqs, static_cast<std::int64_t>(T));
        const Tensor logits = model.logits(padded.ids, B, static_cast<std::int64_t>(T), ctx);
        std::vector<std::int64_t> targets(static_cast<std::size_t>(B) * T, kIgnore);
        std::vector<double> weights(targets.size(), 0.0);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const auto& e = *batch[b];
            for (std::size_t t = 0; t + 1 < e.chat_ids.size(); ++t) {
                if (e.loss_mask[t + 1] == 1) {
                    targets[b * T + t] = e.chat_ids[t + 1];
                    weights[b * T + t] = 1.0 / norm.lm_tokens;
                }
            }
        }
        total = cross_entropy(logits, targets, kIgnore, weights);
    }
    if (config.span_head) {
        std::vector<std::vector<std::int64_t>> seqs;
        std::size_t T = 0;
        for (const auto* e : batch) {
            seqs.push_back(e->span_ids);
            T = std::max(T, e->span_ids.size());
        }
        const auto TT = static_cast<std::int64_t>(T);
        const auto padded = pad_and_mask(seqs, TT);
        const Tensor h = model.hidden(padded.ids, B, TT, ctx);
        const Tensor sl = model.span_logits(h);
        std::vector<double> mask(static_cast<std::size_t>(B) * T, kMasked);
        std::vector<std::int64_t> st, en;
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const auto& e = *batch[b];
            for (std::int64_t k = 0; k < e.context_len; ++k) {
                mask[b * T + static_cast<std::size_t>(e.context_offset + k)] = 0.0;
            }
            st.push_back(e.start);
            en.push_back(e.end);
        }
        const Tensor m = Tensor::from_values({B, TT}, std::move(mask));
        const Tensor s_logits = add(reshape(slice_last(sl, 0, 1), {B, TT}), m);
        const Tensor e_logits = add(reshape(slice_last(sl, 1, 2), {B, TT}), m);
        const std::vector<double> w(batch.size(), 0.5 / norm.span_examples);
        const Tensor span = add(cross_entropy(s_logits, st, kIgnore, w), cross_entropy(e_logits, en, kIgnore, w));
        total = total.defined() ? add(total, span) : span;
    }
    return total;
}

double mean_loss(const SsmModel& model, const AdapterSet& adapters, const std::vector<TrainExample>& examples,
                 const TrainConfig& config) {
    if (examples.empty()) {
        throw ValidationError("mean_loss: no examples");
    }
    NoGradGuard guard;
    ForwardContext ctx;
    ctx.adapters = adapters.empty() ? nullptr : &adapters;
    std::vector<const TrainExample*> all;
    for (const auto& e : examples) {
        all.push_back(&e);
    }
    const auto norm = normalizer_for(all, config);
    double total = 0;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t i = 0; i < all.size(); i += bs) {
        const std::vector<const TrainExample*> b(all.begin() + static_cast<std::ptrdiff_t>(i),
                                                 all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), i + bs)));
        total += batch_loss(model, b, config, norm, ctx).item();
    }
    return total;
}

void save_training_checkpoint(const std::string& dir, const SsmModel& model, const AdapterSet& adapters,
                              const Adam& optimizer, std::int64_t step, const TrainConfig& config,
                              const RunArtifacts& artifacts) {
    CheckpointState state;
    state.step = step;
    for (const auto& [name, t] : model.named_parameters()) {
        state.tensors.emplace("model/" + name, t);
    }
    for (const auto& [name, t] : adapters.named_parameters()) {
        state.tensors.emplace(name, t);
    }
    for (auto& [name, t] : optimizer.state_tensors(trainable_parameters(model, adapters))) {
        state.tensors.emplace(name, t);
    }
    state.meta = {{"train_config", config},
                  {"model_config", model.config()},
                  {"vocab", artifacts.vocab.serialize()},
                  {"chat_template", artifacts.chat_template.to_json()},
                  {"optimizer_steps", optimizer.steps()},
                  {"extra", artifacts.extra}};
    save_checkpoint(state, dir);
}

LoadedRun load_training_checkpoint(const std::string& dir) {
    const CheckpointState state = load_checkpoint(dir);
    LoadedRun run;
    try {
        run.config = state.meta.at("train_config").get<TrainConfig>();
        const auto mc = state.meta.at("model_config").get<ModelConfig>();
        run.model = SsmModel(mc, 0);
        run.artifacts.vocab = Vocab::parse(state.meta.at("vocab").get<std::string>());
        run.artifacts.chat_template = ChatTemplate::from_json(state.meta.at("chat_template"));
        run.artifacts.extra = state.meta.value("extra", nlohmann::json::object());
        run.step = state.step;
        std::map<std::string, std::pair<Tensor, Tensor>> lora;
        for (const auto& [name, t] : state.tensors) {
            if (name.rfind("model/", 0) == 0) {
                run.model.set_parameter(name.substr(6), t.clone());
            } else if (name.rfind("adapters/", 0) == 0) {
                const std::string rest = name.substr(9);
                const std::string target = rest.substr(0, rest.size() - 2);
                (rest.back() == 'A' ? lora[target].first : lora[target].second) = t.clone();
            }
        }
        if (run.config.use_lora) {
            run.model.freeze_base();
        }
        for (auto& [target, ab] : lora) {
            if (!ab.first.defined() || !ab.second.defined()) {
                throw CheckpointError("adapter '" + target + "' is missing a factor");
            }
            LoraAdapter ad;
            ad.target = target;
            ad.a = ab.first;
            ad.b = ab.second;
            ad.rank = static_cast<int>(ad.a.dim(0));
            ad.alpha = run.config.lora.alpha;
            ad.dropout = run.config.lora.dropout;
            ad.a.set_requires_grad(true);
            ad.b.set_requires_grad(true);
            run.adapters.add(std::move(ad));
        }
        run.optimizer = Adam(run.config.beta1, run.config.beta2, run.config.adam_eps);
        run.optimizer.load_state(state.tensors, state.meta.at("optimizer_steps").get<std::int64_t>());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint '" + dir + "' has malformed metadata: " + e.what());
    } catch (const ValidationError& e) {
        throw CheckpointError("checkpoint '" + dir + "': " + e.what());
    } catch (const std::out_of_range& e) {
        throw CheckpointError("checkpoint '" + dir + "': " + e.what());
    } catch (const std::invalid_argument& e) {
        throw CheckpointError("checkpoint '" + dir + "': " + e.what());
    }
    return run;
}

TrainResult train(SsmModel& model, AdapterSet& adapters, const std::vector<QaRecord>& train_records,
                  const std::vector<QaRecord>& val_records, const TrainConfig& config, const RunArtifacts& artifacts,
                  const TrainOptions& options) {
    config.validate();
    if (train_records.empty()) {
        throw ValidationError("train: empty training set");
    }
    if (config.span_head && !model.has_span_head()) {
        throw ValidationError("train: span loss enabled but the model has no span head");
    }
    const auto examples = make_examples(train_records, artifacts.vocab, config, artifacts.chat_template);
    const auto val_examples = make_examples(val_records, artifacts.vocab, config, artifacts.chat_template);
    const auto params = trainable_parameters(model, adapters);
    if (params.empty()) {
        throw ValidationError("train: nothing to train");
    }
    Adam opt(config.beta1, config.beta2, config.adam_eps);
    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    std::int64_t step = 0;
    if (!options.resume_from.empty()) {
        const CheckpointState state = load_checkpoint(options.resume_from);
        for (const auto& [name, p] : params) {
            const auto it = state.tensors.find(name);
            if (it == state.tensors.end() || it->second.shape() != p.shape()) {
                throw CheckpointError("resume: checkpoint lacks a matching '" + name + "'");
            }
            const auto src = it->second.data();
            Tensor target = p;
            auto dst = target.mutable_data();
            std::copy(src.begin(), src.end(), dst.begin());
        }
        opt.load_state(state.tensors, state.meta.value("optimizer_steps", state.step));
        step = state.step;
        const auto extra = state.meta.value("extra", nlohmann::json::object());
        if (extra.contains("best_val_loss") && !extra["best_val_loss"].is_null()) {
            result.best_val_loss = extra["best_val_loss"].get<double>();
            result.best_step = extra.value("best_step", std::int64_t{-1});
        }
    }

    RunArtifacts art = artifacts;
    auto save = [&](const std::string& dir) {
        art.extra["best_val_loss"] = std::isfinite(result.best_val_loss) ? nlohmann::json(result.best_val_loss)
                                                                         : nlohmann::json(nullptr);
        art.extra["best_step"] = result.best_step;
        save_training_checkpoint(dir, model, adapters, opt, step, config, art);
    };
    std::ofstream log_file;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        log_file.open(join(options.out_dir, "train_log.ndjson"),
                      options.resume_from.empty() ? std::ios::trunc : std::ios::app);
    }

    const std::size_t n = examples.size();
    const auto bs = static_cast<std::size_t>(config.batch_size);
    const auto accum = static_cast<std::size_t>(config.accumulation_steps);
    const std::size_t micro_per_epoch = (n + bs - 1) / bs;
    const std::size_t steps_per_epoch = (micro_per_epoch + accum - 1) / accum;
    const auto first_epoch = static_cast<std::size_t>(step) / steps_per_epoch;

    for (std::size_t epoch = first_epoch; epoch < static_cast<std::size_t>(config.epochs); ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(config.seed, 1000 + epoch));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0;
        double epoch_count = 0;
        const std::size_t begin_step = epoch == first_epoch ? static_cast<std::size_t>(step) % steps_per_epoch : 0;
        for (std::size_t s = begin_step; s < steps_per_epoch; ++s) {
            const std::size_t m0 = s * accum;
            const std::size_t m1 = std::min(micro_per_epoch, m0 + accum);
            std::vector<const TrainExample*> step_examples;
            for (std::size_t i = m0 * bs; i < std::min(n, m1 * bs); ++i) {
                step_examples.push_back(&examples[order[i]]);
            }
            const auto norm = normalizer_for(step_examples, config);
            for (auto [name, p] : params) {
                p.zero_grad();
            }
            double step_loss = 0;
            for (std::size_t m = m0; m < m1; ++m) {
                const std::vector<const TrainExample*> micro(
                    step_examples.begin() + static_cast<std::ptrdiff_t>((m - m0) * bs),
                    step_examples.begin() + static_cast<std::ptrdiff_t>(std::min(step_examples.size(), (m - m0 + 1) * bs)));
                Rng drop_rng(derive_seed(config.seed, 0x10000000ULL + epoch * micro_per_epoch + m));
                ForwardContext ctx;
                ctx.adapters = adapters.empty() ? nullptr : &adapters;
                ctx.training = true;
                ctx.rng = &drop_rng;
                const Tensor loss = batch_loss(model, micro, config, norm, ctx);
                const double v = loss.item();
                if (!std::isfinite(v)) {
                    throw DivergenceError("non-finite loss " + std::to_string(v) + " at step " +
                                          std::to_string(step + 1) + " (epoch " + std::to_string(epoch) +
                                          ", micro-batch " + std::to_string(m) + ")");
                }
                loss.backward();
                step_loss += v;
            }
            ++step;
            const double lr = lr_schedule(step, config);
            opt.step(params, lr);
            epoch_loss += step_loss * static_cast<double>(step_examples.size());
            epoch_count += static_cast<double>(step_examples.size());

            nlohmann::json rec{{"step", step}, {"epoch", epoch}, {"lr", lr}, {"loss", step_loss}};
            const bool last_in_epoch = s + 1 == steps_per_epoch;
            const bool eval_due = config.eval_interval > 0 ? step % config.eval_interval == 0 : last_in_epoch;
            if (eval_due && !val_examples.empty()) {
                const double vl = mean_loss(model, adapters, val_examples, config);
                rec["eval_loss"] = vl;
                if (vl < result.best_val_loss) {
                    result.best_val_loss = vl;
                    result.best_step = step;
                    if (!options.out_dir.empty()) {
                        save(join(options.out_dir, "best"));
                    }
                }
            }
            if (step % config.checkpoint_interval == 0) {
                result.checkpoint_steps.push_back(step);
                if (!options.out_dir.empty()) {
                    save(step_dir(options.out_dir, step));
                }
            }
            if (log_file.is_open()) {
                log_file << rec.dump() << "\n";
                log_file.flush();
            }
            result.log.push_back(std::move(rec));
        }
        result.epoch_mean_loss.push_back(epoch_count > 0 ? epoch_loss / epoch_count : 0.0);
        if (options.on_epoch_end && !options.on_epoch_end(epoch)) {
            break;
        }
    }
    result.steps = step;
    if (!options.out_dir.empty() && options.write_final) {
        save(join(options.out_dir, "final"));
    }
    return result;
}

EvalResult evaluate(const SsmModel& model, const AdapterSet& adapters, const std::vector<QaRecord>& records,
                    const TrainConfig& config, const RunArtifacts& artifacts) {
    if (records.empty()) {
        throw ValidationError("evaluate: empty dataset");
    }
    EvalResult out;
    ForwardContext ctx;
    ctx.adapters = adapters.empty() ? nullptr : &adapters;
    const auto examples = make_examples(records, artifacts.vocab, config, artifacts.chat_template);
    out.loss = mean_loss(model, adapters, examples, config);
    if (config.span_head) {
        std::vector<QaRecord> prepared = records;
        for (auto& r : prepared) {
            prepare_record(r, artifacts.vocab, config.max_seq_len);
        }
        for (const auto& p : predict_spans(model, prepared, artifacts.vocab, ctx, config.max_answer_tokens)) {
            out.predictions.push_back(p.text);
        }
    } else {
        SelectionConfig sel;
        sel.max_tokens = config.max_new_tokens;
        for (const auto& r : records) {
            const auto prompt = build_chat_prompt(r.context, r.question, artifacts.chat_template, artifacts.vocab,
                                                  model.config().max_seq_len - config.max_new_tokens);
            out.predictions.push_back(generate(model, prompt, sel, artifacts.vocab, ctx).front().text);
        }
    }
    std::vector<MetricSample> samples;
    for (std::size_t i = 0; i < records.size(); ++i) {
        samples.push_back({records[i].id, records[i].lang, out.predictions[i], records[i].answer});
    }
    MetricOptions mo;
    mo.tokenizer = vocab_tokenizer(artifacts.vocab);
    mo.embedder = model_embedder(model, artifacts.vocab);
    out.report = score_samples(samples, mo);
    return out;
}

} // namespace ssmqa
