#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmqa/dataset.hpp"
#include "ssmqa/lora.hpp"
#include "ssmqa/metrics.hpp"
#include "ssmqa/model.hpp"
#include "ssmqa/tokenizer.hpp"

namespace ssmqa {

struct TrainConfig {
    std::string preset_name = "custom";
    std::string model_preset = "toy";
    double learning_rate = 2e-4;
    int batch_size = 4;
    int accumulation_steps = 8;
    int epochs = 3;
    int warmup_steps = 100;
    int max_seq_len = 2048;
    int eval_interval = 0; // optimizer steps; 0 = end of every epoch
    int checkpoint_interval = 500;
    std::uint64_t seed = 0;
    bool lm_loss = true;    // next-token loss on chat-formatted sequences
    bool span_head = false; // start/end cross-entropy over the context
    bool use_lora = true;
    LoraConfig lora;
    int max_answer_tokens = 64;
    int max_new_tokens = 32;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    int effective_batch() const { return batch_size * accumulation_steps; }
    void validate() const;

    static TrainConfig preset(const std::string& name);
    static std::vector<std::string> preset_names();
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Linear warmup 0 -> lr over warmup_steps, constant afterwards. Update k
// (1-based) uses lr_schedule(k).
double lr_schedule(std::int64_t step, const TrainConfig& config);

// Adam over named parameters; moments are keyed by name.
class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<std::pair<std::string, Tensor>>& params, double lr);
    std::int64_t steps() const { return t_; }

    // "optim/<name>/m" and "optim/<name>/v".
    std::map<std::string, Tensor> state_tensors(const std::vector<std::pair<std::string, Tensor>>& params) const;
    void load_state(const std::map<std::string, Tensor>& tensors, std::int64_t steps);

private:
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

// Freezes the base, enables the span head when configured and attaches
// adapters to every target layer (empty set without LoRA).
AdapterSet setup_finetune(SsmModel& model, const TrainConfig& config);

// Model parameters that require grad ("model/<name>") followed by adapter
// parameters ("adapters/<target>/A|B").
std::vector<std::pair<std::string, Tensor>> trainable_parameters(const SsmModel& model, const AdapterSet& adapters);

struct TrainExample {
    // chat-formatted sequence for the LM loss
    std::vector<std::int64_t> chat_ids;
    std::vector<int> loss_mask;
    // [sos] q [eos] ctx [eos] layout for the span loss
    std::vector<std::int64_t> span_ids;
    std::int64_t context_offset = 0;
    std::int64_t context_len = 0;
    std::int64_t start = 0; // absolute positions
    std::int64_t end = 0;
};

std::vector<TrainExample> make_examples(const std::vector<QaRecord>& records, const Vocab& vocab,
                                        const TrainConfig& config, const ChatTemplate& tmpl);

struct LossNormalizer {
    double lm_tokens = 0;
    double span_examples = 0;
};
LossNormalizer normalizer_for(const std::vector<const TrainExample*>& examples, const TrainConfig& config);

// Loss of one micro-batch scaled so that summing over the micro-batches of a
// step gives the mean over the whole step.
Tensor batch_loss(const SsmModel& model, const std::vector<const TrainExample*>& batch, const TrainConfig& config,
                  const LossNormalizer& norm, const ForwardContext& ctx);

struct RunArtifacts {
    Vocab vocab;
    ChatTemplate chat_template;
    nlohmann::json extra = nlohmann::json::object();
};

// Writes model, adapters, optimizer moments and configs.
void save_training_checkpoint(const std::string& dir, const SsmModel& model, const AdapterSet& adapters,
                              const Adam& optimizer, std::int64_t step, const TrainConfig& config,
                              const RunArtifacts& artifacts);

struct LoadedRun {
    TrainConfig config;
    SsmModel model;
    AdapterSet adapters;
    Adam optimizer;
    std::int64_t step = 0;
    RunArtifacts artifacts;
};
LoadedRun load_training_checkpoint(const std::string& dir);

struct TrainOptions {
    std::string out_dir;        // empty: nothing written
    std::string resume_from;    // checkpoint dir to continue from
    const RunArtifacts* artifacts = nullptr;
    bool write_final = true;
    // Called after every epoch with the 0-based epoch index; returning false
    // stops training (final checkpoint still written).
    std::function<bool(std::size_t epoch)> on_epoch_end;
};

struct TrainResult {
    std::int64_t steps = 0;
    std::vector<std::int64_t> checkpoint_steps; // periodic ones, not final/best
    std::vector<double> epoch_mean_loss;
    std::vector<nlohmann::json> log;
    double best_val_loss = 0;
    std::int64_t best_step = -1;
};

TrainResult train(SsmModel& model, AdapterSet& adapters, const std::vector<QaRecord>& train_records,
                  const std::vector<QaRecord>& val_records, const TrainConfig& config, const RunArtifacts& artifacts,
                  const TrainOptions& options = {});

// Mean objective over `examples` without dropout.
double mean_loss(const SsmModel& model, const AdapterSet& adapters, const std::vector<TrainExample>& examples,
                 const TrainConfig& config);

struct EvalResult {
    MetricReport report;
    double loss = 0;
    std::vector<std::string> predictions;
};

// Span mode when config.span_head, otherwise greedy chat generation. The
// embedding metric uses the frozen base (no adapters), so scores from base
// and fine-tuned runs are comparable.
EvalResult evaluate(const SsmModel& model, const AdapterSet& adapters, const std::vector<QaRecord>& records,
                    const TrainConfig& config, const RunArtifacts& artifacts);

} // namespace ssmqa
