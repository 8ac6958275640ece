#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssmqa/attention.hpp"
#include "ssmqa/ssm.hpp"
#include "ssmqa/tensor.hpp"

namespace ssmqa {

// Start/end predictors over final hidden states: column 0 scores span
// starts, column 1 span ends.
struct SpanHead {
    Tensor weight; // [d, 2]
    Tensor bias;   // [2]
};

struct Layer {
    BlockVariant variant = BlockVariant::diagonal;
    SsmBlockParams ssm;        // diagonal and scalar_per_head layers
    AttentionBlockParams attn; // swa_hybrid layers
};

// Embedding -> block stack -> final rmsnorm -> tied output head.
class SsmModel {
public:
    SsmModel() = default;
    SsmModel(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }

    // Stable order: embed, layer<i>.<field>..., final_norm, then span_head.*.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    const Tensor& parameter(const std::string& name) const;
    void set_parameter(const std::string& name, const Tensor& value);
    std::size_t parameter_count() const;

    // Marks every base weight frozen; the span head stays trainable.
    void freeze_base();

    void enable_span_head(std::uint64_t seed);
    bool has_span_head() const { return span_head_.weight.defined(); }
    const SpanHead& span_head() const { return span_head_; }

    // Embedding table with the "embed" adapter delta applied, if any.
    Tensor embedding_table(const ForwardContext& ctx) const;
    // Final normalized hidden states [B, T, d] for row-major ids [B, T].
    Tensor hidden(std::span<const std::int64_t> ids, std::int64_t batch, std::int64_t steps,
                  const ForwardContext& ctx) const;
    // Next-token logits [B, T, V].
    Tensor logits(std::span<const std::int64_t> ids, std::int64_t batch, std::int64_t steps,
                  const ForwardContext& ctx) const;
    // [B, T, 2] start/end scores from hidden states.
    Tensor span_logits(const Tensor& hidden) const;

    const std::vector<Layer>& layers() const { return layers_; }

private:
    ForwardContext resolve(const ForwardContext& ctx) const;
    Tensor* find(const std::string& name);

    ModelConfig config_;
    Tensor embed_;      // [V, d]; row 0 (pad) starts at zero
    std::vector<Layer> layers_;
    Tensor final_norm_; // [d]
    SpanHead span_head_;
};

} // namespace ssmqa
