#include "ssmqa/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ssmqa/errors.hpp"
#include "ssmqa/lora.hpp"
#include "ssmqa/ops.hpp"
#include "ssmqa/rng.hpp"

namespace ssmqa {

SsmModel::SsmModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    const std::int64_t v = config_.vocab_size;
    const std::int64_t d = config_.d_model;
    embed_ = Tensor::normal({v, d}, derive_seed(seed, 0), 1.0 / std::sqrt(static_cast<double>(d)));
    auto row0 = embed_.mutable_data().subspan(0, static_cast<std::size_t>(d));
    std::fill(row0.begin(), row0.end(), 0.0);
    const auto variants = config_.layer_variants();
    for (std::size_t i = 0; i < variants.size(); ++i) {
        Layer layer;
        layer.variant = variants[i];
        const std::uint64_t s = derive_seed(seed, 100 + i);
        if (variants[i] == BlockVariant::swa_hybrid) {
            layer.attn = init_attention_block(config_, s);
        } else {
            layer.ssm = init_ssm_block(config_, variants[i], s);
        }
        layers_.push_back(std::move(layer));
    }
    final_norm_ = Tensor::ones({d});
}

std::vector<std::pair<std::string, Tensor>> SsmModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embed", embed_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string prefix = "layer" + std::to_string(i) + ".";
        auto& layer = const_cast<Layer&>(layers_[i]);
        auto fields = layer.variant == BlockVariant::swa_hybrid ? layer.attn.fields() : layer.ssm.fields();
        for (auto& [name, t] : fields) {
            out.emplace_back(prefix + name, *t);
        }
    }
    out.emplace_back("final_norm", final_norm_);
    if (has_span_head()) {
        out.emplace_back("span_head.weight", span_head_.weight);
        out.emplace_back("span_head.bias", span_head_.bias);
    }
    return out;
}

Tensor* SsmModel::find(const std::string& name) {
    if (name == "embed") {
        return &embed_;
    }
    if (name == "final_norm") {
        return &final_norm_;
    }
    if (name == "span_head.weight") {
        return has_span_head() ? &span_head_.weight : nullptr;
    }
    if (name == "span_head.bias") {
        return has_span_head() ? &span_head_.bias : nullptr;
    }
    if (name.rfind("layer", 0) == 0) {
        const auto dot = name.find('.');
        if (dot == std::string::npos) {
            return nullptr;
        }
        std::size_t idx = 0;
        try {
            idx = std::stoul(name.substr(5, dot - 5));
        } catch (const std::exception&) {
            return nullptr;
        }
        if (idx >= layers_.size()) {
            return nullptr;
        }
        const std::string field = name.substr(dot + 1);
        auto& layer = layers_[idx];
        auto fields = layer.variant == BlockVariant::swa_hybrid ? layer.attn.fields() : layer.ssm.fields();
        for (auto& [fname, t] : fields) {
            if (fname == field) {
                return t;
            }
        }
    }
    return nullptr;
}

const Tensor& SsmModel::parameter(const std::string& name) const {
    const Tensor* t = const_cast<SsmModel*>(this)->find(name);
    if (t == nullptr) {
        throw std::out_of_range("model has no parameter '" + name + "'");
    }
    return *t;
}

void SsmModel::set_parameter(const std::string& name, const Tensor& value) {
    if ((name == "span_head.weight" || name == "span_head.bias") && !has_span_head()) {
        enable_span_head(0);
    }
    Tensor* t = find(name);
    if (t == nullptr) {
        throw std::out_of_range("model has no parameter '" + name + "'");
    }
    if (t->shape() != value.shape()) {
        throw ShapeError("parameter '" + name + "' expects " + shape_str(t->shape()) + ", got " +
                         shape_str(value.shape()));
    }
    const bool rg = t->requires_grad();
    *t = value;
    t->set_requires_grad(rg);
}

std::size_t SsmModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : named_parameters()) {
        n += t.numel();
    }
    return n;
}

void SsmModel::freeze_base() {
    for (auto& [name, t] : named_parameters()) {
        if (name.rfind("span_head.", 0) != 0) {
            t.set_requires_grad(false);
        }
    }
}

void SsmModel::enable_span_head(std::uint64_t seed) {
    const std::int64_t d = config_.d_model;
    span_head_.weight = Tensor::normal({d, 2}, seed, 0.02);
    span_head_.bias = Tensor::zeros({2});
    span_head_.weight.set_requires_grad(true);
    span_head_.bias.set_requires_grad(true);
}

ForwardContext SsmModel::resolve(const ForwardContext& ctx) const {
    ForwardContext c = ctx;
    c.norm_eps = config_.norm_eps;
    c.scan_mode = config_.scan_mode;
    return c;
}

Tensor SsmModel::embedding_table(const ForwardContext& ctx) const {
    if (ctx.adapters != nullptr) {
        if (const LoraAdapter* ad = ctx.adapters->find("embed")) {
            return add(embed_, lora_delta(*ad));
        }
    }
    return embed_;
}

Tensor SsmModel::hidden(std::span<const std::int64_t> ids, std::int64_t batch, std::int64_t steps,
                        const ForwardContext& ctx_in) const {
    if (batch < 0 || steps < 0 || static_cast<std::int64_t>(ids.size()) != batch * steps) {
        throw ShapeError("model: " + std::to_string(ids.size()) + " ids for batch " + std::to_string(batch) + " x " +
                         std::to_string(steps));
    }
    if (steps > config_.max_seq_len) {
        throw ShapeError("model: sequence length " + std::to_string(steps) + " exceeds max_seq_len " +
                         std::to_string(config_.max_seq_len));
    }
    const ForwardContext ctx = resolve(ctx_in);
    Tensor x = embedding(embedding_table(ctx), ids, {batch, steps});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string name = "layer" + std::to_string(i);
        const Layer& layer = layers_[i];
        x = layer.variant == BlockVariant::swa_hybrid ? swa_block_forward(x, layer.attn, name, ctx)
                                                      : ssm_block_forward(x, layer.ssm, name, ctx);
    }
    return rmsnorm(x, final_norm_, ctx.norm_eps);
}

Tensor SsmModel::logits(std::span<const std::int64_t> ids, std::int64_t batch, std::int64_t steps,
                        const ForwardContext& ctx) const {
    const Tensor h = hidden(ids, batch, steps, ctx);
    return matmul(h, transpose(embedding_table(resolve(ctx))));
}

Tensor SsmModel::span_logits(const Tensor& hidden) const {
    if (!has_span_head()) {
        throw std::logic_error("model has no span head");
    }
    return add(matmul(hidden, span_head_.weight), span_head_.bias);
}

} // namespace ssmqa
