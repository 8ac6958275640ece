#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssmqa/tensor.hpp"

namespace ssmqa {

class Rng;
struct ModelConfig;
class SsmModel;

struct LoraConfig {
    int rank = 8;
    double alpha = 32.0;
    double dropout = 0.1;

    static LoraConfig defaults() { return {}; }
    // Larger-capacity variant used by the jamba-style preset.
    static LoraConfig wide() { return {16, 32.0, 0.1}; }
};

// Low-rank update for a base weight W of shape [d_in, d_out] applied as x W.
// a: [r, d_in] (small uniform init); b: [d_out, r] (zero init), so the
// adapter starts as an exact zero delta.
struct LoraAdapter {
    std::string target;
    Tensor a;
    Tensor b;
    int rank = 0;
    double alpha = 0.0;
    double dropout = 0.0;

    double scale() const { return alpha / static_cast<double>(rank); }
    std::int64_t d_in() const { return a.dim(1); }
    std::int64_t d_out() const { return b.dim(0); }
    std::size_t parameter_count() const { return a.numel() + b.numel(); }
};

LoraAdapter make_adapter(const std::string& target, std::int64_t d_in, std::int64_t d_out, const LoraConfig& cfg,
                         std::uint64_t seed);

// y = x W + (alpha / r) * dropout(x) A^T B^T. Dropout only when training.
Tensor lora_forward(const Tensor& x, const Tensor& w_base, const LoraAdapter& adapter, bool training, Rng* rng);

// (alpha / r) A^T B^T, shaped like W. Differentiable in A and B.
Tensor lora_delta(const LoraAdapter& adapter);

// W + (alpha / r) (B A)^T. Eval-mode deployment of the adapter.
Tensor lora_merge(const Tensor& w_base, const LoraAdapter& adapter);
// Inverse of lora_merge.
Tensor lora_unmerge(const Tensor& w_merged, const LoraAdapter& adapter);

// Adapters keyed by target layer name.
class AdapterSet {
public:
    void add(LoraAdapter adapter);
    const LoraAdapter* find(const std::string& target) const;
    bool empty() const { return adapters_.empty(); }
    std::size_t size() const { return adapters_.size(); }
    std::vector<std::string> targets() const;
    const std::map<std::string, LoraAdapter>& all() const { return adapters_; }

    // "adapters/<target>/A" and "adapters/<target>/B", sorted by target.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::size_t parameter_count() const;

private:
    std::map<std::string, LoraAdapter> adapters_;
};

// Input/output projections of every SSM block, q/k/v/o of attention blocks,
// and the embedding table.
std::vector<std::string> select_target_layers(const ModelConfig& config);
// Same list; additionally marks every base parameter of `model` frozen.
std::vector<std::string> select_target_layers(SsmModel& model);

// Builds one adapter per target with shapes read from the model; adapter i
// is seeded with derive_seed(seed, i).
AdapterSet attach_adapters(const SsmModel& model, const std::vector<std::string>& targets, const LoraConfig& cfg,
                           std::uint64_t seed);

} // namespace ssmqa
