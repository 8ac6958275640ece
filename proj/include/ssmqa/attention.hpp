#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ssmqa/ssm.hpp"
#include "ssmqa/tensor.hpp"

namespace ssmqa {

// Causal multi-head attention where position t sees positions
// max(0, t - window + 1) .. t. q, k, v: [B, T, d] with d divisible by heads.
Tensor sliding_window_attention(const Tensor& q, const Tensor& k, const Tensor& v, int window, int heads);

struct AttentionBlockParams {
    int d_model = 0;
    int heads = 1;
    int window = 1;
    Tensor norm;   // [d]
    Tensor q_proj; // [d, d]
    Tensor k_proj;
    Tensor v_proj;
    Tensor o_proj;

    std::vector<std::pair<std::string, Tensor*>> fields();
};

AttentionBlockParams init_attention_block(const ModelConfig& cfg, std::uint64_t seed);

// x + o_proj(swa(q_proj(n), k_proj(n), v_proj(n))) with n = rmsnorm(x).
Tensor swa_block_forward(const Tensor& x, const AttentionBlockParams& p, const std::string& name,
                         const ForwardContext& ctx);

} // namespace ssmqa
