#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmqa/tensor.hpp"

namespace ssmqa {

class AdapterSet;
class Rng;

enum class BlockVariant { diagonal, scalar_per_head, swa_hybrid };
enum class ScanMode { sequential, parallel };

std::string to_string(BlockVariant v);
BlockVariant block_variant_from_string(const std::string& s);

struct ModelConfig {
    std::string preset_name = "custom";
    int n_layers = 2;
    int d_model = 64;
    int state_size = 16; // N
    int vocab_size = 512;
    int max_seq_len = 2048;
    int expand = 2;
    int conv_width = 4;
    int dt_rank = 0;  // 0 selects ceil(d_model / 16)
    int heads = 4;    // scalar-per-head groups and attention heads
    int swa_window = 64;
    int chunk_len = 64;
    // Model family. swa_hybrid means SSM and sliding-window attention layers
    // alternate (odd layers attend).
    BlockVariant variant = BlockVariant::diagonal;
    ScanMode scan_mode = ScanMode::sequential;
    double norm_eps = 1e-5;

    int d_inner() const { return expand * d_model; }
    int resolved_dt_rank() const { return dt_rank > 0 ? dt_rank : (d_model + 15) / 16; }
    std::vector<BlockVariant> layer_variants() const;
    void validate() const;

    // Architecture presets named after the compared model families. Families
    // whose distinguishing feature is not implemented (MoE routing, shared
    // attention, meta tokens) map onto the nearest implemented variant.
    static ModelConfig preset(const std::string& name);
    static std::vector<std::string> preset_names();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Per-block parameters. Projections use the x W convention with W [d_in, d_out].
// Diagonal blocks: dt_proj [R, Di], dt_bias [Di], A_log [Di, N].
// Scalar-per-head blocks: dt_proj [R, H], dt_bias [H], A_log [H].
struct SsmBlockParams {
    BlockVariant variant = BlockVariant::diagonal;
    int d_model = 0;
    int d_inner = 0;
    int state_size = 0;
    int dt_rank = 0;
    int heads = 1;
    int conv_width = 4;
    int chunk_len = 64;
    Tensor norm;     // [d]
    Tensor in_proj;  // [d, 2 Di]
    Tensor conv_w;   // [K, Di]
    Tensor conv_b;   // [Di]
    Tensor x_proj;   // [Di, R + 2N]
    Tensor dt_proj;
    Tensor dt_bias;
    Tensor A_log;
    Tensor D;        // [Di]
    Tensor out_proj; // [Di, d]

    std::vector<std::pair<std::string, Tensor*>> fields();
};

SsmBlockParams init_ssm_block(const ModelConfig& cfg, BlockVariant variant, std::uint64_t seed);

// Everything a block forward needs beyond its weights.
struct ForwardContext {
    const AdapterSet* adapters = nullptr;
    bool training = false;
    Rng* rng = nullptr; // adapter dropout
    ScanMode scan_mode = ScanMode::sequential;
    double norm_eps = 1e-5;
};

// x W, plus the adapter registered under `name` when there is one.
Tensor project(const Tensor& x, const Tensor& w, const std::string& name, const ForwardContext& ctx);

// Differentiable diagonal selective scan over a batch.
// u, delta: [B, T, C]; A: [C, N] (negative); Bm, Cm: [B, T, N]; D: [C].
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& Bm, const Tensor& Cm,
                      const Tensor& D, ScanMode mode = ScanMode::sequential);

// Scalar-per-head scan: delta [B, T, H], A [H]. With grad recording on it
// broadcasts to the diagonal scan; otherwise it runs the chunked kernel.
Tensor head_selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& Bm, const Tensor& Cm,
                           const Tensor& D, int chunk_len);

// rmsnorm -> in_proj -> causal conv -> silu -> selective scan -> silu(z) gate
// -> out_proj -> residual add. x: [B, T, d]. `name` prefixes adapter lookup.
Tensor ssm_block_forward(const Tensor& x, const SsmBlockParams& p, const std::string& name,
                         const ForwardContext& ctx);

} // namespace ssmqa
