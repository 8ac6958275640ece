#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "ssmqa/tensor.hpp"

namespace ssmqa {

inline constexpr int kCheckpointVersion = 1;

// Everything a checkpoint directory holds. Tensor names are namespaced by
// the caller ("model/...", "adapters/...", "optim/...").
struct CheckpointState {
    std::int64_t step = 0;
    nlohmann::json meta = nlohmann::json::object(); // configs, vocab, rng state
    std::map<std::string, Tensor> tensors;
};

// Layout: <dir>/manifest.json plus one blob per tensor under <dir>/tensors/.
// The manifest lists name, shape, dtype and a sha256 per blob.
void save_checkpoint(const CheckpointState& state, const std::string& dir);
// Validates the version and every blob before returning; throws
// CheckpointError on any mismatch.
CheckpointState load_checkpoint(const std::string& dir);

} // namespace ssmqa
