#include "ssmqa/checkpoint.hpp"

#include <filesystem>

#include "ssmqa/errors.hpp"
#include "ssmqa/hash.hpp"
#include "ssmqa/serialize.hpp"

namespace fs = std::filesystem;

namespace ssmqa {

void save_checkpoint(const CheckpointState& state, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root / "tensors");
    nlohmann::json entries = nlohmann::json::array();
    std::size_t index = 0;
    for (const auto& [name, t] : state.tensors) {
        const std::string file = "tensors/" + std::to_string(index++) + ".bin";
        const std::string bytes = tensor_to_bytes(t);
        write_file_atomic((root / file).string(), bytes);
        entries.push_back({{"name", name},
                           {"file", file},
                           {"dtype", "f64"},
                           {"shape", t.shape()},
                           {"bytes", bytes.size()},
                           {"sha256", sha256_hex(bytes)}});
    }
    const nlohmann::json manifest{{"format", "ssmqa-checkpoint"},
                                  {"version", kCheckpointVersion},
                                  {"step", state.step},
                                  {"meta", state.meta},
                                  {"tensors", entries}};
    // manifest last: a directory without one is an incomplete save
    write_file_atomic((root / "manifest.json").string(), manifest.dump(2));
}

CheckpointState load_checkpoint(const std::string& dir) {
    const fs::path root(dir);
    const fs::path manifest_path = root / "manifest.json";
    if (!fs::exists(manifest_path)) {
        throw CheckpointError("no checkpoint manifest at '" + manifest_path.string() + "'");
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(manifest_path.string()));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint manifest unreadable: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "ssmqa-checkpoint") {
        throw CheckpointError("not a checkpoint manifest: " + manifest_path.string());
    }
    if (manifest.value("version", -1) != kCheckpointVersion) {
        throw CheckpointError("checkpoint version " + manifest.value("version", nlohmann::json()).dump() +
                              " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    CheckpointState state;
    try {
        state.step = manifest.at("step").get<std::int64_t>();
        state.meta = manifest.at("meta");
        for (const auto& e : manifest.at("tensors")) {
            const auto name = e.at("name").get<std::string>();
            const fs::path file = root / e.at("file").get<std::string>();
            if (!fs::exists(file)) {
                throw CheckpointError("checkpoint blob missing for '" + name + "'");
            }
            const std::string bytes = read_file(file.string());
            if (bytes.size() != e.at("bytes").get<std::size_t>() || sha256_hex(bytes) != e.at("sha256")) {
                throw CheckpointError("checkpoint blob for '" + name + "' is corrupt or truncated");
            }
            Tensor t = tensor_from_bytes(bytes);
            if (t.shape() != e.at("shape").get<Shape>()) {
                throw CheckpointError("checkpoint blob for '" + name + "' has the wrong shape");
            }
            state.tensors.emplace(name, std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint manifest malformed: " + std::string(e.what()));
    }
    return state;
}

} // namespace ssmqa
