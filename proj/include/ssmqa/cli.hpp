#pragma once

// Batch commands behind the ssmqa executable. Each cmd_* function does the
// work and writes a RunManifest next to its outputs; run() parses argv and
// maps exceptions onto exit codes.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ssmqa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitValidation = 3;
inline constexpr int kExitRuntime = 4;

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct FileDigest {
    std::string path;
    std::string git_hash; // git blob id of the file content

    bool operator==(const FileDigest&) const = default;
};

// A directory expands to all regular files below it, sorted by path.
std::vector<FileDigest> digest_inputs(const std::string& path);

struct RunManifest {
    std::string command;
    std::string config_path;
    std::vector<FileDigest> inputs;
    std::vector<std::string> outputs;
    std::uint64_t seed = 0;
    std::string timestamp; // UTC, ISO 8601
    nlohmann::json args = nlohmann::json::object(); // command parameters, enough to rerun it

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
    static RunManifest load(const std::string& path);
    void write(const std::string& path) const;
};

// Manifest location for a file output (<file>.manifest.json) or a directory
// output (<dir>/manifest.json).
std::string manifest_path(const std::string& output, bool is_dir);

struct VocabArgs {
    std::string corpus; // UTF-8 text, one line per sentence
    std::size_t size = 512;
    std::string out;
};
RunManifest cmd_vocab(const VocabArgs& a);

struct PreprocessArgs {
    std::string data;
    std::string vocab;
    std::string out;
    std::int64_t max_len = 512;
};
RunManifest cmd_preprocess(const PreprocessArgs& a);

struct StatsArgs {
    std::string data;
    std::string out_dir;
};
RunManifest cmd_stats(const StatsArgs& a);

struct TrainArgs {
    std::string data;
    std::string val;         // optional validation set
    std::string out_dir;
    std::string config;      // TrainConfig JSON; overrides preset
    std::string preset = "toy";
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::string vocab;       // optional; trained from the data when empty
    std::size_t vocab_size = 512;
    std::string chat_template;
    std::string resume;
};
RunManifest cmd_train(const TrainArgs& a, std::ostream& out);

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string out; // prefix: <out>.json, <out>.csv, <out>_corpus.csv
};
RunManifest cmd_eval(const EvalArgs& a, std::ostream& out);

struct InferArgs {
    std::string checkpoint;
    std::string question;
    std::string context;
    int shots = 0;
    std::string shots_file;  // dataset JSON; the first `shots` records
    std::string prompt_template;
    int samples = 1;
    double temperature = 0.0; // 0 with samples > 1 selects 0.8
    std::uint64_t seed = 0;
    bool verbose = false;
    std::string manifest;     // where to write the manifest; none when empty
};
RunManifest cmd_infer(const InferArgs& a, std::ostream& out);

// Entry point: args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace ssmqa::cli
