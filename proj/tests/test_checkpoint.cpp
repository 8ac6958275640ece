#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "ssmqa/checkpoint.hpp"
#include "ssmqa/errors.hpp"
#include "ssmqa/hash.hpp"
#include "ssmqa/serialize.hpp"

using namespace ssmqa;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("ssmqa_test_" + name);
    fs::remove_all(p);
    return p;
}

bool same_bits(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), 8 * a.numel()) == 0;
}

} // namespace

TEST(Hash, KnownDigests) {
    EXPECT_EQ(sha256_hex(std::string_view("abc")),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    // `printf 'hello\n' | git hash-object --stdin`
    EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
    EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(TensorBlob, RoundTripIsBitwise) {
    std::vector<double> v{0.0, -0.0, 1.0 / 3.0, std::numeric_limits<double>::denorm_min(), -1e308, 42.0};
    const Tensor t = Tensor::from_values({2, 3}, v);
    const std::string bytes = tensor_to_bytes(t);
    EXPECT_EQ(bytes.substr(0, 4), "SSMT");
    EXPECT_EQ(bytes.size(), 4u + 1 + 4 + 2 * 8 + 6 * 8);
    EXPECT_TRUE(same_bits(tensor_from_bytes(bytes), t));
    const Tensor s = Tensor::scalar(2.5);
    EXPECT_TRUE(same_bits(tensor_from_bytes(tensor_to_bytes(s)), s));
    EXPECT_THROW(tensor_from_bytes(bytes.substr(0, bytes.size() - 1)), CheckpointError);
    EXPECT_THROW(tensor_from_bytes("XXXX" + bytes.substr(4)), CheckpointError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
    const fs::path dir = scratch_dir("ckpt");
    CheckpointState s;
    s.step = 1234;
    s.meta = {{"config", {{"lr", 2e-4}, {"eps", 1e-8}}}, {"vocab", {"a", "b"}}};
    s.tensors["model/embed"] = Tensor::normal({4, 3}, 1, 1.0);
    s.tensors["adapters/embed/A"] = Tensor::uniform({2, 4}, 2);
    s.tensors["optim/m/adapters/embed/A"] = Tensor::uniform({2, 4}, 3, -1e-9, 1e-9);
    save_checkpoint(s, dir.string());
    const CheckpointState r = load_checkpoint(dir.string());
    EXPECT_EQ(r.step, 1234);
    EXPECT_EQ(r.meta, s.meta);
    EXPECT_EQ(r.meta["config"]["lr"].get<double>(), 2e-4);
    ASSERT_EQ(r.tensors.size(), s.tensors.size());
    for (const auto& [name, t] : s.tensors) {
        EXPECT_TRUE(same_bits(r.tensors.at(name), t)) << name;
    }

    // flip one byte of a blob
    const fs::path blob = dir / "tensors" / "0.bin";
    std::string bytes = read_file(blob.string());
    bytes[bytes.size() - 1] ^= 1;
    write_file_atomic(blob.string(), bytes);
    EXPECT_THROW(load_checkpoint(dir.string()), CheckpointError);
    // truncate it
    write_file_atomic(blob.string(), bytes.substr(0, 10));
    EXPECT_THROW(load_checkpoint(dir.string()), CheckpointError);

    // version mismatch
    save_checkpoint(s, dir.string());
    auto manifest = nlohmann::json::parse(read_file((dir / "manifest.json").string()));
    manifest["version"] = 99;
    write_file_atomic((dir / "manifest.json").string(), manifest.dump());
    EXPECT_THROW(load_checkpoint(dir.string()), CheckpointError);
    EXPECT_THROW(load_checkpoint((dir / "missing").string()), CheckpointError);
    fs::remove_all(dir);
}
