#include "ssmqa/serialize.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssmqa/errors.hpp"

namespace ssmqa {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'M', 'T'};
constexpr unsigned char kDtypeF64 = 1;

template <class U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

template <class U>
U get_le(std::string_view in, std::size_t& pos) {
    if (pos + sizeof(U) > in.size()) {
        throw CheckpointError("tensor blob truncated");
    }
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    pos += sizeof(U);
    return v;
}

} // namespace

std::string tensor_to_bytes(const Tensor& t) {
    std::string out(kMagic, 4);
    out.push_back(static_cast<char>(kDtypeF64));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) {
        put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    }
    out.reserve(out.size() + 8 * t.numel());
    for (double v : t.data()) {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

Tensor tensor_from_bytes(std::string_view bytes) {
    if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw CheckpointError("tensor blob: bad magic");
    }
    if (static_cast<unsigned char>(bytes[4]) != kDtypeF64) {
        throw CheckpointError("tensor blob: unsupported dtype " + std::to_string(static_cast<int>(bytes[4])));
    }
    std::size_t pos = 5;
    const auto ndim = get_le<std::uint32_t>(bytes, pos);
    if (ndim > 16) {
        throw CheckpointError("tensor blob: implausible rank " + std::to_string(ndim));
    }
    Shape shape;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        const auto d = static_cast<std::int64_t>(get_le<std::uint64_t>(bytes, pos));
        if (d < 0) {
            throw CheckpointError("tensor blob: negative dim");
        }
        shape.push_back(d);
    }
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    if (bytes.size() - pos != 8 * n) {
        throw CheckpointError("tensor blob: expected " + std::to_string(8 * n) + " data bytes, found " +
                              std::to_string(bytes.size() - pos));
    }
    std::vector<double> data(n);
    for (auto& v : data) {
        v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
    }
    return Tensor::from_values(shape, std::move(data));
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view content) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write '" + tmp + "'");
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw std::runtime_error("write failed for '" + tmp + "'");
        }
    }
    std::filesystem::rename(tmp, p);
}

} // namespace ssmqa
