#pragma once

#include <span>
#include <string>
#include <string_view>

namespace ssmqa {

std::string sha256_hex(std::span<const unsigned char> bytes);
inline std::string sha256_hex(std::string_view s) {
    return sha256_hex(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

// SHA-1 over "blob <size>\0<content>", the object id git assigns to a file.
std::string git_blob_hash(std::string_view content);

} // namespace ssmqa
