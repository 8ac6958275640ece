#include "ssmqa/hash.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace ssmqa {

namespace {

std::string digest_hex(const EVP_MD* md, std::initializer_list<std::string_view> parts) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr) {
        throw std::runtime_error("hash: cannot allocate digest context");
    }
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    bool ok = EVP_DigestInit_ex(ctx, md, nullptr) == 1;
    for (auto p : parts) {
        ok = ok && EVP_DigestUpdate(ctx, p.data(), p.size()) == 1;
    }
    ok = ok && EVP_DigestFinal_ex(ctx, out, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) {
        throw std::runtime_error("hash: digest failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        hex.push_back(kHex[out[i] >> 4]);
        hex.push_back(kHex[out[i] & 15]);
    }
    return hex;
}

} // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
    return digest_hex(EVP_sha256(), {std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())});
}

std::string git_blob_hash(std::string_view content) {
    const std::string header = "blob " + std::to_string(content.size());
    return digest_hex(EVP_sha1(), {header, std::string_view("\0", 1), content});
}

} // namespace ssmqa
