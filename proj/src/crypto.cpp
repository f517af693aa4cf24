#include "mcpscan/crypto.hpp"

#include <openssl/evp.h>
#include <openssl/rand.h>

#include <stdexcept>

#include "mcpscan/strings.hpp"

namespace mcpscan::crypto {

std::array<uint8_t, 32> sha256(std::string_view data) {
    std::array<uint8_t, 32> out{};
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw std::runtime_error("EVP_MD_CTX_new failed");
    if (EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx, out.data(), &len) != 1 || len != 32) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha256 digest failed");
    }
    EVP_MD_CTX_free(ctx);
    return out;
}

std::string sha256_str(std::string_view data) {
    auto d = sha256(data);
    return std::string(reinterpret_cast<const char*>(d.data()), d.size());
}

std::string random_bytes(size_t n) {
    std::string out(n, '\0');
    if (n > 0 && RAND_bytes(reinterpret_cast<unsigned char*>(out.data()),
                            static_cast<int>(n)) != 1) {
        throw std::runtime_error("RAND_bytes failed");
    }
    return out;
}

std::string random_token() {
    return str::base64url_encode(random_bytes(16));
}

SeededArtifacts::SeededArtifacts(uint64_t seed, std::string domain)
    : prefix_(std::to_string(seed) + "/" + domain) {}

std::string SeededArtifacts::next(std::string_view kind) {
    std::lock_guard<std::mutex> lock(mutex_);
    uint64_t n = counters_[std::string(kind)]++;
    std::string material = prefix_ + "/" + std::string(kind) + "/" + std::to_string(n);
    return str::base64url_encode(sha256_str(material).substr(0, 16));
}

}  // namespace mcpscan::crypto
