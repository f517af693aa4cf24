#pragma once

#include <array>
#include <map>
#include <cstdint>
#include <mutex>
#include <string>
#include <string_view>

namespace mcpscan::crypto {

std::array<uint8_t, 32> sha256(std::string_view data);
std::string sha256_str(std::string_view data);

// Cryptographically strong random bytes (RAND_bytes). Throws on failure.
std::string random_bytes(size_t n);

// 128-bit random value as unpadded base64url (22 chars).
std::string random_token();

// Deterministic artifact generator: every value is derived from
// (seed, kind, per-kind counter) so that equal configurations replay the
// exact same codes, states, and tokens. Thread-safe.
class SeededArtifacts {
   public:
    explicit SeededArtifacts(uint64_t seed, std::string domain = "");

    // 22-char base64url string, unique per (kind, call index).
    std::string next(std::string_view kind);

   private:
    std::mutex mutex_;
    std::string prefix_;
    std::map<std::string, uint64_t> counters_;
};

}  // namespace mcpscan::crypto
