// String and encoding helpers shared across the scanner.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mcpscan::str {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
bool iequals(std::string_view a, std::string_view b);
bool icontains(std::string_view haystack, std::string_view needle);

// Base64url (RFC 4648 §5). Encoding defaults to the unpadded form used by
// PKCE and OAuth artifacts; decoding accepts either.
std::string base64url_encode(std::string_view bytes, bool pad = false);
std::optional<std::string> base64url_decode(std::string_view text, bool* was_padded = nullptr);
bool looks_like_base64url(std::string_view text);

std::string hex_encode(std::string_view bytes);

// Percent-encoding per RFC 3986: everything outside the unreserved set is
// encoded with uppercase hex digits so that encode(decode(x)) is stable for
// strings we produced ourselves.
std::string pct_encode(std::string_view s);
std::string pct_decode(std::string_view s, bool* malformed = nullptr);

// Empirical Shannon entropy of the value in bits (per-character entropy
// times length). Used by the weak-state rule; the charset the value draws
// from is reflected in the observed character distribution.
double entropy_bits(std::string_view s);

// Estimated alphabet size from the character classes present (lowercase,
// uppercase, digits, plus one slot per distinct other character).
int charset_size(std::string_view s);

// "2026-01-02T03:04:05.678Z" (or with a numeric offset) -> unix millis.
std::optional<long long> parse_iso8601_ms(std::string_view s);

long long now_ms();

}  // namespace mcpscan::str
