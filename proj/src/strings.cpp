#include "mcpscan/strings.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

namespace mcpscan::str {

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    for (size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(a[i])) !=
            std::tolower(static_cast<unsigned char>(b[i])))
            return false;
    }
    return true;
}

bool icontains(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) return true;
    if (needle.size() > haystack.size()) return false;
    const std::string h = to_lower(haystack);
    const std::string n = to_lower(needle);
    return h.find(n) != std::string::npos;
}

namespace {
constexpr char kB64UrlAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

int b64url_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '-') return 62;
    if (c == '_') return 63;
    return -1;
}
}  // namespace

std::string base64url_encode(std::string_view bytes, bool pad) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 3 <= bytes.size()) {
        uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) |
                     (static_cast<uint8_t>(bytes[i + 1]) << 8) |
                     static_cast<uint8_t>(bytes[i + 2]);
        out += kB64UrlAlphabet[(v >> 18) & 63];
        out += kB64UrlAlphabet[(v >> 12) & 63];
        out += kB64UrlAlphabet[(v >> 6) & 63];
        out += kB64UrlAlphabet[v & 63];
        i += 3;
    }
    const size_t rem = bytes.size() - i;
    if (rem == 1) {
        uint32_t v = static_cast<uint8_t>(bytes[i]) << 16;
        out += kB64UrlAlphabet[(v >> 18) & 63];
        out += kB64UrlAlphabet[(v >> 12) & 63];
        if (pad) out += "==";
    } else if (rem == 2) {
        uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) |
                     (static_cast<uint8_t>(bytes[i + 1]) << 8);
        out += kB64UrlAlphabet[(v >> 18) & 63];
        out += kB64UrlAlphabet[(v >> 12) & 63];
        out += kB64UrlAlphabet[(v >> 6) & 63];
        if (pad) out += '=';
    }
    return out;
}

std::optional<std::string> base64url_decode(std::string_view text, bool* was_padded) {
    size_t len = text.size();
    size_t pad = 0;
    while (len > 0 && text[len - 1] == '=') {
        --len;
        ++pad;
    }
    if (pad > 2) return std::nullopt;
    if (was_padded) *was_padded = pad > 0;
    if (pad > 0 && (len + pad) % 4 != 0) return std::nullopt;
    const size_t rem = len % 4;
    if (rem == 1) return std::nullopt;

    std::string out;
    out.reserve(len * 3 / 4);
    uint32_t acc = 0;
    int bits = 0;
    for (size_t i = 0; i < len; ++i) {
        int v = b64url_value(text[i]);
        if (v < 0) return std::nullopt;
        acc = (acc << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out += static_cast<char>((acc >> bits) & 0xff);
        }
    }
    return out;
}

bool looks_like_base64url(std::string_view text) {
    size_t len = text.size();
    while (len > 0 && text[len - 1] == '=') --len;
    if (len < 2 || len % 4 == 1) return false;
    for (size_t i = 0; i < len; ++i) {
        if (b64url_value(text[i]) < 0) return false;
    }
    return true;
}

std::string hex_encode(std::string_view bytes) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char c : bytes) {
        out += digits[c >> 4];
        out += digits[c & 0xf];
    }
    return out;
}

namespace {
bool is_unreserved(unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '.' || c == '_' || c == '~';
}
int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}
}  // namespace

std::string pct_encode(std::string_view s) {
    static const char* digits = "0123456789ABCDEF";
    std::string out;
    out.reserve(s.size());
    for (unsigned char c : s) {
        if (is_unreserved(c)) {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += digits[c >> 4];
            out += digits[c & 0xf];
        }
    }
    return out;
}

std::string pct_decode(std::string_view s, bool* malformed) {
    if (malformed) *malformed = false;
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%') {
            if (i + 2 < s.size()) {
                int hi = hex_value(s[i + 1]);
                int lo = hex_value(s[i + 2]);
                if (hi >= 0 && lo >= 0) {
                    out += static_cast<char>((hi << 4) | lo);
                    i += 2;
                    continue;
                }
            }
            if (malformed) *malformed = true;
            out += '%';
        } else if (s[i] == '+') {
            out += ' ';
        } else {
            out += s[i];
        }
    }
    return out;
}

double entropy_bits(std::string_view s) {
    if (s.empty()) return 0.0;
    std::array<int, 256> counts{};
    for (unsigned char c : s) counts[c]++;
    double h = 0.0;
    const double n = static_cast<double>(s.size());
    for (int c : counts) {
        if (c == 0) continue;
        const double p = c / n;
        h -= p * std::log2(p);
    }
    return h * n;
}

int charset_size(std::string_view s) {
    bool lower = false, upper = false, digit = false;
    std::set<char> others;
    for (unsigned char c : s) {
        if (c >= 'a' && c <= 'z')
            lower = true;
        else if (c >= 'A' && c <= 'Z')
            upper = true;
        else if (c >= '0' && c <= '9')
            digit = true;
        else
            others.insert(static_cast<char>(c));
    }
    int size = 0;
    if (lower) size += 26;
    if (upper) size += 26;
    if (digit) size += 10;
    size += static_cast<int>(others.size());
    return size;
}

std::optional<long long> parse_iso8601_ms(std::string_view s) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0;
    double sec = 0.0;
    char tzbuf[16] = {0};
    std::string in(s);
    int n = std::sscanf(in.c_str(), "%d-%d-%dT%d:%d:%lf%15s", &y, &mo, &d, &h, &mi, &sec, tzbuf);
    if (n < 6) return std::nullopt;
    // Days since epoch via civil-from-days inverse (Howard Hinnant's algorithm).
    auto days_from_civil = [](int yy, int mm, int dd) -> long long {
        yy -= mm <= 2;
        const long long era = (yy >= 0 ? yy : yy - 399) / 400;
        const unsigned yoe = static_cast<unsigned>(yy - era * 400);
        const unsigned doy = (153 * (mm + (mm > 2 ? -3 : 9)) + 2) / 5 + dd - 1;
        const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
        return era * 146097 + static_cast<long long>(doe) - 719468;
    };
    long long ms = days_from_civil(y, mo, d) * 86400000LL + h * 3600000LL + mi * 60000LL +
                   static_cast<long long>(sec * 1000.0 + 0.5);
    std::string tz(tzbuf);
    if (!tz.empty() && tz != "Z" && tz != "z") {
        int th = 0, tm = 0;
        char sign = tz[0];
        if (std::sscanf(tz.c_str() + 1, "%d:%d", &th, &tm) >= 1) {
            long long off = th * 3600000LL + tm * 60000LL;
            ms += (sign == '-') ? off : -off;
        }
    }
    return ms;
}

long long now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

}  // namespace mcpscan::str
