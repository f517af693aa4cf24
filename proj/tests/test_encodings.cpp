#include <doctest.h>

#include <random>

#include "mcpscan/crypto.hpp"
#include "mcpscan/strings.hpp"

using namespace mcpscan;

TEST_CASE("base64url round trips arbitrary bytes") {
    std::mt19937 rng(7);
    for (int i = 0; i < 200; ++i) {
        size_t len = rng() % 64;
        std::string bytes;
        for (size_t j = 0; j < len; ++j) bytes += static_cast<char>(rng() & 0xff);
        for (bool pad : {false, true}) {
            auto encoded = str::base64url_encode(bytes, pad);
            bool was_padded = false;
            auto decoded = str::base64url_decode(encoded, &was_padded);
            REQUIRE(decoded.has_value());
            CHECK(*decoded == bytes);
            if (!bytes.empty() && bytes.size() % 3 != 0) CHECK(was_padded == pad);
        }
    }
}

TEST_CASE("base64url rejects malformed input") {
    CHECK_FALSE(str::base64url_decode("a").has_value());
    CHECK_FALSE(str::base64url_decode("ab=c").has_value());
    CHECK_FALSE(str::base64url_decode("a+/b").has_value());
    CHECK(str::base64url_decode("").has_value());
}

TEST_CASE("percent encoding is canonical and stable") {
    CHECK(str::pct_encode("a b&c=d") == "a%20b%26c%3Dd");
    CHECK(str::pct_decode("a%20b%26c%3Dd") == "a b&c=d");
    std::mt19937 rng(11);
    for (int i = 0; i < 200; ++i) {
        std::string s;
        size_t len = rng() % 40;
        for (size_t j = 0; j < len; ++j) s += static_cast<char>(rng() & 0xff);
        CHECK(str::pct_decode(str::pct_encode(s)) == s);
    }
}

TEST_CASE("malformed percent sequences are flagged, not dropped") {
    bool malformed = false;
    auto out = str::pct_decode("abc%zzdef", &malformed);
    CHECK(malformed);
    CHECK(out == "abc%zzdef");
}

TEST_CASE("entropy estimate separates weak from strong states") {
    CHECK(str::entropy_bits("1234") < 32.0);
    CHECK(str::entropy_bits("state") < 32.0);
    CHECK(str::entropy_bits("aaaaaaaaaaaaaaaaaaaaaa") < 32.0);
    CHECK(str::entropy_bits(crypto::random_token()) >= 32.0);
    CHECK(str::entropy_bits("f3a9c27b51e8d04a6b2f9c81d7e5a3f0") >= 32.0);
}

TEST_CASE("charset estimate counts classes") {
    CHECK(str::charset_size("abc") == 26);
    CHECK(str::charset_size("abcXYZ") == 52);
    CHECK(str::charset_size("a1-") == 37);
}

TEST_CASE("seeded artifacts are deterministic and distinct") {
    crypto::SeededArtifacts a(42, "lab");
    crypto::SeededArtifacts b(42, "lab");
    crypto::SeededArtifacts c(43, "lab");
    auto a1 = a.next("code");
    auto a2 = a.next("code");
    CHECK(a1 != a2);
    CHECK(a1 == b.next("code"));
    CHECK(a2 == b.next("code"));
    CHECK(a1 != c.next("code"));
    CHECK(a.next("state") != a1);
    CHECK(a1.size() == 22);
}

TEST_CASE("iso8601 parsing") {
    auto t = str::parse_iso8601_ms("1970-01-01T00:00:01.500Z");
    REQUIRE(t.has_value());
    CHECK(*t == 1500);
    auto offset = str::parse_iso8601_ms("1970-01-01T01:00:00+01:00");
    REQUIRE(offset.has_value());
    CHECK(*offset == 0);
    CHECK_FALSE(str::parse_iso8601_ms("not a date").has_value());
}
