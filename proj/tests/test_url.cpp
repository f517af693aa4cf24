#include <doctest.h>

#include "mcpscan/url.hpp"

using namespace mcpscan;

TEST_CASE("absolute url parsing") {
    auto u = Url::parse("https://mcp.example.com:8443/path/mcp?a=1&b=2#frag");
    REQUIRE(u.has_value());
    CHECK(u->scheme == "https");
    CHECK(u->host == "mcp.example.com");
    CHECK(u->port == 8443);
    CHECK(u->path == "/path/mcp");
    CHECK(u->query == "a=1&b=2");
    CHECK(u->fragment == "frag");
    CHECK(u->origin() == "https://mcp.example.com:8443");
    CHECK(u->str() == "https://mcp.example.com:8443/path/mcp?a=1&b=2#frag");
}

TEST_CASE("custom schemes parse as absolute urls") {
    auto u = Url::parse("vscode://auth/cb");
    REQUIRE(u.has_value());
    CHECK(u->scheme == "vscode");
    CHECK_FALSE(u->is_http());
}

TEST_CASE("bad urls are rejected") {
    CHECK_FALSE(Url::parse("not-a-url").has_value());
    CHECK_FALSE(Url::parse("http://").has_value());
    CHECK_FALSE(Url::parse("://host").has_value());
    CHECK_FALSE(Url::parse("http://host:99999/").has_value());
}

TEST_CASE("default ports") {
    CHECK(Url::parse("http://h/")->effective_port() == 80);
    CHECK(Url::parse("https://h/")->effective_port() == 443);
    CHECK(Url::parse("http://h:81/")->effective_port() == 81);
}

TEST_CASE("loopback host detection") {
    CHECK(is_loopback_host("127.0.0.1"));
    CHECK(is_loopback_host("127.1.2.3"));
    CHECK(is_loopback_host("localhost"));
    CHECK(is_loopback_host("LOCALHOST"));
    CHECK(is_loopback_host("::1"));
    CHECK(is_loopback_host("[::1]"));
    CHECK_FALSE(is_loopback_host("128.0.0.1"));
    CHECK_FALSE(is_loopback_host("mcp.example.com"));
    CHECK_FALSE(is_loopback_host("2130706433"));  // decimal spelling is not the literal form
}

TEST_CASE("decimal ipv4 rendering") {
    CHECK(ipv4_to_decimal("127.0.0.1") == "2130706433");
    CHECK(ipv4_to_decimal("10.0.0.1") == "167772161");
    CHECK(ipv4_to_decimal("example.com").empty());
}

TEST_CASE("ordered query round trip") {
    Query q = {{"b", "2"}, {"a", "1 x"}, {"a", "dup"}};
    auto raw = build_query(q);
    CHECK(raw == "b=2&a=1%20x&a=dup");
    auto parsed = parse_query(raw);
    REQUIRE(parsed.size() == 3);
    CHECK(parsed == q);
    CHECK(*query_get(parsed, "a") == "1 x");
    CHECK_FALSE(query_get(parsed, "missing").has_value());
}
