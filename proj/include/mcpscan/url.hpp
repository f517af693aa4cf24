#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mcpscan {

// Minimal absolute-URL model: scheme://host[:port][/path][?query][#fragment].
// Query and fragment are kept raw; parse_query decodes on demand so that the
// original byte form is never lost.
struct Url {
    std::string scheme;
    std::string host;
    int port = -1;  // -1 = not present
    std::string path;
    std::string query;     // without '?'
    std::string fragment;  // without '#'

    static std::optional<Url> parse(std::string_view s);

    std::string str() const;
    std::string origin() const;  // scheme://host[:port]
    int effective_port() const;
    std::string host_port() const;  // host:effective_port
    bool is_http() const { return scheme == "http" || scheme == "https"; }
    std::string path_query() const;
};

// 127.0.0.0/8, ::1 (bracketed or not), and the literal "localhost".
bool is_loopback_host(std::string_view host);

// Decimal-integer rendering of a dotted-quad IPv4 host ("127.0.0.1" ->
// "2130706433"). Empty when the host is not a dotted quad.
std::string ipv4_to_decimal(std::string_view host);

using Query = std::vector<std::pair<std::string, std::string>>;

// Ordered decode of a query/form string. Keys whose percent-encoding is
// malformed are decoded leniently and reported through `malformed_keys`.
Query parse_query(std::string_view raw, std::vector<std::string>* malformed_keys = nullptr);
std::string build_query(const Query& q);
std::optional<std::string> query_get(const Query& q, std::string_view key);

}  // namespace mcpscan
