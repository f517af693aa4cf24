#include "mcpscan/url.hpp"

#include <cctype>
#include <cstdio>

#include "mcpscan/strings.hpp"

namespace mcpscan {

std::optional<Url> Url::parse(std::string_view s) {
    Url u;
    size_t scheme_end = s.find("://");
    if (scheme_end == std::string_view::npos || scheme_end == 0) {
        // Accept scheme-only forms like "vscode://auth/cb" via the same path;
        // anything without "://" is not an absolute URL.
        return std::nullopt;
    }
    u.scheme = str::to_lower(s.substr(0, scheme_end));
    for (char c : u.scheme) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '+' && c != '-' && c != '.')
            return std::nullopt;
    }
    if (!std::isalpha(static_cast<unsigned char>(u.scheme[0]))) return std::nullopt;

    std::string_view rest = s.substr(scheme_end + 3);
    size_t frag = rest.find('#');
    if (frag != std::string_view::npos) {
        u.fragment = std::string(rest.substr(frag + 1));
        rest = rest.substr(0, frag);
    }
    size_t q = rest.find('?');
    if (q != std::string_view::npos) {
        u.query = std::string(rest.substr(q + 1));
        rest = rest.substr(0, q);
    }
    size_t slash = rest.find('/');
    std::string_view authority = (slash == std::string_view::npos) ? rest : rest.substr(0, slash);
    u.path = (slash == std::string_view::npos) ? "" : std::string(rest.substr(slash));

    // Strip userinfo if present.
    size_t at = authority.rfind('@');
    if (at != std::string_view::npos) authority = authority.substr(at + 1);
    if (authority.empty()) return std::nullopt;

    if (authority[0] == '[') {
        size_t close = authority.find(']');
        if (close == std::string_view::npos) return std::nullopt;
        u.host = str::to_lower(authority.substr(0, close + 1));
        authority = authority.substr(close + 1);
        if (!authority.empty()) {
            if (authority[0] != ':') return std::nullopt;
            authority = authority.substr(1);
        } else {
            authority = {};
        }
    } else {
        size_t colon = authority.find(':');
        if (colon == std::string_view::npos) {
            u.host = str::to_lower(authority);
            authority = {};
        } else {
            u.host = str::to_lower(authority.substr(0, colon));
            authority = authority.substr(colon + 1);
        }
    }
    if (!u.host.empty() && u.host != "[" && !authority.empty()) {
        int port = 0;
        for (char c : authority) {
            if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
            port = port * 10 + (c - '0');
            if (port > 65535) return std::nullopt;
        }
        u.port = port;
    }
    if (u.host.empty()) return std::nullopt;
    return u;
}

std::string Url::str() const {
    std::string out = scheme + "://" + host;
    if (port >= 0) out += ":" + std::to_string(port);
    out += path;
    if (!query.empty()) out += "?" + query;
    if (!fragment.empty()) out += "#" + fragment;
    return out;
}

std::string Url::origin() const {
    std::string out = scheme + "://" + host;
    if (port >= 0) out += ":" + std::to_string(port);
    return out;
}

int Url::effective_port() const {
    if (port >= 0) return port;
    if (scheme == "https") return 443;
    if (scheme == "http") return 80;
    return -1;
}

std::string Url::host_port() const {
    return host + ":" + std::to_string(effective_port());
}

std::string Url::path_query() const {
    std::string out = path.empty() ? "/" : path;
    if (!query.empty()) out += "?" + query;
    return out;
}

bool is_loopback_host(std::string_view host) {
    std::string h = str::to_lower(host);
    if (h == "localhost" || h == "::1" || h == "[::1]") return true;
    int a = 0, b = 0, c = 0, d = 0;
    char tail = 0;
    if (std::sscanf(h.c_str(), "%d.%d.%d.%d%c", &a, &b, &c, &d, &tail) == 4) {
        return a == 127 && b >= 0 && b <= 255 && c >= 0 && c <= 255 && d >= 0 && d <= 255;
    }
    return false;
}

std::string ipv4_to_decimal(std::string_view host) {
    int a = 0, b = 0, c = 0, d = 0;
    char tail = 0;
    std::string h(host);
    if (std::sscanf(h.c_str(), "%d.%d.%d.%d%c", &a, &b, &c, &d, &tail) != 4) return "";
    if (a < 0 || a > 255 || b < 0 || b > 255 || c < 0 || c > 255 || d < 0 || d > 255) return "";
    unsigned long v = (static_cast<unsigned long>(a) << 24) | (static_cast<unsigned long>(b) << 16) |
                      (static_cast<unsigned long>(c) << 8) | static_cast<unsigned long>(d);
    return std::to_string(v);
}

Query parse_query(std::string_view raw, std::vector<std::string>* malformed_keys) {
    Query out;
    if (raw.empty()) return out;
    for (const auto& pair : str::split(raw, '&')) {
        if (pair.empty()) continue;
        size_t eq = pair.find('=');
        bool bad_k = false, bad_v = false;
        std::string k, v;
        if (eq == std::string::npos) {
            k = str::pct_decode(pair, &bad_k);
        } else {
            k = str::pct_decode(pair.substr(0, eq), &bad_k);
            v = str::pct_decode(pair.substr(eq + 1), &bad_v);
            if (bad_v) v = pair.substr(eq + 1);  // keep raw, flag below
        }
        if ((bad_k || bad_v) && malformed_keys) malformed_keys->push_back(k);
        out.emplace_back(std::move(k), std::move(v));
    }
    return out;
}

std::string build_query(const Query& q) {
    std::string out;
    for (size_t i = 0; i < q.size(); ++i) {
        if (i) out += '&';
        out += str::pct_encode(q[i].first);
        out += '=';
        out += str::pct_encode(q[i].second);
    }
    return out;
}

std::optional<std::string> query_get(const Query& q, std::string_view key) {
    for (const auto& [k, v] : q) {
        if (k == key) return v;
    }
    return std::nullopt;
}

}  // namespace mcpscan
