#include "mcpscan/oauth.hpp"

#include <nlohmann/json.hpp>
#include <regex>

#include "mcpscan/crypto.hpp"
#include "mcpscan/strings.hpp"

namespace mcpscan::oauth {

using nlohmann::json;

namespace {

std::optional<AuthServerMetadata> parse_as_metadata(const std::string& body,
                                                    const std::string& from) {
    auto doc = json::parse(body, nullptr, false);
    if (!doc.is_object()) return std::nullopt;
    AuthServerMetadata meta;
    meta.raw = body;
    meta.fetched_from = from;
    meta.issuer = doc.value("issuer", "");
    meta.authorization_endpoint = doc.value("authorization_endpoint", "");
    meta.token_endpoint = doc.value("token_endpoint", "");
    if (doc.contains("registration_endpoint") && doc["registration_endpoint"].is_string())
        meta.registration_endpoint = doc["registration_endpoint"].get<std::string>();
    if (doc.contains("code_challenge_methods_supported") &&
        doc["code_challenge_methods_supported"].is_array()) {
        std::vector<std::string> methods;
        for (const auto& m : doc["code_challenge_methods_supported"])
            if (m.is_string()) methods.push_back(m.get<std::string>());
        meta.code_challenge_methods_supported = methods;
    }
    if (meta.authorization_endpoint.empty() || meta.token_endpoint.empty()) return std::nullopt;
    return meta;
}

std::optional<ProtectedResourceMetadata> parse_prm(const std::string& body,
                                                   const std::string& from) {
    auto doc = json::parse(body, nullptr, false);
    if (!doc.is_object()) return std::nullopt;
    ProtectedResourceMetadata prm;
    prm.raw = body;
    prm.fetched_from = from;
    prm.resource = doc.value("resource", "");
    if (doc.contains("authorization_servers") && doc["authorization_servers"].is_array()) {
        for (const auto& s : doc["authorization_servers"])
            if (s.is_string()) prm.authorization_servers.push_back(s.get<std::string>());
    }
    if (prm.authorization_servers.empty()) return std::nullopt;
    return prm;
}

// RFC 8414/9728 allow the well-known segment to be inserted before the
// issuer path ("suffix" form) or appended at the root; deployments disagree,
// so both are probed.
std::vector<std::string> well_known_urls(const Url& base, const std::string& segment) {
    std::vector<std::string> out;
    std::string path = base.path;
    while (!path.empty() && path.back() == '/') path.pop_back();
    if (!path.empty()) {
        out.push_back(base.origin() + "/.well-known/" + segment + path);
        out.push_back(base.origin() + path + "/.well-known/" + segment);
    }
    out.push_back(base.origin() + "/.well-known/" + segment);
    return out;
}

std::optional<std::string> fetch_ok(net::Client& client, const std::string& url,
                                    std::vector<std::string>& attempted) {
    attempted.push_back(url);
    net::Request req;
    req.url = url;
    req.headers.emplace_back("Accept", "application/json");
    auto res = client.send(req);
    if (res.ok && res.status == 200 && !res.body.empty()) return res.body;
    return std::nullopt;
}

// WWW-Authenticate: Bearer resource_metadata="https://..."
std::optional<std::string> resource_metadata_hint(const std::string& www_authenticate) {
    static const std::regex re("resource_metadata\\s*=\\s*\"([^\"]+)\"");
    std::smatch m;
    if (std::regex_search(www_authenticate, m, re)) return m[1].str();
    return std::nullopt;
}

}  // namespace

DiscoveryResult discover(net::Client& client, const std::string& mcp_url) {
    DiscoveryResult out;
    auto base = Url::parse(mcp_url);
    if (!base || !base->is_http()) {
        out.error = "malformed MCP url: " + mcp_url;
        return out;
    }

    // Step 1: unauthenticated request to harvest the challenge hint.
    std::optional<std::string> hint;
    {
        net::Request req;
        req.method = "POST";
        req.url = mcp_url;
        req.content_type = "application/json";
        req.headers.emplace_back("Accept", "application/json, text/event-stream");
        req.body = R"({"jsonrpc":"2.0","id":0,"method":"initialize","params":{}})";
        auto res = client.send(req);
        if (res.ok) {
            if (auto wa = res.header("WWW-Authenticate")) hint = resource_metadata_hint(*wa);
        }
    }

    // Step 2: protected-resource metadata (hint first, then well-known forms).
    std::vector<std::string> prm_urls;
    if (hint) prm_urls.push_back(*hint);
    for (auto& u : well_known_urls(*base, "oauth-protected-resource")) prm_urls.push_back(u);
    for (const auto& u : prm_urls) {
        auto body = fetch_ok(client, u, out.attempted_urls);
        if (!body) continue;
        if (auto prm = parse_prm(*body, u)) {
            out.resource_metadata = prm;
            break;
        }
    }

    // Step 3: authorization-server metadata from each advertised server.
    std::vector<std::string> as_bases;
    if (out.resource_metadata) {
        for (const auto& s : out.resource_metadata->authorization_servers) as_bases.push_back(s);
    }
    // Fallback: probe the MCP origin itself.
    as_bases.push_back(base->origin() + base->path);

    for (const auto& as_base : as_bases) {
        auto as_url = Url::parse(as_base);
        if (!as_url || !as_url->is_http()) continue;
        std::vector<std::string> candidates;
        for (auto& u : well_known_urls(*as_url, "oauth-authorization-server"))
            candidates.push_back(u);
        for (auto& u : well_known_urls(*as_url, "openid-configuration")) candidates.push_back(u);
        for (const auto& u : candidates) {
            auto body = fetch_ok(client, u, out.attempted_urls);
            if (!body) continue;
            if (auto meta = parse_as_metadata(*body, u)) {
                out.auth_server = *meta;
                out.ok = true;
                return out;
            }
        }
    }

    out.error = "no OAuth metadata resolvable for " + mcp_url + " (" +
                std::to_string(out.attempted_urls.size()) + " urls attempted)";
    return out;
}

std::string compute_s256(std::string_view verifier) {
    return str::base64url_encode(crypto::sha256_str(verifier));
}

PkcePair generate_pkce(PkceMethod method) {
    static const char alphabet[] =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~";
    constexpr size_t kAlphabet = sizeof(alphabet) - 1;
    constexpr size_t kLength = 43;

    PkcePair pair;
    pair.method = method;
    std::string bytes = crypto::random_bytes(kLength);
    pair.verifier.reserve(kLength);
    for (size_t i = 0; i < kLength; ++i)
        pair.verifier += alphabet[static_cast<unsigned char>(bytes[i]) % kAlphabet];
    pair.challenge = (method == PkceMethod::s256) ? compute_s256(pair.verifier) : pair.verifier;
    return pair;
}

RegistrationOutcome register_client(net::Client& client, const AuthServerMetadata& meta,
                                    const std::vector<std::string>& redirect_uris,
                                    const std::string& client_name) {
    RegistrationOutcome out;
    if (!meta.registration_endpoint || meta.registration_endpoint->empty()) {
        out.status = RegistrationOutcome::Status::input_error;
        out.error = "metadata has no registration_endpoint";
        return out;
    }
    if (redirect_uris.empty()) {
        out.status = RegistrationOutcome::Status::input_error;
        out.error = "redirect_uris must not be empty";
        return out;
    }

    json body = {
        {"redirect_uris", redirect_uris},
        {"client_name", client_name},
        {"grant_types", json::array({"authorization_code"})},
        {"response_types", json::array({"code"})},
        {"token_endpoint_auth_method", "none"},
    };
    net::Request req;
    req.method = "POST";
    req.url = *meta.registration_endpoint;
    req.content_type = "application/json";
    req.headers.emplace_back("Accept", "application/json");
    req.body = body.dump();

    auto res = client.send(req);
    if (!res.ok) {
        out.status = RegistrationOutcome::Status::transport_error;
        out.error = res.error;
        return out;
    }
    out.http_status = res.status;
    out.body = res.body;
    if (res.status != 200 && res.status != 201) {
        out.status = RegistrationOutcome::Status::rejected;
        return out;
    }
    auto doc = json::parse(res.body, nullptr, false);
    if (!doc.is_object() || !doc.contains("client_id") || !doc["client_id"].is_string() ||
        doc["client_id"].get<std::string>().empty()) {
        out.status = RegistrationOutcome::Status::rejected;
        out.error = "registration response missing client_id";
        return out;
    }
    out.status = RegistrationOutcome::Status::registered;
    out.registration.client_id = doc["client_id"].get<std::string>();
    if (doc.contains("client_secret") && doc["client_secret"].is_string())
        out.registration.client_secret = doc["client_secret"].get<std::string>();
    if (doc.contains("redirect_uris") && doc["redirect_uris"].is_array()) {
        for (const auto& u : doc["redirect_uris"])
            if (u.is_string()) out.registration.redirect_uris.push_back(u.get<std::string>());
    }
    if (out.registration.redirect_uris.empty()) out.registration.redirect_uris = redirect_uris;
    out.registration.registration_response_raw = res.body;
    return out;
}

std::string build_authorization_url(const AuthorizationRequest& req) {
    Query q;
    auto put = [&](const char* key, const std::optional<std::string>& value) {
        if (value) q.emplace_back(key, *value);
    };
    put("response_type", req.response_type);
    q.emplace_back("client_id", req.client_id);
    put("redirect_uri", req.redirect_uri);
    put("state", req.state);
    put("code_challenge", req.code_challenge);
    put("code_challenge_method", req.code_challenge_method);
    put("scope", req.scope);
    put("resource", req.resource);
    for (const auto& [k, v] : req.extra_params) q.emplace_back(k, v);

    std::string url = req.endpoint;
    url += (url.find('?') == std::string::npos) ? "?" : "&";
    url += build_query(q);
    return url;
}

std::optional<AuthorizationRequest> parse_authorization_url(const std::string& url) {
    auto parsed = Url::parse(url);
    if (!parsed) return std::nullopt;
    AuthorizationRequest req;
    Url endpoint = *parsed;
    endpoint.query.clear();
    endpoint.fragment.clear();
    req.endpoint = endpoint.str();
    req.response_type = std::nullopt;

    Query q = parse_query(parsed->query);
    for (const auto& [k, v] : q) {
        if (k == "response_type" && !req.response_type) req.response_type = v;
        else if (k == "client_id" && req.client_id.empty()) req.client_id = v;
        else if (k == "redirect_uri" && !req.redirect_uri) req.redirect_uri = v;
        else if (k == "state" && !req.state) req.state = v;
        else if (k == "code_challenge" && !req.code_challenge) req.code_challenge = v;
        else if (k == "code_challenge_method" && !req.code_challenge_method)
            req.code_challenge_method = v;
        else if (k == "scope" && !req.scope) req.scope = v;
        else if (k == "resource" && !req.resource) req.resource = v;
        else req.extra_params.emplace_back(k, v);
    }
    if (req.client_id.empty()) return std::nullopt;
    return req;
}

net::Request build_token_request(const AuthServerMetadata& meta, const std::string& code,
                                 const std::optional<std::string>& verifier,
                                 const ClientRegistration& reg, const std::string& redirect_uri) {
    Query form = {
        {"grant_type", "authorization_code"},
        {"code", code},
        {"redirect_uri", redirect_uri},
        {"client_id", reg.client_id},
    };
    if (verifier) form.emplace_back("code_verifier", *verifier);
    if (reg.client_secret) form.emplace_back("client_secret", *reg.client_secret);

    net::Request req;
    req.method = "POST";
    req.url = meta.token_endpoint;
    req.content_type = "application/x-www-form-urlencoded";
    req.headers.emplace_back("Accept", "application/json");
    req.body = build_query(form);
    return req;
}

TokenOutcome parse_token_response(const net::Response& res) {
    TokenOutcome out;
    if (!res.ok) {
        out.status = TokenOutcome::Status::transport_error;
        out.error = res.error;
        return out;
    }
    out.http_status = res.status;
    out.body = res.body;
    auto doc = json::parse(res.body, nullptr, false);
    if (res.status == 200 && doc.is_object() && doc.contains("access_token") &&
        doc["access_token"].is_string() && !doc["access_token"].get<std::string>().empty()) {
        out.status = TokenOutcome::Status::ok;
        out.token.access_token = doc["access_token"].get<std::string>();
        out.token.token_type = doc.value("token_type", "");
        if (doc.contains("refresh_token") && doc["refresh_token"].is_string())
            out.token.refresh_token = doc["refresh_token"].get<std::string>();
        if (doc.contains("expires_in") && doc["expires_in"].is_number())
            out.token.expires_in = doc["expires_in"].get<long long>();
        out.token.raw = res.body;
        return out;
    }
    out.status = TokenOutcome::Status::oauth_error;
    out.oauth_error =
        (doc.is_object() && doc.contains("error") && doc["error"].is_string())
            ? doc["error"].get<std::string>()
            : ("http_" + std::to_string(res.status));
    return out;
}

TokenOutcome exchange_code(net::Client& client, const AuthServerMetadata& meta,
                           const std::string& code, const std::optional<std::string>& verifier,
                           const ClientRegistration& reg, const std::string& redirect_uri) {
    if (code.empty()) {
        TokenOutcome out;
        out.status = TokenOutcome::Status::transport_error;
        out.error = "empty authorization code";
        return out;
    }
    return parse_token_response(
        client.send(build_token_request(meta, code, verifier, reg, redirect_uri)));
}

}  // namespace mcpscan::oauth
