#include "mcpscan/flawlab.hpp"

#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <regex>
#include <thread>

#include "mcpscan/crypto.hpp"
#include "mcpscan/detectors.hpp"
#include "mcpscan/http.hpp"
#include "mcpscan/http_deps.hpp"
#include "mcpscan/oauth.hpp"
#include "mcpscan/strings.hpp"

namespace mcpscan::lab {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {
constexpr long long kCodeTtlMs = 60'000;
constexpr const char* kMcpProtocolVersion = "2025-06-18";
}  // namespace

const char* auth_mode_name(AuthMode m) {
    switch (m) {
        case AuthMode::none: return "none";
        case AuthMode::static_token: return "static_token";
        case AuthMode::oauth: return "oauth";
    }
    return "oauth";
}

std::vector<std::string> FlawLabConfig::validate() const {
    std::vector<std::string> out;
    if ((flag(3) || flag(4)) && !delegated_mode)
        out.push_back("F3/F4 require delegated_mode=true");
    if (f5_variant != "strip" && f5_variant != "plain")
        out.push_back("F5 variant must be strip or plain");
    if (f7_variant != "full" && f7_variant != "weak")
        out.push_back("F7 variant must be full or weak");
    if (f8_variant != "omit" && f8_variant != "fixed" && f8_variant != "short")
        out.push_back("F8 variant must be omit, fixed, or short");
    if (auth_mode != AuthMode::oauth) {
        for (int i = 1; i <= 9; ++i) {
            if (flag(i)) {
                out.push_back("flaw flags require auth_mode=oauth");
                break;
            }
        }
        if (delegated_mode) out.push_back("delegated_mode requires auth_mode=oauth");
    }
    if (authorize_hops < 0 || authorize_hops > 20)
        out.push_back("authorize_hops must be in [0, 20]");
    return out;
}

std::string FlawLabConfig::to_json() const {
    ordered_json j;
    ordered_json fl = ordered_json::object();
    for (int i = 1; i <= 9; ++i) fl["F" + std::to_string(i)] = flag(i);
    j["flags"] = fl;
    j["variant"] = {{"F5", f5_variant}, {"F7", f7_variant}, {"F8", f8_variant}};
    j["delegated_mode"] = delegated_mode;
    j["auth_mode"] = auth_mode_name(auth_mode);
    j["ports"] = {{"mcp", mcp_port}, {"auth", auth_port}, {"upstream", upstream_port}};
    j["seed"] = seed;
    j["authorize_hops"] = authorize_hops;
    j["gate_initialize"] = gate_initialize;
    j["sse_transport"] = sse_transport;
    j["auto_fire_callback"] = auto_fire_callback;
    j["require_session_header"] = require_session_header;
    j["oidc_discovery_only"] = oidc_discovery_only;
    j["scope"] = scope;
    return j.dump(2);
}

std::optional<FlawLabConfig> FlawLabConfig::from_json(const std::string& text,
                                                      std::string* error) {
    auto doc = json::parse(text, nullptr, false);
    if (!doc.is_object()) {
        if (error) *error = "config is not a JSON object";
        return std::nullopt;
    }
    FlawLabConfig cfg;
    try {
        if (doc.contains("flags")) {
            const auto& fl = doc["flags"];
            if (fl.is_object()) {
                for (int i = 1; i <= 9; ++i)
                    cfg.set_flag(i, fl.value("F" + std::to_string(i), false));
            } else if (fl.is_array()) {
                for (const auto& f : fl) {
                    std::string name = f.get<std::string>();
                    if (name.size() == 2 && name[0] == 'F')
                        cfg.set_flag(name[1] - '0', true);
                }
            }
        }
        if (doc.contains("variant") && doc["variant"].is_object()) {
            cfg.f5_variant = doc["variant"].value("F5", cfg.f5_variant);
            cfg.f7_variant = doc["variant"].value("F7", cfg.f7_variant);
            cfg.f8_variant = doc["variant"].value("F8", cfg.f8_variant);
        }
        cfg.delegated_mode = doc.value("delegated_mode", cfg.delegated_mode);
        std::string mode = doc.value("auth_mode", "oauth");
        if (mode == "none") cfg.auth_mode = AuthMode::none;
        else if (mode == "static_token") cfg.auth_mode = AuthMode::static_token;
        else cfg.auth_mode = AuthMode::oauth;
        if (doc.contains("ports") && doc["ports"].is_object()) {
            cfg.mcp_port = doc["ports"].value("mcp", 0);
            cfg.auth_port = doc["ports"].value("auth", 0);
            cfg.upstream_port = doc["ports"].value("upstream", 0);
        }
        cfg.seed = doc.value("seed", cfg.seed);
        cfg.authorize_hops = doc.value("authorize_hops", cfg.authorize_hops);
        cfg.gate_initialize = doc.value("gate_initialize", cfg.gate_initialize);
        cfg.sse_transport = doc.value("sse_transport", cfg.sse_transport);
        cfg.auto_fire_callback = doc.value("auto_fire_callback", cfg.auto_fire_callback);
        cfg.require_session_header =
            doc.value("require_session_header", cfg.require_session_header);
        cfg.oidc_discovery_only = doc.value("oidc_discovery_only", cfg.oidc_discovery_only);
        cfg.scope = doc.value("scope", cfg.scope);
    } catch (const json::exception& e) {
        if (error) *error = e.what();
        return std::nullopt;
    }
    return cfg;
}

ConfigError::ConfigError(const std::vector<std::string>& violations)
    : std::invalid_argument("invalid flaw lab config: " +
                            [&] {
                                std::string s;
                                for (const auto& v : violations) s += v + "; ";
                                return s;
                            }()),
      violations_(violations) {}

// ---------------------------------------------------------------------------

namespace {

struct ClientRec {
    std::vector<std::string> redirect_uris;
    std::string name;
};

struct PendingAuthz {
    std::string client_id;
    std::string redirect_uri;
    std::optional<std::string> state;
    std::optional<std::string> challenge;
    std::optional<std::string> method;
    std::string scope;
};

struct CodeRec {
    std::string client_id;
    std::string redirect_uri;
    std::optional<std::string> challenge;
    std::optional<std::string> method;
    int redeemed = 0;
    long long issued_ms = 0;
    std::string subject;
};

struct TokenRec {
    std::string subject;
    std::string client_id;
    std::string scope;
};

// Server-side bridging record for the delegated hop. With the opaque map
// (F4 off) this is the authoritative routing context keyed by the state
// value; with nested encoding (F4 on) only the upstream PKCE verifier stays
// server-side, keyed by the sid carried inside the nested payload.
struct UpstreamSession {
    PendingAuthz resume;
    std::optional<std::string> l2_verifier;
};

bool redirect_allowed_by_allowlist(const std::string& uri) {
    auto parsed = Url::parse(uri);
    if (!parsed) return false;
    if (!parsed->is_http()) return true;  // custom schemes are client-local
    return is_loopback_host(parsed->host);
}

}  // namespace

struct Lab::Impl {
    FlawLabConfig cfg;
    crypto::SeededArtifacts artifacts;

    std::mutex mu;
    std::map<std::string, ClientRec> clients;
    std::map<std::string, PendingAuthz> pending;
    std::map<std::string, CodeRec> codes;
    std::map<std::string, TokenRec> tokens;
    std::map<std::string, CodeRec> up_codes;
    std::map<std::string, TokenRec> up_tokens;
    std::map<std::string, UpstreamSession> upstream_sessions;
    std::string upstream_client_id;

    mutable std::mutex log_mu;
    std::vector<LoggedRequest> log;
    long long log_seq = 1;

    httplib::Server mcp_srv, auth_srv, up_srv;
    std::thread mcp_thr, auth_thr, up_thr;
    int mcp_port = 0, auth_port = 0, up_port = 0;
    bool running = false;

    explicit Impl(const FlawLabConfig& c) : cfg(c), artifacts(c.seed, "lab") {}

    bool f(int n) const { return cfg.flag(n); }

    std::string mcp_origin() const { return "http://127.0.0.1:" + std::to_string(mcp_port); }
    std::string auth_origin() const { return "http://127.0.0.1:" + std::to_string(auth_port); }
    std::string up_origin() const { return "http://127.0.0.1:" + std::to_string(up_port); }
    std::string upstream_callback_url() const { return mcp_origin() + "/oauth/upstream/callback"; }

    void attach_logger(httplib::Server& srv, const char* role) {
        srv.set_logger([this, role](const httplib::Request& req, const httplib::Response& res) {
            LoggedRequest entry;
            entry.server_role = role;
            entry.method = req.method;
            entry.target = req.target;
            for (const auto& [k, v] : req.headers) entry.headers.emplace_back(k, v);
            entry.body = req.body;
            entry.status = res.status;
            entry.response_body = res.body;
            std::lock_guard<std::mutex> lock(log_mu);
            entry.seq = log_seq++;
            log.push_back(std::move(entry));
        });
    }

    // --- MCP server -------------------------------------------------------

    void respond_rpc(httplib::Response& res, const json& payload) {
        if (cfg.sse_transport) {
            res.set_content("event: message\ndata: " + payload.dump() + "\n\n",
                            "text/event-stream");
        } else {
            res.set_content(payload.dump(), "application/json");
        }
    }

    bool bearer_token_valid(const httplib::Request& req) {
        auto auth = req.get_header_value("Authorization");
        if (auth.rfind("Bearer ", 0) != 0) return false;
        std::string token = auth.substr(7);
        std::lock_guard<std::mutex> lock(mu);
        return tokens.count(token) > 0;
    }

    void handle_mcp(const httplib::Request& req, httplib::Response& res) {
        auto doc = json::parse(req.body, nullptr, false);
        std::string method = doc.is_object() ? doc.value("method", "") : "";

        if (cfg.auth_mode != AuthMode::none) {
            const bool authed =
                cfg.auth_mode == AuthMode::oauth ? bearer_token_valid(req) : false;
            const bool gated = cfg.gate_initialize || method != "initialize";
            if (!authed && gated) {
                res.status = 401;
                if (cfg.auth_mode == AuthMode::oauth) {
                    res.set_header("WWW-Authenticate",
                                   "Bearer resource_metadata=\"" + mcp_origin() +
                                       "/.well-known/oauth-protected-resource\"");
                    res.set_content(R"({"error":"unauthorized"})", "application/json");
                } else {
                    res.set_content(R"({"error":"invalid_api_key"})", "application/json");
                }
                return;
            }
        }

        if (!doc.is_object() || doc.value("jsonrpc", "") != "2.0") {
            res.status = 400;
            res.set_content(R"({"error":"not a JSON-RPC 2.0 request"})", "application/json");
            return;
        }
        json id = doc.contains("id") ? doc["id"] : json();

        if (method == "initialize") {
            json result = {
                {"protocolVersion", kMcpProtocolVersion},
                {"capabilities", {{"tools", json::object()}}},
                {"serverInfo", {{"name", "flawlab-mcp"}, {"version", "0.1.0"}}},
            };
            res.set_header("Mcp-Session-Id", artifacts.next("session"));
            respond_rpc(res, json{{"jsonrpc", "2.0"}, {"id", id}, {"result", result}});
            return;
        }
        if (method == "notifications/initialized") {
            res.status = 202;
            return;
        }
        if (method == "tools/list") {
            if (cfg.require_session_header && req.get_header_value("Mcp-Session-Id").empty()) {
                res.status = 400;
                respond_rpc(res, json{{"jsonrpc", "2.0"},
                                      {"id", id},
                                      {"error",
                                       {{"code", -32000}, {"message", "missing Mcp-Session-Id"}}}});
                return;
            }
            json tools = json::array({json{
                {"name", "echo"},
                {"description", "Echo a message back to the caller"},
                {"inputSchema",
                 {{"type", "object"},
                  {"properties", {{"message", {{"type", "string"}}}}},
                  {"required", json::array({"message"})}}},
            }});
            respond_rpc(res, json{{"jsonrpc", "2.0"}, {"id", id}, {"result", {{"tools", tools}}}});
            return;
        }
        respond_rpc(res, json{{"jsonrpc", "2.0"},
                              {"id", id},
                              {"error", {{"code", -32601}, {"message", "method not found"}}}});
    }

    void handle_prm(const httplib::Request&, httplib::Response& res) {
        if (cfg.auth_mode != AuthMode::oauth) {
            res.status = 404;
            return;
        }
        json doc = {{"resource", mcp_origin() + "/mcp"},
                    {"authorization_servers", json::array({auth_origin()})}};
        res.set_content(doc.dump(), "application/json");
    }

    // --- Authorization server ----------------------------------------------

    void handle_as_metadata(const httplib::Request&, httplib::Response& res) {
        json doc = {
            {"issuer", auth_origin()},
            {"authorization_endpoint", auth_origin() + "/authorize"},
            {"token_endpoint", auth_origin() + "/token"},
            {"registration_endpoint", auth_origin() + "/register"},
            {"response_types_supported", json::array({"code"})},
            {"grant_types_supported", json::array({"authorization_code"})},
        };
        // PKCE advertisement mirrors enforcement: S256-only when hardened,
        // plain-only for the plain variant, silent when stripping is allowed.
        if (!f(5)) {
            doc["code_challenge_methods_supported"] = json::array({"S256"});
        } else if (cfg.f5_variant == "plain") {
            doc["code_challenge_methods_supported"] = json::array({"plain"});
        }
        res.set_content(doc.dump(), "application/json");
    }

    void error_page(httplib::Response& res, int status, const std::string& oauth_error,
                    const std::string& description) {
        res.status = status;
        res.set_content("<html><head><title>Error</title></head><body><h1>" + oauth_error +
                            "</h1><p>" + description + "</p></body></html>",
                        "text/html");
    }

    void handle_register(const httplib::Request& req, httplib::Response& res) {
        auto doc = json::parse(req.body, nullptr, false);
        if (!doc.is_object() || !doc.contains("redirect_uris") ||
            !doc["redirect_uris"].is_array() || doc["redirect_uris"].empty()) {
            res.status = 400;
            res.set_content(R"({"error":"invalid_client_metadata","error_description":"redirect_uris required"})",
                            "application/json");
            return;
        }
        std::vector<std::string> uris;
        for (const auto& u : doc["redirect_uris"]) {
            if (!u.is_string()) {
                res.status = 400;
                res.set_content(R"({"error":"invalid_redirect_uri"})", "application/json");
                return;
            }
            uris.push_back(u.get<std::string>());
        }
        if (!f(1)) {
            for (const auto& u : uris) {
                if (!redirect_allowed_by_allowlist(u)) {
                    res.status = 400;
                    json err = {{"error", "invalid_redirect_uri"},
                                {"error_description",
                                 "redirect_uri not permitted by this server: " + u}};
                    res.set_content(err.dump(), "application/json");
                    return;
                }
            }
        }
        std::string client_id = artifacts.next("client");
        {
            std::lock_guard<std::mutex> lock(mu);
            clients[client_id] = ClientRec{uris, doc.value("client_name", "")};
        }
        json out = {{"client_id", client_id},
                    {"redirect_uris", uris},
                    {"client_name", doc.value("client_name", "")},
                    {"token_endpoint_auth_method", "none"},
                    {"grant_types", json::array({"authorization_code"})},
                    {"response_types", json::array({"code"})}};
        res.status = 201;
        res.set_content(out.dump(), "application/json");
    }

    bool redirect_uri_acceptable(const std::string& candidate,
                                 const std::vector<std::string>& registered) {
        for (const auto& r : registered)
            if (candidate == r) return true;
        if (!f(7)) return false;
        if (cfg.f7_variant == "full") return Url::parse(candidate).has_value();
        // Weak validation: decimal-IP spellings of a registered loopback URI
        // and registered URIs extended with extra path suffixes slip through.
        auto cand = Url::parse(candidate);
        for (const auto& r : registered) {
            if (candidate.size() > r.size() && candidate.rfind(r, 0) == 0) return true;
            auto reg = Url::parse(r);
            if (!cand || !reg) continue;
            if (ipv4_to_decimal(reg->host) == cand->host &&
                cand->effective_port() == reg->effective_port() && cand->path == reg->path)
                return true;
        }
        return false;
    }

    std::string consent_page(const std::string& request_id, const std::string& client_label,
                             const std::string& redirect_uri, const std::string& scope) {
        std::string html =
            "<html><head><title>Authorize access</title></head><body>"
            "<h1>Authorization request</h1>"
            "<p>Application <b>" + client_label + "</b> requests access to scope <code>" +
            scope + "</code>.</p>";
        if (!f(6)) {
            html += "<p id=\"redirect-display\">The authorization result will be delivered to "
                    "<code>" + redirect_uri + "</code>.</p>";
            auto target = Url::parse(redirect_uri);
            if (target && target->is_http() && is_loopback_host(target->host)) {
                html += "<p id=\"localhost-warning\">Warning: this callback points to a "
                        "localhost address on your machine. Continue only if you opened this "
                        "request yourself.</p>";
            }
        }
        html += "<form method=\"post\" action=\"/authorize/decision\">"
                "<input type=\"hidden\" name=\"request_id\" value=\"" + request_id + "\">"
                "<button type=\"submit\" name=\"action\" value=\"approve\">Approve</button> "
                "<button type=\"submit\" name=\"action\" value=\"deny\">Deny</button>"
                "</form></body></html>";
        return html;
    }

    std::string mint_code_locked(const PendingAuthz& p) {
        std::string code = artifacts.next("code");
        codes[code] = CodeRec{p.client_id, p.redirect_uri, p.challenge, p.method,
                              0,           str::now_ms(),  "testuser"};
        return code;
    }

    static std::string append_query(const std::string& base, const Query& q) {
        return base + (base.find('?') == std::string::npos ? "?" : "&") + build_query(q);
    }

    void issue_authorization_response(httplib::Response& res, const PendingAuthz& p) {
        if (cfg.delegated_mode) {
            start_upstream_hop(res, p);
            return;
        }
        std::string code;
        {
            std::lock_guard<std::mutex> lock(mu);
            code = mint_code_locked(p);
        }
        Query q = {{"code", code}};
        if (p.state) q.emplace_back("state", *p.state);
        res.status = 302;
        res.set_header("Location", append_query(p.redirect_uri, q));
    }

    void start_upstream_hop(httplib::Response& res, const PendingAuthz& p) {
        std::string sid = artifacts.next("l2s");
        std::optional<std::string> l2_verifier;
        std::optional<std::string> l2_challenge;
        if (!f(3)) {
            l2_verifier = artifacts.next("l2v");
            l2_challenge = oauth::compute_s256(*l2_verifier);
        }

        std::string l2_state;
        if (f(4)) {
            // Routing context serialized into the client-visible state with
            // no integrity protection; only the PKCE verifier stays behind.
            ordered_json nested;
            nested["redirect_uri"] = p.redirect_uri;
            nested["client_id"] = p.client_id;
            if (p.state) nested["state"] = *p.state;
            if (p.challenge) nested["challenge"] = *p.challenge;
            if (p.method) nested["method"] = *p.method;
            nested["sid"] = sid;
            l2_state = str::base64url_encode(nested.dump());
            std::lock_guard<std::mutex> lock(mu);
            upstream_sessions[sid] = UpstreamSession{p, l2_verifier};
        } else {
            l2_state = sid;
            std::lock_guard<std::mutex> lock(mu);
            upstream_sessions[sid] = UpstreamSession{p, l2_verifier};
        }

        Query q = {{"response_type", "code"},
                   {"client_id", upstream_client_id},
                   {"redirect_uri", upstream_callback_url()},
                   {"scope", "upstream.read"},
                   {"state", l2_state}};
        if (l2_challenge) {
            q.emplace_back("code_challenge", *l2_challenge);
            q.emplace_back("code_challenge_method", "S256");
        }
        res.status = 302;
        res.set_header("Location", up_origin() + "/authorize?" + build_query(q));
    }

    void handle_authorize(const httplib::Request& req, httplib::Response& res) {
        // Optional pre-validation redirect chain: validation happens only at
        // the end of the chain.
        if (cfg.authorize_hops > 0) {
            int hop = 0;
            if (req.has_param("_hop")) hop = std::atoi(req.get_param_value("_hop").c_str());
            if (hop < cfg.authorize_hops) {
                Query q;
                for (const auto& [k, v] : req.params) {
                    if (k != "_hop") q.emplace_back(k, v);
                }
                q.emplace_back("_hop", std::to_string(hop + 1));
                res.status = 302;
                res.set_header("Location", "/authorize?" + build_query(q));
                return;
            }
        }

        auto param = [&](const char* name) -> std::optional<std::string> {
            if (!req.has_param(name)) return std::nullopt;
            return req.get_param_value(name);
        };

        std::string client_id = param("client_id").value_or("");
        std::string redirect_uri = param("redirect_uri").value_or("");
        auto state = param("state");
        auto challenge = param("code_challenge");
        auto method = param("code_challenge_method");
        std::string response_type = param("response_type").value_or("");
        std::string scope = param("scope").value_or(cfg.scope);

        if (client_id.empty() || redirect_uri.empty()) {
            error_page(res, 400, "invalid_request", "client_id and redirect_uri are required");
            return;
        }
        if (response_type != "code") {
            error_page(res, 400, "unsupported_response_type", "only code is supported");
            return;
        }

        std::string client_label = client_id;
        {
            std::lock_guard<std::mutex> lock(mu);
            auto it = clients.find(client_id);
            if (it == clients.end()) {
                if (!f(2)) {
                    error_page(res, 400, "invalid_client", "unknown client_id");
                    return;
                }
                // Blind trust: the unregistered identity is accepted and its
                // redirect_uri taken at face value.
            } else {
                if (!it->second.name.empty()) client_label = it->second.name;
                if (!redirect_uri_acceptable(redirect_uri, it->second.redirect_uris)) {
                    error_page(res, 400, "invalid_redirect_uri",
                               "redirect_uri does not match the registration");
                    return;
                }
            }
        }

        if (challenge && !method) method = "plain";  // RFC 7636 default
        if (!challenge) {
            if (!(f(5) && cfg.f5_variant == "strip")) {
                error_page(res, 400, "invalid_request", "code_challenge is required");
                return;
            }
        } else if (*method == "plain") {
            if (!(f(5) && cfg.f5_variant == "plain")) {
                error_page(res, 400, "invalid_request",
                           "plain code_challenge_method is not accepted");
                return;
            }
        } else if (*method != "S256") {
            error_page(res, 400, "invalid_request", "unsupported code_challenge_method");
            return;
        }

        PendingAuthz p{client_id, redirect_uri, state, challenge, method, scope};
        if (cfg.auto_fire_callback) {
            issue_authorization_response(res, p);
            return;
        }
        std::string request_id = artifacts.next("authreq");
        {
            std::lock_guard<std::mutex> lock(mu);
            pending[request_id] = p;
        }
        res.set_content(consent_page(request_id, client_label, redirect_uri, scope), "text/html");
    }

    void handle_decision(const httplib::Request& req, httplib::Response& res) {
        std::string request_id =
            req.has_param("request_id") ? req.get_param_value("request_id") : "";
        std::string action = req.has_param("action") ? req.get_param_value("action") : "";
        PendingAuthz p;
        {
            std::lock_guard<std::mutex> lock(mu);
            auto it = pending.find(request_id);
            if (it == pending.end()) {
                error_page(res, 404, "invalid_request", "unknown authorization request");
                return;
            }
            p = it->second;
            pending.erase(it);
        }
        if (action != "approve") {
            Query q = {{"error", "access_denied"}};
            if (p.state) q.emplace_back("state", *p.state);
            res.status = 302;
            res.set_header("Location", append_query(p.redirect_uri, q));
            return;
        }
        issue_authorization_response(res, p);
    }

    void token_error(httplib::Response& res, const std::string& code) {
        res.status = 400;
        res.set_content(json{{"error", code}}.dump(), "application/json");
    }

    void handle_token_for(std::map<std::string, CodeRec>& code_store,
                          std::map<std::string, TokenRec>& token_store, bool allow_reuse,
                          const char* token_kind, const httplib::Request& req,
                          httplib::Response& res) {
        auto param = [&](const char* name) -> std::string {
            return req.has_param(name) ? req.get_param_value(name) : "";
        };
        if (param("grant_type") != "authorization_code") {
            token_error(res, "unsupported_grant_type");
            return;
        }
        std::string code = param("code");
        std::string redirect_uri = param("redirect_uri");
        std::string client_id = param("client_id");
        std::string verifier = param("code_verifier");

        std::lock_guard<std::mutex> lock(mu);
        auto it = code_store.find(code);
        if (it == code_store.end()) {
            token_error(res, "invalid_grant");
            return;
        }
        CodeRec& rec = it->second;
        if (str::now_ms() - rec.issued_ms > kCodeTtlMs) {
            code_store.erase(it);
            token_error(res, "invalid_grant");
            return;
        }
        if (rec.redeemed > 0 && !allow_reuse) {
            token_error(res, "invalid_grant");
            return;
        }
        if (client_id != rec.client_id) {
            token_error(res, "invalid_client");
            return;
        }
        if (redirect_uri != rec.redirect_uri) {
            token_error(res, "invalid_grant");
            return;
        }
        if (rec.challenge) {
            bool ok = false;
            if (!verifier.empty()) {
                if (rec.method && *rec.method == "plain")
                    ok = verifier == *rec.challenge;
                else
                    ok = oauth::compute_s256(verifier) == *rec.challenge;
            }
            if (!ok) {
                token_error(res, "invalid_grant");
                return;
            }
        }
        rec.redeemed++;
        std::string token = artifacts.next(token_kind);
        token_store[token] = TokenRec{rec.subject, rec.client_id, cfg.scope};
        json out = {{"access_token", token},
                    {"token_type", "Bearer"},
                    {"expires_in", 3600},
                    {"scope", cfg.scope}};
        res.set_content(out.dump(), "application/json");
    }

    void handle_token(const httplib::Request& req, httplib::Response& res) {
        handle_token_for(codes, tokens, f(9), "token", req, res);
    }

    // --- Upstream service ---------------------------------------------------

    void handle_upstream_authorize(const httplib::Request& req, httplib::Response& res) {
        auto param = [&](const char* name) -> std::string {
            return req.has_param(name) ? req.get_param_value(name) : "";
        };
        if (param("client_id") != upstream_client_id) {
            error_page(res, 400, "invalid_client", "unknown upstream client");
            return;
        }
        if (param("redirect_uri") != upstream_callback_url()) {
            error_page(res, 400, "invalid_redirect_uri", "upstream redirect mismatch");
            return;
        }
        std::string challenge = param("code_challenge");
        std::string method = param("code_challenge_method");
        if (!challenge.empty() && method != "S256") {
            error_page(res, 400, "invalid_request", "upstream requires S256");
            return;
        }
        std::string state = param("state");
        std::string code;
        {
            std::lock_guard<std::mutex> lock(mu);
            code = artifacts.next("ucode");
            up_codes[code] = CodeRec{upstream_client_id,
                                     upstream_callback_url(),
                                     challenge.empty() ? std::nullopt
                                                       : std::optional<std::string>(challenge),
                                     challenge.empty() ? std::nullopt
                                                       : std::optional<std::string>(method),
                                     0,
                                     str::now_ms(),
                                     "upstream-user"};
        }
        // The delegated "user" already consented at the MCP layer; the
        // upstream grant is pre-authorized for this account.
        Query q = {{"code", code}};
        if (!state.empty()) q.emplace_back("state", state);
        res.status = 302;
        res.set_header("Location", append_query(upstream_callback_url(), q));
    }

    void handle_upstream_token(const httplib::Request& req, httplib::Response& res) {
        handle_token_for(up_codes, up_tokens, /*allow_reuse=*/false, "utoken", req, res);
    }

    void handle_upstream_whoami(const httplib::Request& req, httplib::Response& res) {
        auto auth = req.get_header_value("Authorization");
        std::lock_guard<std::mutex> lock(mu);
        if (auth.rfind("Bearer ", 0) == 0) {
            auto it = up_tokens.find(auth.substr(7));
            if (it != up_tokens.end()) {
                res.set_content(json{{"subject", it->second.subject}}.dump(), "application/json");
                return;
            }
        }
        res.status = 401;
        res.set_content(R"({"error":"invalid_token"})", "application/json");
    }

    // --- MCP server: upstream callback (delegated resume) -------------------

    void handle_upstream_callback(const httplib::Request& req, httplib::Response& res) {
        auto param = [&](const char* name) -> std::string {
            return req.has_param(name) ? req.get_param_value(name) : "";
        };
        std::string up_code = param("code");
        std::string l2_state = param("state");
        if (up_code.empty() || l2_state.empty()) {
            error_page(res, 400, "invalid_request", "missing code or state");
            return;
        }

        PendingAuthz resume;
        std::optional<std::string> l2_verifier;
        std::string forward_target;

        if (f(4)) {
            // Nested routing context trusted as-is after decoding.
            auto decoded = str::base64url_decode(l2_state);
            auto doc = decoded ? json::parse(*decoded, nullptr, false) : json();
            if (!decoded || !doc.is_object() || !doc.contains("redirect_uri")) {
                error_page(res, 400, "invalid_request", "undecodable bridging state");
                return;
            }
            resume.redirect_uri = doc.value("redirect_uri", "");
            resume.client_id = doc.value("client_id", "");
            if (doc.contains("state") && doc["state"].is_string())
                resume.state = doc["state"].get<std::string>();
            if (doc.contains("challenge") && doc["challenge"].is_string())
                resume.challenge = doc["challenge"].get<std::string>();
            if (doc.contains("method") && doc["method"].is_string())
                resume.method = doc["method"].get<std::string>();
            forward_target = resume.redirect_uri;
            std::string sid = doc.value("sid", "");
            std::lock_guard<std::mutex> lock(mu);
            auto it = upstream_sessions.find(sid);
            if (it != upstream_sessions.end()) l2_verifier = it->second.l2_verifier;
        } else {
            std::lock_guard<std::mutex> lock(mu);
            auto it = upstream_sessions.find(l2_state);
            if (it == upstream_sessions.end()) {
                error_page(res, 400, "invalid_request", "unknown or tampered bridging state");
                return;
            }
            resume = it->second.resume;
            l2_verifier = it->second.l2_verifier;
            forward_target = resume.redirect_uri;
            upstream_sessions.erase(it);  // single-use
        }

        // Redeem the upstream code server-side.
        net::Client upstream_client(net::Timeouts{5, 10});
        Query form = {{"grant_type", "authorization_code"},
                      {"code", up_code},
                      {"redirect_uri", upstream_callback_url()},
                      {"client_id", upstream_client_id}};
        if (l2_verifier) form.emplace_back("code_verifier", *l2_verifier);
        net::Request treq;
        treq.method = "POST";
        treq.url = up_origin() + "/token";
        treq.content_type = "application/x-www-form-urlencoded";
        treq.body = build_query(form);
        auto tres = upstream_client.send(treq);
        auto tdoc = json::parse(tres.body, nullptr, false);
        if (!tres.ok || tres.status != 200 || !tdoc.is_object() ||
            !tdoc.contains("access_token")) {
            error_page(res, 502, "server_error", "upstream token exchange failed");
            return;
        }

        PendingAuthz final_p = resume;
        final_p.redirect_uri = forward_target;
        std::string code;
        {
            std::lock_guard<std::mutex> lock(mu);
            code = mint_code_locked(final_p);
        }
        Query q = {{"code", code}};
        if (final_p.state) q.emplace_back("state", *final_p.state);
        res.status = 302;
        res.set_header("Location", append_query(forward_target, q));
    }
};

// ---------------------------------------------------------------------------

std::unique_ptr<Lab> Lab::spawn(const FlawLabConfig& config) {
    auto violations = config.validate();
    if (!violations.empty()) throw ConfigError(violations);

    auto lab = std::unique_ptr<Lab>(new Lab());
    lab->impl_ = std::make_unique<Impl>(config);
    Impl* impl = lab->impl_.get();
    impl->upstream_client_id = impl->artifacts.next("upclient");

    auto bind = [](httplib::Server& srv, int port) {
        if (port == 0) return srv.bind_to_any_port("127.0.0.1");
        return srv.bind_to_port("127.0.0.1", port) ? port : -1;
    };

    impl->attach_logger(impl->mcp_srv, "mcp");
    impl->mcp_srv.Post("/mcp", [impl](const httplib::Request& req, httplib::Response& res) {
        impl->handle_mcp(req, res);
    });
    impl->mcp_srv.Get("/.well-known/oauth-protected-resource",
                      [impl](const httplib::Request& req, httplib::Response& res) {
                          impl->handle_prm(req, res);
                      });
    impl->mcp_srv.Get("/.well-known/oauth-protected-resource/mcp",
                      [impl](const httplib::Request& req, httplib::Response& res) {
                          impl->handle_prm(req, res);
                      });
    if (config.delegated_mode) {
        impl->mcp_srv.Get("/oauth/upstream/callback",
                          [impl](const httplib::Request& req, httplib::Response& res) {
                              impl->handle_upstream_callback(req, res);
                          });
    }
    impl->mcp_port = bind(impl->mcp_srv, config.mcp_port);
    if (impl->mcp_port <= 0) throw std::runtime_error("flaw lab: cannot bind MCP port");

    if (config.auth_mode == AuthMode::oauth) {
        impl->attach_logger(impl->auth_srv, "auth");
        auto meta = [impl](const httplib::Request& req, httplib::Response& res) {
            impl->handle_as_metadata(req, res);
        };
        if (config.oidc_discovery_only) {
            impl->auth_srv.Get("/.well-known/openid-configuration", meta);
        } else {
            impl->auth_srv.Get("/.well-known/oauth-authorization-server", meta);
        }
        impl->auth_srv.Post("/register",
                            [impl](const httplib::Request& req, httplib::Response& res) {
                                impl->handle_register(req, res);
                            });
        impl->auth_srv.Get("/authorize",
                           [impl](const httplib::Request& req, httplib::Response& res) {
                               impl->handle_authorize(req, res);
                           });
        impl->auth_srv.Post("/authorize/decision",
                            [impl](const httplib::Request& req, httplib::Response& res) {
                                impl->handle_decision(req, res);
                            });
        impl->auth_srv.Post("/token",
                            [impl](const httplib::Request& req, httplib::Response& res) {
                                impl->handle_token(req, res);
                            });
        impl->auth_port = bind(impl->auth_srv, config.auth_port);
        if (impl->auth_port <= 0) throw std::runtime_error("flaw lab: cannot bind auth port");
    }

    if (config.delegated_mode) {
        impl->attach_logger(impl->up_srv, "upstream");
        impl->up_srv.Get("/authorize",
                         [impl](const httplib::Request& req, httplib::Response& res) {
                             impl->handle_upstream_authorize(req, res);
                         });
        impl->up_srv.Post("/token",
                          [impl](const httplib::Request& req, httplib::Response& res) {
                              impl->handle_upstream_token(req, res);
                          });
        impl->up_srv.Get("/api/whoami",
                         [impl](const httplib::Request& req, httplib::Response& res) {
                             impl->handle_upstream_whoami(req, res);
                         });
        impl->up_port = bind(impl->up_srv, config.upstream_port);
        if (impl->up_port <= 0) throw std::runtime_error("flaw lab: cannot bind upstream port");
    }

    impl->running = true;
    impl->mcp_thr = std::thread([impl] { impl->mcp_srv.listen_after_bind(); });
    impl->mcp_srv.wait_until_ready();
    if (config.auth_mode == AuthMode::oauth) {
        impl->auth_thr = std::thread([impl] { impl->auth_srv.listen_after_bind(); });
        impl->auth_srv.wait_until_ready();
    }
    if (config.delegated_mode) {
        impl->up_thr = std::thread([impl] { impl->up_srv.listen_after_bind(); });
        impl->up_srv.wait_until_ready();
    }
    return lab;
}

Lab::~Lab() { stop(); }

void Lab::stop() {
    if (!impl_ || !impl_->running) return;
    impl_->running = false;
    impl_->mcp_srv.stop();
    impl_->auth_srv.stop();
    impl_->up_srv.stop();
    if (impl_->mcp_thr.joinable()) impl_->mcp_thr.join();
    if (impl_->auth_thr.joinable()) impl_->auth_thr.join();
    if (impl_->up_thr.joinable()) impl_->up_thr.join();
}

std::string Lab::mcp_url() const { return impl_->mcp_origin() + "/mcp"; }
std::string Lab::mcp_origin() const { return impl_->mcp_origin(); }
std::string Lab::auth_origin() const { return impl_->auth_origin(); }

std::optional<std::string> Lab::upstream_origin() const {
    if (!impl_->cfg.delegated_mode) return std::nullopt;
    return impl_->up_origin();
}

const FlawLabConfig& Lab::config() const { return impl_->cfg; }

std::vector<LoggedRequest> Lab::request_log() const {
    std::lock_guard<std::mutex> lock(impl_->log_mu);
    return impl_->log;
}

void Lab::clear_request_log() {
    std::lock_guard<std::mutex> lock(impl_->log_mu);
    impl_->log.clear();
}

// ---------------------------------------------------------------------------
// Scripted sessions

namespace {

struct ScriptedFlow {
    std::string cb_path;
    std::optional<std::string> state;
    std::optional<oauth::PkcePair> pkce;
    std::string consent_request_id;
    std::string code;
};

// The scripted client mirrors deployment hints the way permissive real
// clients do: S256 when advertised, plain when that is all the server
// offers, and no PKCE at all when the server is silent.
std::optional<oauth::PkcePair> pkce_for_metadata(const oauth::AuthServerMetadata& meta,
                                                 crypto::SeededArtifacts& gen) {
    std::optional<oauth::PkcePair> out;
    auto methods = meta.code_challenge_methods_supported;
    auto has = [&](const char* m) {
        return methods &&
               std::find(methods->begin(), methods->end(), std::string(m)) != methods->end();
    };
    if (has("S256")) {
        oauth::PkcePair pair;
        pair.method = oauth::PkceMethod::s256;
        pair.verifier = gen.next("verifier") + gen.next("verifier");
        pair.challenge = oauth::compute_s256(pair.verifier);
        out = pair;
    } else if (has("plain")) {
        oauth::PkcePair pair;
        pair.method = oauth::PkceMethod::plain;
        pair.verifier = gen.next("verifier") + gen.next("verifier");
        pair.challenge = pair.verifier;
        out = pair;
    }
    return out;
}

std::optional<std::string> state_for_config(const FlawLabConfig& cfg,
                                            crypto::SeededArtifacts& gen) {
    if (!cfg.flag(8)) return gen.next("state");
    if (cfg.f8_variant == "omit") return std::nullopt;
    if (cfg.f8_variant == "fixed") return "state";
    return "1234";  // short
}

std::optional<std::string> extract_request_id(const std::string& html) {
    static const std::regex re("name=\"request_id\" value=\"([^\"]+)\"");
    std::smatch m;
    if (std::regex_search(html, m, re)) return m[1].str();
    return std::nullopt;
}

}  // namespace

std::vector<capture::HttpExchange> scripted_session(Lab& lab, Script script) {
    const FlawLabConfig& cfg = lab.config();
    if (cfg.auth_mode != AuthMode::oauth)
        throw std::invalid_argument("scripted_session requires an oauth-mode lab");

    capture::CaptureRecorder recorder;
    net::Client cli(net::Timeouts{5, 15}, &recorder, "script");
    crypto::SeededArtifacts gen(cfg.seed, "script");

    auto catcher = detect::CallbackCatcher::start("127.0.0.1", 0);

    auto disc = oauth::discover(cli, lab.mcp_url());
    if (!disc.ok) throw std::runtime_error("scripted session: discovery failed: " + disc.error);
    const auto& meta = disc.auth_server;

    const bool interleaved = script == Script::two_interleaved;
    std::vector<ScriptedFlow> flows;
    flows.push_back(ScriptedFlow{interleaved ? "/cb/a" : "/cb"});
    if (interleaved) flows.push_back(ScriptedFlow{"/cb/b"});

    std::vector<std::string> redirect_uris;
    for (const auto& fl : flows) redirect_uris.push_back(catcher->url_for(fl.cb_path));
    auto reg = oauth::register_client(cli, meta, redirect_uris, "flawlab-scripted-client");
    if (!reg.ok()) throw std::runtime_error("scripted session: registration failed");

    auto begin_flow = [&](ScriptedFlow& fl) {
        fl.state = state_for_config(cfg, gen);
        fl.pkce = pkce_for_metadata(meta, gen);
        oauth::AuthorizationRequest req;
        req.endpoint = meta.authorization_endpoint;
        req.client_id = reg.registration.client_id;
        req.redirect_uri = catcher->url_for(fl.cb_path);
        req.state = fl.state;
        if (fl.pkce) {
            req.code_challenge = fl.pkce->challenge;
            req.code_challenge_method = fl.pkce->method_name();
        }
        req.scope = cfg.scope;
        net::Request get;
        get.url = oauth::build_authorization_url(req);
        auto fr = cli.send_following(get, 25);
        if (fr.final.status != 200)
            throw std::runtime_error("scripted session: authorize did not render consent");
        auto request_id = extract_request_id(fr.final.body);
        if (!request_id) throw std::runtime_error("scripted session: consent form not found");
        fl.consent_request_id = *request_id;
    };

    auto approve_flow = [&](ScriptedFlow& fl) {
        net::Request post;
        post.method = "POST";
        post.url = lab.auth_origin() + "/authorize/decision";
        post.content_type = "application/x-www-form-urlencoded";
        post.body = build_query({{"request_id", fl.consent_request_id}, {"action", "approve"}});
        auto fr = cli.send_following(post, 25);  // follows through to the catcher
        // The callback landed on the catcher; take the code from its log.
        auto entries = catcher->entries_for(fl.cb_path);
        if (entries.empty())
            throw std::runtime_error("scripted session: callback never reached the client");
        auto url = Url::parse(entries.back().url);
        auto q = parse_query(url ? url->query : "");
        auto code = query_get(q, "code");
        if (!code) throw std::runtime_error("scripted session: callback carried no code");
        fl.code = *code;
        (void)fr;
    };

    auto redeem_flow = [&](ScriptedFlow& fl) {
        std::optional<std::string> verifier;
        if (fl.pkce) verifier = fl.pkce->verifier;
        auto token = oauth::exchange_code(cli, meta, fl.code, verifier, reg.registration,
                                          catcher->url_for(fl.cb_path));
        if (!token.ok())
            throw std::runtime_error("scripted session: token exchange failed: " +
                                     token.oauth_error);
        // Prove the token against the tool interface.
        net::Request init;
        init.method = "POST";
        init.url = lab.mcp_url();
        init.content_type = "application/json";
        init.headers.emplace_back("Accept", "application/json, text/event-stream");
        init.headers.emplace_back("Authorization", "Bearer " + token.token.access_token);
        init.body =
            R"({"jsonrpc":"2.0","id":90,"method":"initialize","params":{"protocolVersion":")" +
            std::string(kMcpProtocolVersion) + R"(","capabilities":{}}})";
        auto ires = cli.send(init);
        std::string session;
        if (auto sid = ires.header("Mcp-Session-Id")) session = *sid;
        net::Request tools;
        tools.method = "POST";
        tools.url = lab.mcp_url();
        tools.content_type = "application/json";
        tools.headers.emplace_back("Accept", "application/json, text/event-stream");
        tools.headers.emplace_back("Authorization", "Bearer " + token.token.access_token);
        if (!session.empty()) tools.headers.emplace_back("Mcp-Session-Id", session);
        tools.body = R"({"jsonrpc":"2.0","id":91,"method":"tools/list","params":{}})";
        cli.send(tools);
    };

    if (!interleaved) {
        begin_flow(flows[0]);
        approve_flow(flows[0]);
        redeem_flow(flows[0]);
    } else {
        begin_flow(flows[0]);
        begin_flow(flows[1]);
        approve_flow(flows[0]);
        redeem_flow(flows[0]);
        approve_flow(flows[1]);
        redeem_flow(flows[1]);
    }

    catcher->stop();
    return recorder.snapshot();
}

}  // namespace mcpscan::lab
