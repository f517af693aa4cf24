#include "mcpscan/mcp_probe.hpp"

#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <thread>

#include "mcpscan/oauth.hpp"
#include "mcpscan/strings.hpp"

namespace mcpscan::probe {

using nlohmann::json;
using nlohmann::ordered_json;

const char* transport_name(Transport t) {
    return t == Transport::http_sse ? "http_sse" : "streamable_http";
}

const char* auth_status_name(AuthStatus s) {
    switch (s) {
        case AuthStatus::none: return "none";
        case AuthStatus::static_token: return "static_token";
        case AuthStatus::oauth: return "oauth";
    }
    return "none";
}

const char* handshake_outcome_name(HandshakeOutcome o) {
    switch (o) {
        case HandshakeOutcome::valid_mcp: return "valid_mcp";
        case HandshakeOutcome::auth_challenge: return "auth_challenge";
        case HandshakeOutcome::not_mcp: return "not_mcp";
        case HandshakeOutcome::unreachable: return "unreachable";
    }
    return "unreachable";
}

namespace {

std::atomic<long long> g_rpc_id{1};

constexpr size_t kExcerptBytes = 512;

std::string excerpt(const std::string& body) {
    return body.substr(0, kExcerptBytes);
}

// First `data:` payload of an SSE stream.
std::optional<std::string> sse_first_data(const std::string& body) {
    std::string data;
    for (const auto& raw_line : str::split(body, '\n')) {
        std::string line = str::trim(raw_line);
        if (line.rfind("data:", 0) == 0) {
            if (!data.empty()) data += "\n";
            data += str::trim(line.substr(5));
        } else if (line.empty() && !data.empty()) {
            break;  // end of first event
        }
    }
    if (data.empty()) return std::nullopt;
    return data;
}

struct RpcReply {
    bool valid = false;      // structurally valid JSON-RPC reply to our id
    json result;             // the "result" member when present
    Transport transport = Transport::streamable_http;
};

RpcReply parse_rpc_response(const net::Response& res, long long expect_id) {
    RpcReply out;
    std::string payload = res.body;
    auto ct = res.header("Content-Type");
    if (ct && str::icontains(*ct, "text/event-stream")) {
        out.transport = Transport::http_sse;
        auto data = sse_first_data(res.body);
        if (!data) return out;
        payload = *data;
    }
    auto doc = json::parse(payload, nullptr, false);
    if (!doc.is_object()) return out;
    if (doc.value("jsonrpc", "") != "2.0") return out;
    if (!doc.contains("id") || !doc["id"].is_number_integer() ||
        doc["id"].get<long long>() != expect_id)
        return out;
    if (!doc.contains("result") || !doc["result"].is_object()) return out;
    out.valid = true;
    out.result = doc["result"];
    return out;
}

net::Request make_rpc_request(const std::string& url, const std::string& method, json params,
                              long long id, const std::optional<std::string>& bearer,
                              const std::optional<std::string>& session_id) {
    json body = {{"jsonrpc", "2.0"}, {"id", id}, {"method", method}, {"params", std::move(params)}};
    net::Request req;
    req.method = "POST";
    req.url = url;
    req.content_type = "application/json";
    req.headers.emplace_back("Accept", "application/json, text/event-stream");
    if (bearer) req.headers.emplace_back("Authorization", "Bearer " + *bearer);
    if (session_id) req.headers.emplace_back("Mcp-Session-Id", *session_id);
    req.body = body.dump();
    return req;
}

}  // namespace

HandshakeResult initialize_handshake(net::Client& client, const CandidateEndpoint& endpoint,
                                     const std::optional<std::string>& bearer_token,
                                     const ProbeOptions& options) {
    auto parsed = Url::parse(endpoint.url);
    if (!parsed || !parsed->is_http()) throw InputError("malformed target url: " + endpoint.url);

    HandshakeResult out;
    const long long id = g_rpc_id.fetch_add(1);
    json params = {
        {"protocolVersion", options.protocol_version},
        {"capabilities", json::object()},
        {"clientInfo",
         {{"name", options.client_name},
          {"version", options.client_version.empty() ? "0" : options.client_version}}},
    };
    net::Request req = make_rpc_request(endpoint.url, "initialize", params, id, bearer_token,
                                        std::nullopt);

    net::FollowResult fr;
    for (int attempt = 0; attempt <= options.retries; ++attempt) {
        fr = client.send_following(req, options.max_redirect_hops);
        if (fr.final.ok) break;
    }
    if (!fr.final.ok) {
        out.outcome = HandshakeOutcome::unreachable;
        out.body_excerpt = fr.final.error;
        return out;
    }

    const net::Response& res = fr.final;
    out.http_status = res.status;
    out.body_excerpt = excerpt(res.body);
    if (auto sid = res.header("Mcp-Session-Id")) out.session_id = *sid;

    if (res.status == 401 || res.status == 403) {
        out.outcome = HandshakeOutcome::auth_challenge;
        if (auto wa = res.header("WWW-Authenticate")) out.www_authenticate = *wa;
        return out;
    }
    if (res.status < 200 || res.status >= 300) {
        out.outcome = HandshakeOutcome::not_mcp;
        return out;
    }

    RpcReply reply = parse_rpc_response(res, id);
    if (!reply.valid || !reply.result.contains("protocolVersion")) {
        out.outcome = HandshakeOutcome::not_mcp;
        return out;
    }
    out.outcome = HandshakeOutcome::valid_mcp;
    out.transport = reply.transport;
    if (reply.result["protocolVersion"].is_string())
        out.protocol_version = reply.result["protocolVersion"].get<std::string>();
    if (reply.result.contains("serverInfo") && reply.result["serverInfo"].is_object()) {
        out.server_name = reply.result["serverInfo"].value("name", "");
        out.server_version = reply.result["serverInfo"].value("version", "");
    }
    if (reply.result.contains("capabilities") && reply.result["capabilities"].is_object()) {
        for (auto& [k, v] : reply.result["capabilities"].items()) {
            if (k == "tools" || k == "resources" || k == "prompts") out.capabilities.insert(k);
        }
    }
    return out;
}

namespace {

// Unauthenticated tools/list; success means the tool interface is exposed.
bool tools_list_open(net::Client& client, const CandidateEndpoint& endpoint,
                     const ProbeOptions& options, const std::optional<std::string>& session_id,
                     net::Response* raw_out) {
    const long long id = g_rpc_id.fetch_add(1);
    net::Request req =
        make_rpc_request(endpoint.url, "tools/list", json::object(), id, std::nullopt, session_id);
    auto fr = client.send_following(req, options.max_redirect_hops);
    if (raw_out) *raw_out = fr.final;
    if (!fr.final.ok || fr.final.status < 200 || fr.final.status >= 300) return false;
    RpcReply reply = parse_rpc_response(fr.final, id);
    return reply.valid && reply.result.contains("tools");
}

}  // namespace

AuthClassification classify_auth(net::Client& client, const CandidateEndpoint& endpoint,
                                 const ProbeOptions& options) {
    AuthClassification out;
    out.handshake = initialize_handshake(client, endpoint, std::nullopt, options);

    switch (out.handshake.outcome) {
        case HandshakeOutcome::unreachable:
            out.error = "endpoint unreachable; excluded from classification";
            return out;
        case HandshakeOutcome::not_mcp:
            out.error = "endpoint did not answer as an MCP server";
            return out;
        case HandshakeOutcome::valid_mcp: {
            net::Response tools_res;
            if (tools_list_open(client, endpoint, options, out.handshake.session_id, &tools_res)) {
                out.ok = true;
                out.status = AuthStatus::none;
                return out;
            }
            if (tools_res.ok && (tools_res.status == 401 || tools_res.status == 403)) {
                out.challenged_request = "tools/list";
                break;  // fall through to metadata resolution
            }
            // Tool interface neither open nor auth-challenged.
            out.error = "tools/list neither succeeded nor returned an auth challenge";
            return out;
        }
        case HandshakeOutcome::auth_challenge:
            out.challenged_request = "initialize";
            break;
    }

    // 401/403 seen: OAuth if an authorization server is discoverable,
    // otherwise a static token / API key deployment.
    auto disc = oauth::discover(client, endpoint.url);
    out.ok = true;
    out.status = disc.ok ? AuthStatus::oauth : AuthStatus::static_token;
    return out;
}

ValidationResult validate_candidates(const std::vector<CandidateEndpoint>& candidates,
                                     int concurrency, double rate_limit,
                                     const ProbeOptions& options) {
    ValidationResult result;
    if (candidates.empty()) return result;

    // Deduplicate by (host, effective port); first occurrence wins.
    std::vector<CandidateEndpoint> unique;
    {
        std::set<std::string> seen;
        for (const auto& c : candidates) {
            auto u = Url::parse(c.url);
            std::string key = u ? u->host_port() : c.url;
            if (seen.insert(key).second) unique.push_back(c);
        }
    }

    auto limiter = std::make_shared<net::RateLimiter>(rate_limit);
    std::mutex sink_mutex;
    std::atomic<size_t> next{0};

    auto worker = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= unique.size()) return;
            const CandidateEndpoint& cand = unique[i];

            net::Client client(options.timeouts);
            client.set_rate_limiter(limiter);

            McpEndpoint ep;
            std::optional<Rejection> rejection;
            try {
                auto cls = classify_auth(client, cand, options);
                if (!cls.ok) {
                    rejection = Rejection{cand, cls.handshake.outcome, cls.error};
                } else {
                    ep.url = cand.url;
                    ep.auth_status = cls.status;
                    ep.transport = cls.handshake.transport;
                    ep.protocol_version = cls.handshake.protocol_version;
                    ep.server_name = cls.handshake.server_name;
                    ep.server_version = cls.handshake.server_version;
                    ep.capabilities = cls.handshake.capabilities;
                    ep.challenged_request = cls.challenged_request;
                }
            } catch (const InputError& e) {
                rejection = Rejection{cand, HandshakeOutcome::not_mcp, e.what()};
            }

            std::lock_guard<std::mutex> lock(sink_mutex);
            if (rejection)
                result.rejections.push_back(std::move(*rejection));
            else
                result.endpoints.push_back(std::move(ep));
        }
    };

    int n_threads = std::max(1, std::min<int>(concurrency, static_cast<int>(unique.size())));
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    return result;
}

std::string validation_to_jsonl(const ValidationResult& result) {
    std::string out;
    for (const auto& ep : result.endpoints) {
        ordered_json j;
        j["url"] = ep.url;
        j["outcome"] = "validated";
        j["auth_status"] = auth_status_name(ep.auth_status);
        j["transport"] = transport_name(ep.transport);
        j["protocol_version"] = ep.protocol_version;
        ordered_json evidence;
        if (!ep.server_name.empty())
            evidence["server_info"] = ep.server_name + "/" + ep.server_version;
        if (!ep.challenged_request.empty()) evidence["challenged_request"] = ep.challenged_request;
        if (!ep.capabilities.empty())
            evidence["capabilities"] = std::vector<std::string>(ep.capabilities.begin(),
                                                                ep.capabilities.end());
        j["evidence"] = evidence;
        out += j.dump() + "\n";
    }
    for (const auto& r : result.rejections) {
        ordered_json j;
        j["url"] = r.candidate.url;
        j["outcome"] = handshake_outcome_name(r.outcome);
        j["evidence"] = r.reason;
        out += j.dump() + "\n";
    }
    return out;
}

std::vector<CandidateEndpoint> read_target_file(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw InputError("cannot open target file: " + path);
    std::vector<CandidateEndpoint> out;
    std::string line;
    while (std::getline(in, line)) {
        auto t = str::trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t comma = t.find(',');
        CandidateEndpoint c;
        if (comma == std::string::npos) {
            c.url = t;
        } else {
            c.url = str::trim(t.substr(0, comma));
            c.source_label = str::trim(t.substr(comma + 1));
        }
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace mcpscan::probe
