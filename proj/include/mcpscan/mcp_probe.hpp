#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mcpscan/http.hpp"

namespace mcpscan::probe {

struct CandidateEndpoint {
    std::string url;
    std::string source_label;
};

enum class Transport { streamable_http, http_sse };
enum class AuthStatus { none, static_token, oauth };

const char* transport_name(Transport);
const char* auth_status_name(AuthStatus);

struct McpEndpoint {
    std::string url;
    Transport transport = Transport::streamable_http;
    std::string protocol_version;
    std::string server_name;
    std::string server_version;
    std::set<std::string> capabilities;  // tools / resources / prompts
    AuthStatus auth_status = AuthStatus::none;
    std::string challenged_request;  // which request drew the auth challenge, if any
};

enum class HandshakeOutcome { valid_mcp, auth_challenge, not_mcp, unreachable };
const char* handshake_outcome_name(HandshakeOutcome);

struct HandshakeResult {
    HandshakeOutcome outcome = HandshakeOutcome::unreachable;
    std::optional<int> http_status;
    std::optional<std::string> www_authenticate;
    std::string body_excerpt;  // bounded evidence
    Transport transport = Transport::streamable_http;
    std::string protocol_version;
    std::string server_name;
    std::string server_version;
    std::set<std::string> capabilities;
    std::optional<std::string> session_id;  // Mcp-Session-Id to echo on follow-ups
};

struct ProbeOptions {
    std::string protocol_version = "2025-11-25";
    net::Timeouts timeouts;
    int max_redirect_hops = 5;
    int retries = 0;
    std::string client_name = "mcpscan";
    std::string client_version;
};

class InputError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

HandshakeResult initialize_handshake(net::Client& client, const CandidateEndpoint& endpoint,
                                     const std::optional<std::string>& bearer_token,
                                     const ProbeOptions& options = {});

struct AuthClassification {
    bool ok = false;
    AuthStatus status = AuthStatus::none;
    std::string challenged_request;  // "initialize" or "tools/list", empty if never challenged
    HandshakeResult handshake;
    std::string error;  // set when the endpoint is excluded (unreachable etc.)
};

AuthClassification classify_auth(net::Client& client, const CandidateEndpoint& endpoint,
                                 const ProbeOptions& options = {});

struct Rejection {
    CandidateEndpoint candidate;
    HandshakeOutcome outcome;
    std::string reason;
};

struct ValidationResult {
    std::vector<McpEndpoint> endpoints;
    std::vector<Rejection> rejections;
};

// Candidates are deduplicated by (host, port) before probing. Each
// candidate's probe sequence is sequential; candidates run concurrently up
// to `concurrency`, throttled per host by `rate_limit` requests/second
// (loopback exempt). Per-candidate failures are logged, never fatal.
ValidationResult validate_candidates(const std::vector<CandidateEndpoint>& candidates,
                                     int concurrency, double rate_limit,
                                     const ProbeOptions& options = {});

// One JSON object per candidate: {url, outcome, auth_status?, transport?,
// protocol_version?, evidence}.
std::string validation_to_jsonl(const ValidationResult& result);

std::vector<CandidateEndpoint> read_target_file(const std::string& path);

}  // namespace mcpscan::probe
