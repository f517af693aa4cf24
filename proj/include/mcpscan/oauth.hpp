#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcpscan/http.hpp"
#include "mcpscan/url.hpp"

namespace mcpscan::oauth {

struct ProtectedResourceMetadata {
    std::string resource;
    std::vector<std::string> authorization_servers;
    std::string raw;
    std::string fetched_from;
};

struct AuthServerMetadata {
    std::string issuer;
    std::string authorization_endpoint;
    std::string token_endpoint;
    std::optional<std::string> registration_endpoint;
    std::optional<std::vector<std::string>> code_challenge_methods_supported;
    std::string raw;
    std::string fetched_from;
};

enum class PkceMethod { s256, plain };

struct PkcePair {
    std::string verifier;   // 43..128 chars from the unreserved alphabet
    std::string challenge;  // S256: base64url(sha256(verifier)) unpadded
    PkceMethod method = PkceMethod::s256;

    const char* method_name() const { return method == PkceMethod::s256 ? "S256" : "plain"; }
};

struct ClientRegistration {
    std::string client_id;
    std::optional<std::string> client_secret;
    std::vector<std::string> redirect_uris;
    std::string registration_response_raw;
};

struct AuthorizationRequest {
    std::string endpoint;
    std::string client_id;
    std::optional<std::string> redirect_uri;
    std::optional<std::string> state;
    std::optional<std::string> code_challenge;
    std::optional<std::string> code_challenge_method;
    std::optional<std::string> scope;
    std::optional<std::string> resource;
    std::optional<std::string> response_type = "code";
    Query extra_params;
};

struct TokenResponse {
    std::string access_token;
    std::string token_type;
    std::optional<std::string> refresh_token;
    std::optional<long long> expires_in;
    std::string raw;
};

// Discovery walks: WWW-Authenticate resource_metadata hint -> protected
// resource metadata -> each advertised authorization server -> well-known
// fallbacks on the MCP origin itself. First complete metadata document wins.
struct DiscoveryResult {
    bool ok = false;
    std::optional<ProtectedResourceMetadata> resource_metadata;
    AuthServerMetadata auth_server;
    std::vector<std::string> attempted_urls;
    std::string error;
};

DiscoveryResult discover(net::Client& client, const std::string& mcp_url);

std::string compute_s256(std::string_view verifier);
PkcePair generate_pkce(PkceMethod method);

struct RegistrationOutcome {
    enum class Status { registered, rejected, transport_error, input_error };
    Status status = Status::transport_error;
    ClientRegistration registration;
    int http_status = 0;
    std::string body;
    std::string error;

    bool ok() const { return status == Status::registered; }
};

RegistrationOutcome register_client(net::Client& client, const AuthServerMetadata& meta,
                                    const std::vector<std::string>& redirect_uris,
                                    const std::string& client_name);

// Deterministic serialization; absent fields are omitted entirely, which is
// what the PKCE-strip and parameter-omission probes rely on.
std::string build_authorization_url(const AuthorizationRequest& req);

// Inverse of build_authorization_url over the fields it serializes.
std::optional<AuthorizationRequest> parse_authorization_url(const std::string& url);

struct TokenOutcome {
    enum class Status { ok, oauth_error, transport_error };
    Status status = Status::transport_error;
    TokenResponse token;
    std::string oauth_error;  // e.g. "invalid_grant"
    int http_status = 0;
    std::string body;
    std::string error;

    bool ok() const { return status == Status::ok; }
};

// The wire form of the token request, exposed so that a redeemed request
// can be replayed verbatim by the code-replay probe.
net::Request build_token_request(const AuthServerMetadata& meta, const std::string& code,
                                 const std::optional<std::string>& verifier,
                                 const ClientRegistration& reg, const std::string& redirect_uri);

TokenOutcome parse_token_response(const net::Response& res);

TokenOutcome exchange_code(net::Client& client, const AuthServerMetadata& meta,
                           const std::string& code, const std::optional<std::string>& verifier,
                           const ClientRegistration& reg, const std::string& redirect_uri);

}  // namespace mcpscan::oauth
