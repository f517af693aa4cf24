#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mcpscan/capture.hpp"

namespace mcpscan::lab {

enum class AuthMode { none, static_token, oauth };
const char* auth_mode_name(AuthMode);

// Mock deployment: MCP server + authorization server (+ upstream service in
// delegated mode) with each flaw independently toggleable. All issued
// artifacts (codes, states, tokens, client ids) derive deterministically
// from the seed.
struct FlawLabConfig {
    std::array<bool, 9> flags{};  // flags[0] is F1

    std::string f5_variant = "strip";  // strip | plain
    std::string f7_variant = "full";   // full | weak
    std::string f8_variant = "omit";   // omit | fixed | short

    bool delegated_mode = false;
    AuthMode auth_mode = AuthMode::oauth;

    int mcp_port = 0;       // 0 = pick a free port
    int auth_port = 0;
    int upstream_port = 0;

    uint64_t seed = 1;

    int authorize_hops = 0;         // redirects before /authorize validates
    bool gate_initialize = true;    // auth required for initialize, not just tools
    bool sse_transport = false;     // answer MCP requests as an SSE stream
    bool auto_fire_callback = false;  // issue the code without any consent step
    bool require_session_header = true;
    bool oidc_discovery_only = false;  // advertise metadata only at the OIDC path
    std::string scope = "mcp";

    bool flag(int n) const { return flags[static_cast<size_t>(n - 1)]; }
    void set_flag(int n, bool value) { flags[static_cast<size_t>(n - 1)] = value; }

    // Empty when valid; otherwise one message per violated constraint.
    std::vector<std::string> validate() const;

    std::string to_json() const;
    static std::optional<FlawLabConfig> from_json(const std::string& text, std::string* error);
};

struct LoggedRequest {
    long long seq = 0;
    std::string server_role;  // mcp | auth | upstream
    std::string method;
    std::string target;  // path with query
    capture::HeaderList headers;
    std::string body;
    int status = 0;
    std::string response_body;
};

class ConfigError : public std::invalid_argument {
   public:
    explicit ConfigError(const std::vector<std::string>& violations);
    const std::vector<std::string>& violations() const { return violations_; }

   private:
    std::vector<std::string> violations_;
};

class Lab {
   public:
    static std::unique_ptr<Lab> spawn(const FlawLabConfig& config);
    ~Lab();

    std::string mcp_url() const;     // the MCP endpoint (…/mcp)
    std::string mcp_origin() const;
    std::string auth_origin() const;
    std::optional<std::string> upstream_origin() const;
    const FlawLabConfig& config() const;

    std::vector<LoggedRequest> request_log() const;
    void clear_request_log();

    void stop();

    struct Impl;

   private:
    Lab() = default;
    std::unique_ptr<Impl> impl_;
};

inline std::unique_ptr<Lab> spawn_lab(const FlawLabConfig& config) { return Lab::spawn(config); }

enum class Script { plain_flow, delegated_flow, two_interleaved };

// Drives a complete headless client-side flow against the lab (consent
// auto-approved) and returns the exchanges as a capture. The client mirrors
// what the deployment advertises: it omits PKCE when no challenge method is
// published, uses plain when only plain is published, and applies the weak-
// state variant when F8 is seeded.
std::vector<capture::HttpExchange> scripted_session(Lab& lab, Script script);

}  // namespace mcpscan::lab
