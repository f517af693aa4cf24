#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcpscan/url.hpp"

namespace mcpscan::capture {

using HeaderList = std::vector<std::pair<std::string, std::string>>;

// One observed HTTP request/response pair. sequence_no is strictly
// increasing within a capture; session_tag groups exchanges that belong to
// the same client connection or driven flow.
struct HttpExchange {
    long long sequence_no = 0;
    long long timestamp = 0;  // unix millis
    std::string method;
    std::string url;
    HeaderList request_headers;
    std::string request_body;
    int status = 0;
    HeaderList response_headers;
    std::string response_body;
    std::string session_tag;

    std::optional<std::string> request_header(std::string_view name) const;
    std::optional<std::string> response_header(std::string_view name) const;
};

// Append-only, thread-safe sink. Probes and the scripted lab client share
// one recorder per capture; sequence numbers are assigned on append.
class CaptureRecorder {
   public:
    long long append(HttpExchange ex);  // fills sequence_no/timestamp if unset
    std::vector<HttpExchange> snapshot() const;
    size_t size() const;

   private:
    mutable std::mutex mutex_;
    std::vector<HttpExchange> exchanges_;
    long long next_seq_ = 1;
};

// Security-relevant OAuth parameters extracted from one exchange.
// Extraction draws from the request line, form/JSON bodies, and the
// response Location header; a Location contributes only a completed
// authorization response (code/error plus state) so that navigational
// redirects do not fabricate authorization requests.
struct OAuthParamSet {
    std::optional<std::string> redirect_uri;
    std::optional<std::string> client_id;
    std::optional<std::string> code_challenge;
    std::optional<std::string> code_challenge_method;
    std::optional<std::string> state;
    std::optional<std::string> code;
    std::optional<std::string> error;
    std::optional<std::string> grant_type;
    bool token_endpoint_hit = false;
    long long exchange_ref = 0;
    std::vector<std::string> raw_flagged;  // keys kept raw due to bad encoding

    bool has_any() const;
};

enum class Layer { l1_local_client, l2_upstream_delegated, unknown };
const char* layer_name(Layer);

std::optional<OAuthParamSet> extract_oauth_params(const HttpExchange& ex);

// Loopback hosts and custom URI schemes are local-client callbacks (L1);
// http(s) callbacks to remote hosts belong to the upstream delegated layer.
Layer classify_layer(const std::string& redirect_uri);

// Same-deployment refinement: a callback pointing back at the scanned MCP
// server itself is delegated-layer traffic even when that server sits on a
// loopback or shared-domain address. No-op when target_origin is absent.
Layer refine_layer(Layer base, const OAuthParamSet& params,
                   const std::optional<Url>& target_origin);

struct IngestStats {
    size_t total = 0;
    size_t skipped = 0;
};

class IngestError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Reads either the native JSON-lines flow format or a HAR 1.2 document.
// Unparseable records are skipped and counted; more than 10% skipped is a
// hard error.
std::vector<HttpExchange> ingest_flow_log(const std::string& path, IngestStats* stats = nullptr);

void write_flow_log(const std::string& path, const std::vector<HttpExchange>& exchanges);
std::string exchange_to_json_line(const HttpExchange& ex);

}  // namespace mcpscan::capture
