#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "mcpscan/capture.hpp"

namespace mcpscan::flows {

enum class Binding { by_state, by_code, by_order };
const char* binding_name(Binding);

struct PhaseCoverage {
    bool p1 = false;  // client identity observed (auth request with client_id)
    bool p2 = false;  // authorization request / callback observed
    bool p3 = false;  // token exchange observed
};

// One correlated authorization flow: request -> callback -> token exchange.
struct Lifecycle {
    capture::Layer layer = capture::Layer::unknown;
    std::optional<capture::OAuthParamSet> auth_request;
    std::optional<capture::OAuthParamSet> callback;
    std::optional<capture::OAuthParamSet> token_exchange;
    Binding binding = Binding::by_order;
    PhaseCoverage phase_coverage;
    bool duplicate_state_tie = false;  // state value shared with another flow
    std::string session_tag;
    std::string auth_request_url;  // wire form of the authorization request, for replay
    std::vector<long long> extra_evidence;  // duplicate observations of the same event

    bool complete() const { return auth_request && callback && token_exchange; }
};

// Decoded routing context carried inside a state parameter. decoded_fields
// preserves key order so that re-encoding through encoding_chain reproduces
// the original byte string exactly; contexts that fail that round-trip are
// reported opaque instead.
struct NestedContext {
    std::vector<std::string> encoding_chain;  // outermost decode first
    nlohmann::ordered_json decoded_fields;    // object or kv map
    std::optional<std::string> nested_redirect_uri;
    std::string redirect_field_key;
    enum class Integrity { none, opaque, signed_unverifiable } integrity_marker = Integrity::none;
    std::string original;
    bool base64_padded = false;
};

struct DelegatedChain {
    Lifecycle l1;
    std::optional<Lifecycle> l2;
    std::optional<NestedContext> bridge;
    bool ambiguous_parent = false;
};

struct ReconstructionStats {
    size_t params_in = 0;
    size_t assigned = 0;
    size_t discarded = 0;
};

// Session/time context for the by_order fallback; parallel to the param
// list. When omitted, all items share one session and no time window.
struct ParamContext {
    long long timestamp = 0;
    std::string session_tag;
};

// Greedy correlation in capture order: callbacks bind to the latest
// unconsumed authorization request with an equal state (by_state), token
// exchanges bind by code, and stateless items fall back to the nearest
// preceding request in the same session within a 120s window (by_order).
std::vector<Lifecycle> reconstruct(const std::vector<capture::OAuthParamSet>& params,
                                   const std::vector<capture::Layer>& layers,
                                   const std::vector<ParamContext>& contexts = {},
                                   ReconstructionStats* stats = nullptr);

// Convenience: extract + layer-classify + reconstruct over raw exchanges.
std::vector<Lifecycle> reconstruct_exchanges(const std::vector<capture::HttpExchange>& exchanges,
                                             const std::optional<Url>& target_origin,
                                             ReconstructionStats* stats = nullptr);

std::vector<DelegatedChain> link_delegated(const std::vector<Lifecycle>& lifecycles);

std::optional<NestedContext> decode_nested_state(const std::string& state);

// Re-encodes the context's fields through its recorded encoding chain.
std::string encode_nested_state(const NestedContext& ctx);

nlohmann::ordered_json lifecycle_to_json(const Lifecycle& lc);
nlohmann::ordered_json chain_to_json(const DelegatedChain& chain);

}  // namespace mcpscan::flows
