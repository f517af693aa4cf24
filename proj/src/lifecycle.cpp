#include "mcpscan/lifecycle.hpp"

#include <algorithm>
#include <map>

#include "mcpscan/strings.hpp"

namespace mcpscan::flows {

using nlohmann::ordered_json;

const char* binding_name(Binding b) {
    switch (b) {
        case Binding::by_state: return "by_state";
        case Binding::by_code: return "by_code";
        case Binding::by_order: return "by_order";
    }
    return "by_order";
}

namespace {

enum class Role { auth_request, callback, token_exchange, other };

Role role_of(const capture::OAuthParamSet& p) {
    if (p.token_endpoint_hit) return Role::token_exchange;
    if (p.code || p.error) return Role::callback;
    if (p.client_id || p.code_challenge || p.code_challenge_method || p.redirect_uri)
        return Role::auth_request;
    if (p.state) return Role::callback;  // stateful response without a code
    return Role::other;
}

constexpr long long kOrderWindowMs = 120'000;

struct Pending {
    size_t lifecycle_index;
    std::string session_tag;
    long long seq;
    long long timestamp;
    std::optional<std::string> state;
    bool consumed = false;
};

}  // namespace

std::vector<Lifecycle> reconstruct(const std::vector<capture::OAuthParamSet>& params,
                                   const std::vector<capture::Layer>& layers,
                                   const std::vector<ParamContext>& contexts,
                                   ReconstructionStats* stats) {
    std::vector<Lifecycle> out;
    std::vector<Pending> pending;
    ReconstructionStats st;
    st.params_in = params.size();

    const bool have_context = contexts.size() == params.size();

    // States appearing in more than one authorization request mark every
    // flow carrying them; replayed or constant states are themselves weak-
    // state evidence and the tie flag routes that to the detector.
    std::map<std::string, int> state_counts;
    for (const auto& p : params) {
        if (role_of(p) == Role::auth_request && p.state) state_counts[*p.state]++;
    }

    for (size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        const capture::Layer layer = i < layers.size() ? layers[i] : capture::Layer::unknown;
        const long long ts = have_context ? contexts[i].timestamp : 0;
        const std::string session = have_context ? contexts[i].session_tag : "";
        const Role role = role_of(p);

        switch (role) {
            case Role::auth_request: {
                Lifecycle lc;
                lc.layer = layer;
                lc.auth_request = p;
                lc.session_tag = session;
                if (p.state && state_counts[*p.state] > 1) lc.duplicate_state_tie = true;
                lc.binding = Binding::by_order;
                out.push_back(std::move(lc));
                pending.push_back(Pending{out.size() - 1, session, p.exchange_ref, ts, p.state});
                ++st.assigned;
                break;
            }
            case Role::callback: {
                // Duplicate observation of an already-linked callback (the
                // 302 Location and the subsequent GET describe one event).
                if (p.code) {
                    auto dup = std::find_if(out.begin(), out.end(), [&](const Lifecycle& lc) {
                        return lc.callback && lc.callback->code == p.code &&
                               lc.callback->state == p.state;
                    });
                    if (dup != out.end()) {
                        dup->extra_evidence.push_back(p.exchange_ref);
                        ++st.assigned;
                        break;
                    }
                }
                int match = -1;
                if (p.state) {
                    for (int j = static_cast<int>(pending.size()) - 1; j >= 0; --j) {
                        if (!pending[j].consumed && pending[j].state == p.state) {
                            match = j;
                            break;
                        }
                    }
                }
                if (match >= 0) {
                    pending[match].consumed = true;
                    Lifecycle& lc = out[pending[match].lifecycle_index];
                    lc.callback = p;
                    lc.binding = Binding::by_state;
                    ++st.assigned;
                    break;
                }
                // by_order fallback: nearest preceding unconsumed request in
                // the same session inside the correlation window.
                for (int j = static_cast<int>(pending.size()) - 1; j >= 0; --j) {
                    if (pending[j].consumed) continue;
                    const Lifecycle& cand = out[pending[j].lifecycle_index];
                    if (cand.auth_request && cand.auth_request->state && p.state) continue;
                    if (have_context) {
                        if (pending[j].session_tag != session) continue;
                        if (ts - pending[j].timestamp > kOrderWindowMs) continue;
                    }
                    match = j;
                    break;
                }
                if (match >= 0) {
                    pending[match].consumed = true;
                    Lifecycle& lc = out[pending[match].lifecycle_index];
                    lc.callback = p;
                    lc.binding = Binding::by_order;
                    ++st.assigned;
                    break;
                }
                Lifecycle lc;
                lc.layer = layer;
                lc.callback = p;
                lc.session_tag = session;
                lc.binding = p.code ? Binding::by_code : Binding::by_order;
                out.push_back(std::move(lc));
                ++st.assigned;
                break;
            }
            case Role::token_exchange: {
                auto it = std::find_if(out.begin(), out.end(), [&](const Lifecycle& lc) {
                    return lc.callback && lc.callback->code && p.code &&
                           *lc.callback->code == *p.code;
                });
                if (it != out.end()) {
                    if (it->token_exchange) {
                        it->extra_evidence.push_back(p.exchange_ref);  // replayed exchange
                    } else {
                        it->token_exchange = p;
                    }
                    ++st.assigned;
                    break;
                }
                Lifecycle lc;
                lc.layer = layer;
                lc.token_exchange = p;
                lc.binding = Binding::by_code;
                out.push_back(std::move(lc));
                ++st.assigned;
                break;
            }
            case Role::other:
                ++st.discarded;
                break;
        }
    }

    for (auto& lc : out) {
        lc.phase_coverage.p1 = lc.auth_request && lc.auth_request->client_id.has_value();
        lc.phase_coverage.p2 = lc.auth_request.has_value() || lc.callback.has_value();
        lc.phase_coverage.p3 = lc.token_exchange.has_value();
        // A flow that produced a callback bound by code alone keeps by_code.
        if (!lc.auth_request && lc.callback && lc.token_exchange) lc.binding = Binding::by_code;
    }

    if (stats) *stats = st;
    return out;
}

std::vector<Lifecycle> reconstruct_exchanges(const std::vector<capture::HttpExchange>& exchanges,
                                             const std::optional<Url>& target_origin,
                                             ReconstructionStats* stats) {
    std::vector<capture::OAuthParamSet> params;
    std::vector<capture::Layer> layers;
    std::vector<ParamContext> contexts;
    for (const auto& ex : exchanges) {
        auto p = capture::extract_oauth_params(ex);
        if (!p) continue;
        capture::Layer layer = capture::Layer::unknown;
        if (p->redirect_uri) {
            layer = capture::classify_layer(*p->redirect_uri);
            layer = capture::refine_layer(layer, *p, target_origin);
        }
        params.push_back(std::move(*p));
        layers.push_back(layer);
        contexts.push_back(ParamContext{ex.timestamp, ex.session_tag});
    }
    auto lifecycles = reconstruct(params, layers, contexts, stats);

    std::map<long long, const capture::HttpExchange*> by_seq;
    for (const auto& ex : exchanges) by_seq[ex.sequence_no] = &ex;
    for (auto& lc : lifecycles) {
        if (!lc.auth_request) continue;
        auto it = by_seq.find(lc.auth_request->exchange_ref);
        if (it != by_seq.end()) lc.auth_request_url = it->second->url;
    }
    return lifecycles;
}

// ---------------------------------------------------------------------------
// Nested state decoding

namespace {

constexpr int kMaxDecodeDepth = 3;
constexpr size_t kMaxDecodedBytes = 64 * 1024;

bool key_suggests_redirect(const std::string& key) {
    std::string k = str::to_lower(key);
    return k.find("redirect") != std::string::npos || k.find("callback") != std::string::npos ||
           k.find("return") != std::string::npos;
}

bool key_suggests_signature(const std::string& key) {
    std::string k = str::to_lower(key);
    return k == "sig" || k == "signature" || k == "hmac" || k == "mac" || k == "digest";
}

void finalize_context(NestedContext& ctx) {
    for (auto& [k, v] : ctx.decoded_fields.items()) {
        std::string value = v.is_string() ? v.get<std::string>() : v.dump();
        if (!ctx.nested_redirect_uri && key_suggests_redirect(k)) {
            ctx.nested_redirect_uri = value;
            ctx.redirect_field_key = k;
        }
        if (key_suggests_signature(k))
            ctx.integrity_marker = NestedContext::Integrity::signed_unverifiable;
    }
    if (!ctx.nested_redirect_uri) {
        for (auto& [k, v] : ctx.decoded_fields.items()) {
            if (!v.is_string()) continue;
            auto url = Url::parse(v.get<std::string>());
            if (url) {
                ctx.nested_redirect_uri = v.get<std::string>();
                ctx.redirect_field_key = k;
                break;
            }
        }
    }
}

// Query-string shaped key/value payload: k=v&k2=v2 with at least one
// non-empty key and either several pairs or a non-empty value.
std::optional<ordered_json> parse_form_kv(const std::string& s) {
    if (s.find('=') == std::string::npos) return std::nullopt;
    if (s.find('{') != std::string::npos) return std::nullopt;
    Query q = parse_query(s);
    if (q.empty()) return std::nullopt;
    size_t nonempty_values = 0;
    for (const auto& [k, v] : q) {
        if (k.empty()) return std::nullopt;
        if (!v.empty()) ++nonempty_values;
    }
    if (q.size() < 2 && nonempty_values == 0) return std::nullopt;
    ordered_json obj = ordered_json::object();
    for (const auto& [k, v] : q) {
        if (obj.contains(k)) return std::nullopt;  // duplicate keys do not round-trip
        obj[k] = v;
    }
    // Round-trip guard: canonical re-encode must reproduce the input.
    Query rq;
    for (auto& [k, v] : obj.items()) rq.emplace_back(k, v.get<std::string>());
    if (build_query(rq) != s) return std::nullopt;
    return obj;
}

bool decode_recursive(const std::string& s, int depth, std::vector<std::string>& chain,
                      NestedContext& ctx) {
    if (s.size() > kMaxDecodedBytes) return false;

    // Terminal: JSON object (compact round-trip required).
    {
        auto doc = ordered_json::parse(s, nullptr, false);
        if (doc.is_object() && !doc.empty() && doc.dump() == s) {
            chain.push_back("json");
            ctx.decoded_fields = doc;
            ctx.encoding_chain = chain;
            return true;
        }
    }

    if (depth >= kMaxDecodeDepth) return false;

    // Transport layer: percent-encoding.
    if (s.find('%') != std::string::npos) {
        bool malformed = false;
        std::string decoded = str::pct_decode(s, &malformed);
        if (!malformed && decoded != s && str::pct_encode(decoded) == s) {
            chain.push_back("urlencode");
            if (decode_recursive(decoded, depth + 1, chain, ctx)) return true;
            chain.pop_back();
        }
    }

    // Transport layer: base64url.
    if (str::looks_like_base64url(s)) {
        bool padded = false;
        auto decoded = str::base64url_decode(s, &padded);
        if (decoded && str::base64url_encode(*decoded, padded) == s) {
            chain.push_back("base64url");
            bool prev_padded = ctx.base64_padded;
            ctx.base64_padded = padded;
            if (decode_recursive(*decoded, depth + 1, chain, ctx)) return true;
            ctx.base64_padded = prev_padded;
            chain.pop_back();
        }
    }

    // Terminal: query-string key/value payload.
    if (auto kv = parse_form_kv(s)) {
        chain.push_back("urlencode");
        ctx.decoded_fields = *kv;
        ctx.encoding_chain = chain;
        return true;
    }

    return false;
}

}  // namespace

std::optional<NestedContext> decode_nested_state(const std::string& state) {
    if (state.empty()) return std::nullopt;
    NestedContext ctx;
    ctx.original = state;
    std::vector<std::string> chain;
    if (!decode_recursive(state, 0, chain, ctx)) return std::nullopt;
    finalize_context(ctx);
    // The contract is byte-exact re-encodability; anything else is opaque.
    if (encode_nested_state(ctx) != state) return std::nullopt;
    return ctx;
}

std::string encode_nested_state(const NestedContext& ctx) {
    // Innermost layer first: serialize the fields, then re-apply transports
    // outward (the chain records decode order, outermost first).
    std::string payload;
    if (ctx.encoding_chain.empty()) return ctx.original;
    const std::string& terminal = ctx.encoding_chain.back();
    if (terminal == "json") {
        payload = ctx.decoded_fields.dump();
    } else {  // urlencode terminal: kv form
        Query q;
        for (auto& [k, v] : ctx.decoded_fields.items())
            q.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
        payload = build_query(q);
    }
    for (int i = static_cast<int>(ctx.encoding_chain.size()) - 2; i >= 0; --i) {
        const std::string& layer = ctx.encoding_chain[i];
        if (layer == "base64url") {
            payload = str::base64url_encode(payload, ctx.base64_padded);
        } else if (layer == "urlencode") {
            payload = str::pct_encode(payload);
        } else if (layer == "json") {
            payload = ordered_json(payload).dump();
        }
    }
    return payload;
}

// ---------------------------------------------------------------------------
// Delegated chain linking

std::vector<DelegatedChain> link_delegated(const std::vector<Lifecycle>& lifecycles) {
    std::vector<DelegatedChain> chains;
    std::vector<size_t> l1_index;
    std::vector<const Lifecycle*> l2s;

    for (const auto& lc : lifecycles) {
        if (lc.layer == capture::Layer::l1_local_client || lc.layer == capture::Layer::unknown) {
            if (lc.layer == capture::Layer::l1_local_client) {
                chains.push_back(DelegatedChain{lc, std::nullopt, std::nullopt, false});
                l1_index.push_back(chains.size() - 1);
            }
        } else if (lc.layer == capture::Layer::l2_upstream_delegated) {
            l2s.push_back(&lc);
        }
    }

    auto seq_of = [](const std::optional<capture::OAuthParamSet>& p) -> std::optional<long long> {
        if (!p) return std::nullopt;
        return p->exchange_ref;
    };

    // Candidate parents: L1 flows whose request..callback window contains
    // the L2 authorization request. A decoded nested reference to the L1
    // callback (or any unique containment) settles the assignment; leftover
    // multi-candidate cases are resolved by elimination, one upstream hop
    // per local flow.
    struct L2Item {
        const Lifecycle* lc;
        std::optional<NestedContext> bridge;
        std::vector<size_t> candidates;  // chain indices
        bool placed = false;
    };
    std::vector<L2Item> items;
    for (const Lifecycle* l2 : l2s) {
        L2Item item{l2, std::nullopt, {}, false};
        auto l2_seq = seq_of(l2->auth_request);
        if (l2->auth_request && l2->auth_request->state)
            item.bridge = decode_nested_state(*l2->auth_request->state);

        for (size_t ci : l1_index) {
            const Lifecycle& l1 = chains[ci].l1;
            auto a = seq_of(l1.auth_request);
            auto b = seq_of(l1.callback);
            if (!a || !l2_seq) continue;
            bool contained = *l2_seq > *a && (!b || *l2_seq < *b);
            if (!contained) continue;
            if (item.bridge && item.bridge->nested_redirect_uri && l1.auth_request &&
                l1.auth_request->redirect_uri) {
                if (*item.bridge->nested_redirect_uri != *l1.auth_request->redirect_uri) {
                    // Nested routing disagrees; keep as weak candidate only
                    // if nothing else matches.
                    continue;
                }
            }
            item.candidates.push_back(ci);
        }
        items.push_back(std::move(item));
    }

    // Iterative elimination: place unique candidates, remove taken parents.
    bool progress = true;
    std::vector<bool> taken(chains.size(), false);
    while (progress) {
        progress = false;
        for (auto& item : items) {
            if (item.placed) continue;
            std::vector<size_t> open;
            for (size_t ci : item.candidates)
                if (!taken[ci]) open.push_back(ci);
            if (open.size() == 1) {
                size_t ci = open[0];
                chains[ci].l2 = *item.lc;
                chains[ci].bridge = item.bridge;
                taken[ci] = true;
                item.placed = true;
                progress = true;
            }
        }
    }
    // Whatever could not be placed uniquely marks every remaining candidate
    // parent ambiguous rather than guessing.
    for (auto& item : items) {
        if (item.placed) continue;
        for (size_t ci : item.candidates) {
            if (!taken[ci]) chains[ci].ambiguous_parent = true;
        }
    }
    return chains;
}

// ---------------------------------------------------------------------------
// JSON dumps

namespace {
ordered_json params_to_json(const capture::OAuthParamSet& p) {
    ordered_json j;
    auto put = [&](const char* key, const std::optional<std::string>& v) {
        if (v) j[key] = *v;
    };
    put("redirect_uri", p.redirect_uri);
    put("client_id", p.client_id);
    put("code_challenge", p.code_challenge);
    put("code_challenge_method", p.code_challenge_method);
    put("state", p.state);
    put("code", p.code);
    put("error", p.error);
    put("grant_type", p.grant_type);
    j["token_endpoint_hit"] = p.token_endpoint_hit;
    j["exchange_ref"] = p.exchange_ref;
    if (!p.raw_flagged.empty()) j["raw_flagged"] = p.raw_flagged;
    return j;
}
}  // namespace

ordered_json lifecycle_to_json(const Lifecycle& lc) {
    ordered_json j;
    j["layer"] = capture::layer_name(lc.layer);
    j["binding"] = binding_name(lc.binding);
    ordered_json phases = ordered_json::array();
    if (lc.phase_coverage.p1) phases.push_back("P1");
    if (lc.phase_coverage.p2) phases.push_back("P2");
    if (lc.phase_coverage.p3) phases.push_back("P3");
    j["phase_coverage"] = phases;
    j["duplicate_state_tie"] = lc.duplicate_state_tie;
    if (!lc.session_tag.empty()) j["session_tag"] = lc.session_tag;
    if (lc.auth_request) j["auth_request"] = params_to_json(*lc.auth_request);
    if (lc.callback) j["callback"] = params_to_json(*lc.callback);
    if (lc.token_exchange) j["token_exchange"] = params_to_json(*lc.token_exchange);
    if (!lc.extra_evidence.empty()) j["extra_evidence"] = lc.extra_evidence;
    return j;
}

ordered_json chain_to_json(const DelegatedChain& chain) {
    ordered_json j;
    j["l1"] = lifecycle_to_json(chain.l1);
    if (chain.l2) j["l2"] = lifecycle_to_json(*chain.l2);
    if (chain.bridge) {
        ordered_json b;
        b["encoding_chain"] = chain.bridge->encoding_chain;
        b["decoded_fields"] = chain.bridge->decoded_fields;
        if (chain.bridge->nested_redirect_uri)
            b["nested_redirect_uri"] = *chain.bridge->nested_redirect_uri;
        switch (chain.bridge->integrity_marker) {
            case NestedContext::Integrity::none: b["integrity_marker"] = "none"; break;
            case NestedContext::Integrity::opaque: b["integrity_marker"] = "opaque"; break;
            case NestedContext::Integrity::signed_unverifiable:
                b["integrity_marker"] = "signed_unverifiable";
                break;
        }
        j["bridge"] = b;
    }
    j["ambiguous_parent"] = chain.ambiguous_parent;
    return j;
}

}  // namespace mcpscan::flows
