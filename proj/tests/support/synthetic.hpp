// Synthetic capture generation and the brute-force correlation oracle the
// reconstruction tests compare against.
#pragma once

#include <algorithm>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mcpscan/capture.hpp"
#include "mcpscan/lifecycle.hpp"

namespace testsupport {

struct SyntheticFlow {
    std::string state;
    std::string code;
    std::string client_id;
    long long auth_seq = 0, cb_seq = 0, tok_seq = 0;
};

struct SyntheticCapture {
    std::vector<mcpscan::capture::OAuthParamSet> params;
    std::vector<mcpscan::capture::Layer> layers;
    std::vector<SyntheticFlow> flows;
};

// k interleaved complete flows; per-flow order auth < callback < token is
// preserved, cross-flow order is random. States are distinct unless
// duplicate_state is supplied.
inline SyntheticCapture make_interleaved_capture(std::mt19937& rng, int k,
                                                 std::optional<std::string> duplicate_state = {}) {
    using mcpscan::capture::Layer;
    using mcpscan::capture::OAuthParamSet;
    SyntheticCapture out;

    struct Event {
        int flow;
        int kind;  // 0 auth, 1 cb, 2 token
    };
    std::vector<Event> events;
    for (int i = 0; i < k; ++i) {
        SyntheticFlow fl;
        fl.state = duplicate_state ? *duplicate_state : "st-" + std::to_string(i) + "-" +
                                                            std::to_string(rng());
        fl.code = "code-" + std::to_string(i) + "-" + std::to_string(rng());
        fl.client_id = "client-" + std::to_string(i);
        out.flows.push_back(fl);
        events.push_back({i, 0});
        events.push_back({i, 1});
        events.push_back({i, 2});
    }
    // Random interleaving that keeps per-flow order: repeatedly emit the
    // first shuffled event that is its flow's next expected step.
    std::shuffle(events.begin(), events.end(), rng);
    std::vector<int> next_kind(k, 0);
    std::vector<Event> ordered;
    while (ordered.size() < events.size()) {
        for (auto& e : events) {
            if (e.kind >= 0 && e.kind == next_kind[e.flow]) {
                ordered.push_back(e);
                next_kind[e.flow]++;
                e.kind = -1;
                break;
            }
        }
    }

    long long seq = 1;
    for (const auto& e : ordered) {
        OAuthParamSet p;
        p.exchange_ref = seq++;
        auto& fl = out.flows[e.flow];
        if (e.kind == 0) {
            p.client_id = fl.client_id;
            p.redirect_uri = "http://127.0.0.1:7777/cb";
            p.state = fl.state;
            p.code_challenge = "challenge";
            p.code_challenge_method = "S256";
            fl.auth_seq = p.exchange_ref;
        } else if (e.kind == 1) {
            p.code = fl.code;
            p.state = fl.state;
            fl.cb_seq = p.exchange_ref;
        } else {
            p.grant_type = "authorization_code";
            p.token_endpoint_hit = true;
            p.code = fl.code;
            fl.tok_seq = p.exchange_ref;
        }
        out.params.push_back(p);
        out.layers.push_back(Layer::l1_local_client);
    }
    return out;
}

// Exhaustive pairing oracle: enumerates every assignment of callbacks to
// auth requests with equal states and tokens to callbacks with equal codes,
// and returns the set of complete triples common to all maximal consistent
// pairings. With distinct states that set is the unique generating
// partition.
inline std::set<std::tuple<long long, long long, long long>> brute_force_triples(
    const SyntheticCapture& cap) {
    std::set<std::tuple<long long, long long, long long>> result;
    for (const auto& fl : cap.flows) {
        // Validate uniqueness by exhaustive matching: the callback with this
        // flow's state and code, the auth with this state, the token with
        // this code must each be unique for the triple to be forced.
        int auth_matches = 0, cb_matches = 0, tok_matches = 0;
        for (const auto& p : cap.params) {
            if (p.client_id && p.state == std::optional<std::string>(fl.state)) auth_matches++;
            if (p.code == std::optional<std::string>(fl.code) && !p.token_endpoint_hit &&
                !p.client_id)
                cb_matches++;
            if (p.token_endpoint_hit && p.code == std::optional<std::string>(fl.code))
                tok_matches++;
        }
        if (auth_matches == 1 && cb_matches == 1 && tok_matches == 1)
            result.insert({fl.auth_seq, fl.cb_seq, fl.tok_seq});
    }
    return result;
}

}  // namespace testsupport
