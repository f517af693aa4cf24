#include "mcpscan/detectors.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <regex>

#include "mcpscan/crypto.hpp"
#include "mcpscan/http_deps.hpp"
#include "mcpscan/strings.hpp"

namespace mcpscan::detect {

using nlohmann::json;

const char* flaw_id(Flaw f) {
    static const char* ids[] = {"F1", "F2", "F3", "F4", "F5", "F6", "F7", "F8", "F9"};
    return ids[static_cast<int>(f) - 1];
}

const char* flaw_name(Flaw f) {
    switch (f) {
        case Flaw::f1: return "Malicious DCR Binding";
        case Flaw::f2: return "Blind Client Trust";
        case Flaw::f3: return "Layer Inconsistency";
        case Flaw::f4: return "Nested Context Pollution";
        case Flaw::f5: return "PKCE Downgrade";
        case Flaw::f6: return "Consent Page Bypass";
        case Flaw::f7: return "Open Redirect";
        case Flaw::f8: return "Weak State";
        case Flaw::f9: return "Code Replay";
    }
    return "";
}

Category category_of(Flaw f) {
    switch (f) {
        case Flaw::f1:
        case Flaw::f2: return Category::c1;
        case Flaw::f3:
        case Flaw::f4: return Category::c2;
        case Flaw::f5:
        case Flaw::f6: return Category::c3;
        default: return Category::c4;
    }
}

const char* category_id(Category c) {
    static const char* ids[] = {"C1", "C2", "C3", "C4"};
    return ids[static_cast<int>(c) - 1];
}

const char* category_name(Category c) {
    switch (c) {
        case Category::c1: return "Dynamic Client Registration Flaws";
        case Category::c2: return "Delegated Authorization Flaws";
        case Category::c3: return "Open Client Environment Flaws";
        case Category::c4: return "Common OAuth Misconfigurations";
    }
    return "";
}

const char* evidence_level_name(EvidenceLevel e) {
    switch (e) {
        case EvidenceLevel::passive: return "passive";
        case EvidenceLevel::active: return "active";
        case EvidenceLevel::ui_assisted: return "ui_assisted";
    }
    return "passive";
}

const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::vulnerable: return "vulnerable";
        case Verdict::secure: return "secure";
        case Verdict::inconclusive: return "inconclusive";
        case Verdict::needs_human: return "needs_human";
    }
    return "inconclusive";
}

Finding make_finding(Flaw flaw, EvidenceLevel level, Verdict verdict, std::string detail) {
    Finding f;
    f.flaw = flaw;
    f.evidence_level = level;
    f.verdict = verdict;
    f.detail = std::move(detail);
    return f;
}

bool ResponseClassifier::looks_like_proceed(const net::Response& res) const {
    if (!res.ok) return false;
    if (res.status != 200) return false;
    for (const auto& m : error_markers) {
        if (str::icontains(res.body, m)) return false;
    }
    for (const auto& m : proceed_markers) {
        if (str::icontains(res.body, m)) return true;
    }
    return false;
}

bool ResponseClassifier::looks_like_rejection(const net::Response& res) const {
    if (!res.ok) return false;
    if (res.status >= 400) return true;
    for (const auto& m : error_markers) {
        if (str::icontains(res.body, m)) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// CallbackCatcher

struct CallbackCatcher::Impl {
    httplib::Server server;
    std::thread thread;
    std::string host;
    int port = 0;
    mutable std::mutex mutex;
    std::vector<Entry> entries;
    bool running = false;
};

std::unique_ptr<CallbackCatcher> CallbackCatcher::start(
    const std::string& bind_host, int port, const std::vector<std::string>& declared_hosts) {
    bool declared = std::any_of(declared_hosts.begin(), declared_hosts.end(),
                                [&](const std::string& h) { return str::iequals(h, bind_host); });
    if (!is_loopback_host(bind_host) && !declared) {
        throw std::invalid_argument("callback catcher refuses non-declared address: " + bind_host);
    }

    auto catcher = std::unique_ptr<CallbackCatcher>(new CallbackCatcher());
    catcher->impl_ = std::make_unique<Impl>();
    Impl* impl = catcher->impl_.get();
    impl->host = bind_host;

    impl->server.Get(".*", [impl](const httplib::Request& req, httplib::Response& res) {
        Entry entry;
        entry.timestamp = str::now_ms();
        std::string url = "http://" + impl->host + ":" + std::to_string(impl->port) + req.target;
        entry.url = url;
        for (const auto& [k, v] : req.headers) entry.headers.emplace_back(k, v);
        {
            std::lock_guard<std::mutex> lock(impl->mutex);
            impl->entries.push_back(std::move(entry));
        }
        res.set_content("<html><body>Authorization response received.</body></html>",
                        "text/html");
    });

    int bound = port == 0 ? impl->server.bind_to_any_port(bind_host)
                          : (impl->server.bind_to_port(bind_host, port) ? port : -1);
    if (bound <= 0) throw std::runtime_error("callback catcher cannot bind " + bind_host);
    impl->port = bound;
    impl->running = true;
    impl->thread = std::thread([impl] { impl->server.listen_after_bind(); });
    impl->server.wait_until_ready();
    return catcher;
}

CallbackCatcher::~CallbackCatcher() { stop(); }

void CallbackCatcher::stop() {
    if (!impl_ || !impl_->running) return;
    impl_->running = false;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::string CallbackCatcher::base_url() const {
    return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

std::string CallbackCatcher::url_for(std::string_view path) const {
    return base_url() + std::string(path);
}

std::string CallbackCatcher::external_probe_url(std::string_view path) const {
    // TEST-NET-3 address: reserved for documentation, guaranteed non-routable,
    // and unmistakably outside any loopback allowlist.
    return "http://203.0.113.7:44444" + std::string(path);
}

std::vector<CallbackCatcher::Entry> CallbackCatcher::entries() const {
    std::lock_guard<std::mutex> lock(impl_->mutex);
    return impl_->entries;
}

std::vector<CallbackCatcher::Entry> CallbackCatcher::entries_for(std::string_view prefix) const {
    std::vector<Entry> out;
    for (const auto& e : entries()) {
        auto url = Url::parse(e.url);
        if (url && url->path.rfind(std::string(prefix), 0) == 0) out.push_back(e);
    }
    return out;
}

std::unique_ptr<CallbackCatcher> run_callback_catcher(const std::string& address,
                                                      const std::vector<std::string>& declared) {
    std::string host = address;
    int port = 0;
    if (auto colon = address.rfind(':'); colon != std::string::npos && address.find(']') == std::string::npos) {
        host = address.substr(0, colon);
        port = std::stoi(address.substr(colon + 1));
    }
    if (host.empty()) host = "127.0.0.1";
    return CallbackCatcher::start(host, port, declared);
}

// ---------------------------------------------------------------------------
// Passive rules

Finding check_f3_layer_inconsistency(const flows::DelegatedChain& chain) {
    Finding f = make_finding(Flaw::f3, EvidenceLevel::passive, Verdict::inconclusive, "");
    if (!chain.l2 || !chain.l2->auth_request) {
        f.detail = "no upstream authorization request observed";
        return f;
    }
    if (!chain.l1.auth_request) {
        f.detail = "local-layer authorization request not observed";
        return f;
    }
    const bool l1_pkce = chain.l1.auth_request->code_challenge.has_value();
    const bool l2_pkce = chain.l2->auth_request->code_challenge.has_value();
    f.evidence.ref(chain.l1.auth_request->exchange_ref);
    f.evidence.ref(chain.l2->auth_request->exchange_ref);
    if (l1_pkce && !l2_pkce) {
        f.verdict = Verdict::vulnerable;
        f.detail = "PKCE enforced on the local layer but missing from the upstream request";
    } else if (l1_pkce && l2_pkce) {
        f.verdict = Verdict::secure;
        f.detail = "PKCE present on both authorization layers";
    } else {
        f.verdict = Verdict::inconclusive;
        f.detail = "local layer carries no code_challenge; cross-layer consistency not assessable";
    }
    return f;
}

Finding check_f5_passive(const flows::Lifecycle& lc) {
    Finding f = make_finding(Flaw::f5, EvidenceLevel::passive, Verdict::inconclusive, "");
    if (!lc.auth_request) {
        f.detail = "no authorization request observed";
        return f;
    }
    f.evidence.ref(lc.auth_request->exchange_ref);
    const bool accepted = lc.callback.has_value();
    if (accepted) f.evidence.ref(lc.callback->exchange_ref);

    const bool missing = !lc.auth_request->code_challenge.has_value();
    const bool plain = lc.auth_request->code_challenge_method &&
                       str::iequals(*lc.auth_request->code_challenge_method, "plain");
    if (accepted && (missing || plain)) {
        f.verdict = Verdict::vulnerable;
        f.sub_verdict = missing ? "missing" : "plain";
        f.detail = missing ? "flow completed without any code_challenge"
                           : "flow completed with the plain code_challenge_method";
    } else if (missing || plain) {
        f.verdict = Verdict::inconclusive;
        f.detail = "weak PKCE parameters observed but the flow did not complete";
    } else {
        f.verdict = Verdict::secure;
        f.detail = "observed flow used S256; active downgrade probe still advisable";
    }
    return f;
}

bool state_is_weak(const std::string& state) {
    if (state.size() < 8) return true;
    return str::entropy_bits(state) < 32.0;
}

Finding check_f8_weak_state(const std::vector<flows::Lifecycle>& lifecycles) {
    Finding f = make_finding(Flaw::f8, EvidenceLevel::passive, Verdict::inconclusive, "");
    std::vector<const flows::Lifecycle*> with_auth;
    for (const auto& lc : lifecycles)
        if (lc.auth_request) with_auth.push_back(&lc);
    if (with_auth.empty()) {
        f.detail = "no authorization requests observed";
        return f;
    }

    std::map<std::string, int> seen;
    for (const auto* lc : with_auth)
        if (lc->auth_request->state) seen[*lc->auth_request->state]++;

    for (const auto* lc : with_auth) {
        const auto& req = *lc->auth_request;
        if (!req.state) {
            f.verdict = Verdict::vulnerable;
            f.sub_verdict = "missing";
            f.detail = "authorization request sent without a state parameter";
            f.evidence.ref(req.exchange_ref);
            return f;
        }
        if (seen[*req.state] > 1 || lc->duplicate_state_tie) {
            f.verdict = Verdict::vulnerable;
            f.sub_verdict = "reused";
            f.detail = "state value reused across distinct authorization flows";
            f.evidence.ref(req.exchange_ref);
            return f;
        }
        if (state_is_weak(*req.state)) {
            f.verdict = Verdict::vulnerable;
            f.sub_verdict = "low_entropy";
            f.detail = "state fails the unpredictability heuristic (len>=8, >=32 bits)";
            f.evidence.ref(req.exchange_ref);
            return f;
        }
    }
    f.verdict = Verdict::secure;
    f.detail = "all observed states present, distinct, and unpredictable";
    for (const auto* lc : with_auth) f.evidence.ref(lc->auth_request->exchange_ref);
    return f;
}

// ---------------------------------------------------------------------------
// Shared flow driver

namespace {

std::optional<std::string> parse_hidden_input(const std::string& html, const std::string& name) {
    std::regex re("<input[^>]*name=\"" + name + "\"[^>]*value=\"([^\"]*)\"");
    std::smatch m;
    if (std::regex_search(html, m, re)) return m[1].str();
    std::regex re2("<input[^>]*value=\"([^\"]*)\"[^>]*name=\"" + name + "\"");
    if (std::regex_search(html, m, re2)) return m[1].str();
    return std::nullopt;
}

std::optional<std::string> parse_form_action(const std::string& html) {
    static const std::regex re("<form[^>]*action=\"([^\"]*)\"");
    std::smatch m;
    if (std::regex_search(html, m, re)) return m[1].str();
    return std::nullopt;
}

struct LocationParams {
    std::optional<std::string> code;
    std::optional<std::string> state;
    std::optional<std::string> error;
};

LocationParams authorization_response_params(const std::string& location) {
    LocationParams out;
    std::string query;
    if (auto url = Url::parse(location)) {
        query = url->query.empty() ? url->fragment : url->query;
    } else if (auto q = location.find('?'); q != std::string::npos) {
        query = location.substr(q + 1);
    }
    Query parsed = parse_query(query);
    out.code = query_get(parsed, "code");
    out.state = query_get(parsed, "state");
    out.error = query_get(parsed, "error");
    return out;
}

}  // namespace

AuthDriveResult drive_authorization(net::Client& client, const std::string& authorization_url,
                                    const std::string& expected_redirect_uri,
                                    const ProbeBudget& budget,
                                    const ResponseClassifier& classifier, bool complete_consent) {
    AuthDriveResult out;
    net::Request current;
    current.url = authorization_url;
    int hops_used = 0;

    auto is_expected_target = [&](const std::string& resolved) {
        if (expected_redirect_uri.empty()) return true;
        return resolved.rfind(expected_redirect_uri, 0) == 0;
    };

    for (int step = 0; step < 32; ++step) {
        net::Response res = client.send(current);
        out.http_status = res.status;
        if (!res.ok) {
            out.stage = AuthDriveResult::Stage::unreachable;
            out.evidence.note("transport error at " + current.url + ": " + res.error);
            return out;
        }

        if (res.status >= 300 && res.status < 400) {
            auto loc = res.header("Location").value_or("");
            auto base = Url::parse(current.url);
            std::string resolved = base ? net::resolve_location(*base, loc) : loc;
            LocationParams params = authorization_response_params(resolved);
            if ((params.code || params.error) && is_expected_target(resolved)) {
                out.final_location = resolved;
                out.code = params.code;
                out.state = params.state;
                out.evidence.note("authorization response redirect to " + resolved);
                if (params.error) {
                    out.stage = AuthDriveResult::Stage::error_response;
                    return out;
                }
                out.stage = AuthDriveResult::Stage::code_issued;
                // Deliver to loopback receivers we own so the catcher log
                // carries the proof; anything else is never contacted.
                if (auto target = Url::parse(resolved);
                    target && target->is_http() && is_loopback_host(target->host)) {
                    net::Request deliver;
                    deliver.url = resolved;
                    client.send(deliver);
                }
                return out;
            }
            if (hops_used >= budget.max_redirect_hops) {
                out.stage = AuthDriveResult::Stage::truncated;
                out.evidence.note("redirect chain still active after " +
                                  std::to_string(hops_used) + " hops; stopping per budget");
                return out;
            }
            ++hops_used;
            net::Request next;
            next.url = resolved;
            current = next;
            continue;
        }

        if (res.status == 200) {
            if (classifier.looks_like_rejection(res)) {
                out.stage = AuthDriveResult::Stage::rejected_at_authorize;
                out.evidence.note("authorization endpoint rejected the request (200+error body)");
                return out;
            }
            if (!classifier.looks_like_proceed(res)) {
                out.stage = AuthDriveResult::Stage::rejected_at_authorize;
                out.evidence.note("unclassified 200 response; treated as not proceeding");
                return out;
            }
            out.consent_html = res.body;
            if (!complete_consent) {
                out.stage = AuthDriveResult::Stage::consent_shown;
                return out;
            }
            auto request_id = parse_hidden_input(res.body, "request_id");
            auto action = parse_form_action(res.body);
            if (!request_id || !action) {
                out.stage = AuthDriveResult::Stage::consent_shown;
                out.evidence.note("consent form not automatable; stopping at consent page");
                return out;
            }
            auto base = Url::parse(current.url);
            net::Request post;
            post.method = "POST";
            post.url = base ? net::resolve_location(*base, *action) : *action;
            post.content_type = "application/x-www-form-urlencoded";
            post.body = build_query({{"request_id", *request_id}, {"action", "approve"}});
            current = post;
            continue;
        }

        out.stage = AuthDriveResult::Stage::rejected_at_authorize;
        out.evidence.note("authorization endpoint answered HTTP " + std::to_string(res.status));
        return out;
    }
    out.stage = AuthDriveResult::Stage::truncated;
    out.evidence.note("flow did not settle within the step limit");
    return out;
}

// ---------------------------------------------------------------------------
// Active probes

namespace {

std::string random_state() { return crypto::random_token() + crypto::random_token(); }

oauth::AuthorizationRequest base_request(const oauth::AuthServerMetadata& meta,
                                         const std::string& client_id,
                                         const std::string& redirect_uri) {
    oauth::AuthorizationRequest req;
    req.endpoint = meta.authorization_endpoint;
    req.client_id = client_id;
    req.redirect_uri = redirect_uri;
    req.state = random_state();
    return req;
}

}  // namespace

Finding probe_f1_malicious_dcr(net::Client& client, const oauth::AuthServerMetadata& meta,
                               CallbackCatcher& catcher, const ProbeBudget& budget,
                               const ResponseClassifier& classifier) {
    Finding f = make_finding(Flaw::f1, EvidenceLevel::active, Verdict::inconclusive, "");
    if (budget.dry_run) {
        f.detail = "dry run: registration probe not sent";
        return f;
    }
    if (!meta.registration_endpoint) {
        f.detail = "no registration endpoint advertised";
        return f;
    }

    const std::string evil = catcher.external_probe_url("/cb/f1");
    auto reg = oauth::register_client(client, meta, {evil}, "mcpscan-f1-probe");
    if (reg.status == oauth::RegistrationOutcome::Status::transport_error) {
        f.detail = "registration endpoint unreachable: " + reg.error;
        return f;
    }
    if (reg.status == oauth::RegistrationOutcome::Status::rejected) {
        f.verdict = Verdict::secure;
        f.detail = "registration with a non-local redirect_uri was rejected";
        f.evidence.note("registration rejected with HTTP " + std::to_string(reg.http_status) +
                        ": " + reg.body.substr(0, 200));
        return f;
    }

    f.evidence.note("registration accepted attacker redirect_uri " + evil +
                    "; issued client_id=" + reg.registration.client_id);
    auto req = base_request(meta, reg.registration.client_id, evil);
    auto pkce = oauth::generate_pkce(oauth::PkceMethod::s256);
    req.code_challenge = pkce.challenge;
    req.code_challenge_method = "S256";
    auto drive = drive_authorization(client, oauth::build_authorization_url(req), evil, budget,
                                     classifier, /*complete_consent=*/false);
    for (auto& line : drive.evidence.transcript) f.evidence.note(line);

    switch (drive.stage) {
        case AuthDriveResult::Stage::consent_shown:
        case AuthDriveResult::Stage::code_issued:
            f.verdict = Verdict::vulnerable;
            f.detail = "authorization request with the registered attacker callback proceeded";
            break;
        case AuthDriveResult::Stage::rejected_at_authorize:
        case AuthDriveResult::Stage::error_response:
            f.verdict = Verdict::secure;
            f.detail = "registration succeeded but the authorization request was rejected";
            break;
        case AuthDriveResult::Stage::truncated:
            f.detail = "redirect chain truncated by hop budget before a decision was visible";
            break;
        case AuthDriveResult::Stage::unreachable:
            f.detail = "authorization endpoint unreachable";
            break;
    }
    return f;
}

Finding probe_f2_blind_client_trust(net::Client& client, const oauth::AuthServerMetadata& meta,
                                    const std::optional<flows::Lifecycle>& observed_baseline,
                                    const std::optional<std::string>& legit_redirect_uri,
                                    const ProbeBudget& budget,
                                    const ResponseClassifier& classifier) {
    Finding f = make_finding(Flaw::f2, EvidenceLevel::active, Verdict::inconclusive, "");
    if (budget.dry_run) {
        f.detail = "dry run: probe not sent";
        return f;
    }
    const std::string spoofed = "scnr-" + str::hex_encode(crypto::random_bytes(8));
    std::string redirect_uri;
    if (observed_baseline && observed_baseline->auth_request &&
        observed_baseline->auth_request->redirect_uri) {
        redirect_uri = *observed_baseline->auth_request->redirect_uri;
    } else if (legit_redirect_uri) {
        redirect_uri = *legit_redirect_uri;
    } else {
        f.detail = "no baseline authorization request observed or constructible";
        return f;
    }

    auto req = base_request(meta, spoofed, redirect_uri);
    auto pkce = oauth::generate_pkce(oauth::PkceMethod::s256);
    req.code_challenge = pkce.challenge;
    req.code_challenge_method = "S256";
    auto drive = drive_authorization(client, oauth::build_authorization_url(req), redirect_uri,
                                     budget, classifier, /*complete_consent=*/false);
    f.evidence.note("spoofed client_id=" + spoofed);
    for (auto& line : drive.evidence.transcript) f.evidence.note(line);

    switch (drive.stage) {
        case AuthDriveResult::Stage::consent_shown:
        case AuthDriveResult::Stage::code_issued:
            f.verdict = Verdict::vulnerable;
            f.detail = "authorization server proceeded for an unregistered client_id";
            break;
        case AuthDriveResult::Stage::rejected_at_authorize:
        case AuthDriveResult::Stage::error_response:
            f.verdict = Verdict::secure;
            f.detail = "unregistered client_id rejected";
            break;
        case AuthDriveResult::Stage::truncated:
            f.detail = "redirect chain truncated by hop budget before a decision was visible";
            break;
        case AuthDriveResult::Stage::unreachable:
            f.detail = "authorization endpoint unreachable";
            break;
    }
    return f;
}

namespace {

std::optional<std::string> replace_query_param(const std::string& url, const std::string& key,
                                               const std::string& value) {
    auto parsed = Url::parse(url);
    if (!parsed) return std::nullopt;
    Query q = parse_query(parsed->query);
    bool replaced = false;
    for (auto& [k, v] : q) {
        if (k == key) {
            v = value;
            replaced = true;
        }
    }
    if (!replaced) q.emplace_back(key, value);
    parsed->query = build_query(q);
    return parsed->str();
}

}  // namespace

Finding probe_f4_nested_pollution(net::Client& client, const flows::DelegatedChain& chain,
                                  CallbackCatcher& catcher, const ProbeBudget& budget,
                                  const ResponseClassifier& classifier) {
    Finding f = make_finding(Flaw::f4, EvidenceLevel::active, Verdict::inconclusive, "");
    if (budget.dry_run) {
        f.detail = "dry run: probe not sent";
        return f;
    }
    if (!chain.l2 || !chain.l2->auth_request || chain.l2->auth_request_url.empty()) {
        f.detail = "no replayable upstream authorization request in the chain";
        return f;
    }
    const std::string catcher_url = catcher.url_for("/cb/f4");
    std::string tampered_state;
    bool targeted = false;

    if (chain.bridge && chain.bridge->nested_redirect_uri) {
        flows::NestedContext ctx = *chain.bridge;
        ctx.decoded_fields[ctx.redirect_field_key] = catcher_url;
        tampered_state = flows::encode_nested_state(ctx);
        targeted = true;
        f.evidence.note("re-encoded nested state with redirect field '" + ctx.redirect_field_key +
                        "' pointed at " + catcher_url);
    } else if (chain.l2->auth_request->state) {
        // Opaque bridging state: inject a synthesized nested payload. A
        // handler that decodes whatever looks nested will forward to the
        // catcher; a server-side map rejects the unknown value.
        nlohmann::ordered_json payload;
        payload["redirect_uri"] = catcher_url;
        tampered_state = str::base64url_encode(payload.dump());
        f.evidence.note("opaque bridging state; injected synthesized nested payload");
    } else {
        f.detail = "upstream authorization request carries no state to tamper with";
        return f;
    }

    auto replay_url = replace_query_param(chain.l2->auth_request_url, "state", tampered_state);
    if (!replay_url) {
        f.detail = "could not rebuild the upstream authorization URL";
        return f;
    }
    const size_t before = catcher.entries_for("/cb/f4").size();
    auto drive = drive_authorization(client, *replay_url, catcher_url, budget, classifier,
                                     /*complete_consent=*/true);
    for (auto& line : drive.evidence.transcript) f.evidence.note(line);

    auto hits = catcher.entries_for("/cb/f4");
    bool code_delivered = false;
    for (size_t i = before; i < hits.size(); ++i) {
        auto params = authorization_response_params(hits[i].url);
        if (params.code) code_delivered = true;
    }
    if (code_delivered) {
        f.verdict = Verdict::vulnerable;
        f.sub_verdict = targeted ? "nested_rewrite" : "synthesized";
        f.detail = "callback handler forwarded the authorization response to the tampered target";
        return f;
    }
    if (drive.stage == AuthDriveResult::Stage::rejected_at_authorize ||
        drive.stage == AuthDriveResult::Stage::error_response ||
        (drive.http_status >= 400 && drive.http_status < 600)) {
        f.verdict = Verdict::secure;
        f.detail = "tampered bridging state rejected";
        return f;
    }
    if (drive.stage == AuthDriveResult::Stage::truncated) {
        f.detail = "redirect chain truncated by hop budget";
        return f;
    }
    f.detail = "tampered flow completed without delivering to the probe target";
    return f;
}

Finding probe_f5_downgrade(net::Client& client, const oauth::AuthServerMetadata& meta,
                           const oauth::ClientRegistration& client_reg,
                           const std::string& legit_redirect_uri, const ProbeBudget& budget,
                           const ResponseClassifier& classifier) {
    Finding f = make_finding(Flaw::f5, EvidenceLevel::active, Verdict::inconclusive, "");
    if (budget.dry_run) {
        f.detail = "dry run: probe not sent";
        return f;
    }
    int probes_left = budget.max_probes_per_flaw;
    bool truncated = false;
    bool any_rejected = false;

    // (a) plain-method downgrade: server issues a code for method=plain and
    // the token endpoint accepts verifier == challenge.
    if (probes_left-- > 0) {
        auto req = base_request(meta, client_reg.client_id, legit_redirect_uri);
        std::string verifier = crypto::random_token() + crypto::random_token();
        req.code_challenge = verifier;
        req.code_challenge_method = "plain";
        auto drive = drive_authorization(client, oauth::build_authorization_url(req),
                                         legit_redirect_uri, budget, classifier,
                                         /*complete_consent=*/true);
        if (drive.stage == AuthDriveResult::Stage::code_issued && drive.code) {
            auto token = oauth::exchange_code(client, meta, *drive.code, verifier, client_reg,
                                              legit_redirect_uri);
            if (token.ok()) {
                f.verdict = Verdict::vulnerable;
                f.sub_verdict = "plain";
                f.detail = "plain code_challenge_method accepted end-to-end";
                f.evidence.note("code issued for plain method and redeemed with verifier==challenge");
                return f;
            }
            f.evidence.note("plain-method code issued but token exchange failed: " +
                            token.oauth_error);
            any_rejected = true;
        } else if (drive.stage == AuthDriveResult::Stage::truncated) {
            truncated = true;
        } else if (drive.stage == AuthDriveResult::Stage::unreachable) {
            f.detail = "authorization endpoint unreachable";
            return f;
        } else {
            any_rejected = true;
            f.evidence.note("plain-method authorization request rejected");
        }
    }

    // (b) full strip: no code_challenge at all, token exchange without a
    // verifier.
    if (probes_left-- > 0) {
        auto req = base_request(meta, client_reg.client_id, legit_redirect_uri);
        auto drive = drive_authorization(client, oauth::build_authorization_url(req),
                                         legit_redirect_uri, budget, classifier,
                                         /*complete_consent=*/true);
        if (drive.stage == AuthDriveResult::Stage::code_issued && drive.code) {
            auto token = oauth::exchange_code(client, meta, *drive.code, std::nullopt, client_reg,
                                              legit_redirect_uri);
            if (token.ok()) {
                f.verdict = Verdict::vulnerable;
                f.sub_verdict = "strip";
                f.detail = "authorization code issued and redeemed with PKCE fully stripped";
                f.evidence.note("code issued without code_challenge and redeemed without verifier");
                return f;
            }
            f.evidence.note("stripped-PKCE code issued but token exchange failed: " +
                            token.oauth_error);
            any_rejected = true;
        } else if (drive.stage == AuthDriveResult::Stage::truncated) {
            truncated = true;
        } else if (drive.stage == AuthDriveResult::Stage::unreachable) {
            f.detail = "authorization endpoint unreachable";
            return f;
        } else {
            any_rejected = true;
            f.evidence.note("stripped-PKCE authorization request rejected");
        }
    }

    if (truncated && !any_rejected) {
        f.detail = "downgrade probes truncated by hop budget";
        return f;
    }
    f.verdict = any_rejected ? Verdict::secure : Verdict::inconclusive;
    f.detail = "both downgrade variants were refused";
    return f;
}

Finding probe_f7_open_redirect(net::Client& client, const oauth::AuthServerMetadata& meta,
                               const oauth::ClientRegistration& client_reg,
                               const std::string& legit_redirect_uri, CallbackCatcher& catcher,
                               const ProbeBudget& budget,
                               const ResponseClassifier& classifier) {
    Finding f = make_finding(Flaw::f7, EvidenceLevel::active, Verdict::inconclusive, "");
    if (budget.dry_run) {
        f.detail = "dry run: probe not sent";
        return f;
    }
    int probes_left = budget.max_probes_per_flaw;
    bool truncated = false;

    auto run_variant = [&](const std::string& redirect_uri, const char* label,
                           bool expect_catcher) -> std::optional<Verdict> {
        if (probes_left-- <= 0) return std::nullopt;
        auto req = base_request(meta, client_reg.client_id, redirect_uri);
        auto pkce = oauth::generate_pkce(oauth::PkceMethod::s256);
        req.code_challenge = pkce.challenge;
        req.code_challenge_method = "S256";
        const size_t before = catcher.entries_for("/cb/f7").size();
        auto drive = drive_authorization(client, oauth::build_authorization_url(req),
                                         redirect_uri, budget, classifier,
                                         /*complete_consent=*/true);
        if (drive.stage == AuthDriveResult::Stage::truncated) {
            truncated = true;
            f.evidence.note(std::string(label) + ": truncated by hop budget");
            return std::nullopt;
        }
        if (drive.stage == AuthDriveResult::Stage::code_issued) {
            bool delivered = false;
            if (expect_catcher) {
                auto hits = catcher.entries_for("/cb/f7");
                for (size_t i = before; i < hits.size(); ++i) {
                    if (authorization_response_params(hits[i].url).code) delivered = true;
                }
            } else {
                // Weak-form variants point at mutated spellings of the legit
                // URI; acceptance is proven by the redirect itself.
                auto target = Url::parse(drive.final_location);
                auto mutated = Url::parse(redirect_uri);
                delivered = target && mutated && target->host == mutated->host &&
                            authorization_response_params(drive.final_location).code.has_value();
                if (!delivered && drive.final_location.rfind(redirect_uri, 0) == 0) delivered = true;
            }
            if (delivered) {
                f.evidence.note(std::string(label) + ": code delivered to mutated redirect_uri " +
                                redirect_uri);
                return Verdict::vulnerable;
            }
        }
        f.evidence.note(std::string(label) + ": mutation rejected");
        return Verdict::secure;
    };

    // Full substitution with the scanner's own listener.
    auto full = run_variant(catcher.url_for("/cb/f7"), "full_substitution", true);
    if (full == Verdict::vulnerable) {
        f.verdict = Verdict::vulnerable;
        f.sub_verdict = "full";
        f.detail = "arbitrary redirect_uri substitution accepted; code delivered to the catcher";
        return f;
    }

    // Weak forms derived from the registered URI.
    std::optional<Verdict> weak_decimal, weak_subpath;
    if (auto legit = Url::parse(legit_redirect_uri)) {
        std::string decimal_host = ipv4_to_decimal(legit->host);
        if (!decimal_host.empty()) {
            Url mutated = *legit;
            mutated.host = decimal_host;
            weak_decimal = run_variant(mutated.str(), "decimal_ip", false);
        }
        weak_subpath = run_variant(legit_redirect_uri + "/..%2fprobe", "subpath", false);
    }
    if (weak_decimal == Verdict::vulnerable || weak_subpath == Verdict::vulnerable) {
        f.verdict = Verdict::vulnerable;
        f.sub_verdict = "weak";
        f.detail = "weak-form redirect_uri mutation accepted";
        return f;
    }

    if (truncated) {
        f.verdict = Verdict::inconclusive;
        f.detail = "redirect validation not reachable within the hop budget";
        return f;
    }
    if (full.has_value() || weak_decimal.has_value() || weak_subpath.has_value()) {
        f.verdict = Verdict::secure;
        f.detail = "all redirect_uri mutations rejected before code issuance";
    } else {
        f.detail = "no redirect mutation could be evaluated";
    }
    return f;
}

Finding probe_f9_code_replay(net::Client& client, const oauth::AuthServerMetadata& meta,
                             const oauth::ClientRegistration& client_reg,
                             const flows::Lifecycle& lc, const net::Request& original_token_request,
                             const std::string& first_access_token, const ProbeBudget& budget) {
    (void)meta;
    (void)client_reg;
    Finding f = make_finding(Flaw::f9, EvidenceLevel::active, Verdict::inconclusive, "");
    if (budget.dry_run) {
        f.detail = "dry run: probe not sent";
        return f;
    }
    if (!lc.token_exchange || !lc.token_exchange->code || original_token_request.url.empty()) {
        f.detail = "no redeemed authorization code available from a scanner-owned session";
        return f;
    }
    f.evidence.ref(lc.token_exchange->exchange_ref);

    net::Response res = client.send(original_token_request);
    if (!res.ok) {
        f.detail = "token endpoint unreachable on replay: " + res.error;
        return f;
    }
    auto doc = json::parse(res.body, nullptr, false);
    if (res.status == 200 && doc.is_object() && doc.contains("access_token") &&
        doc["access_token"].is_string()) {
        const std::string second = doc["access_token"].get<std::string>();
        f.verdict = Verdict::vulnerable;
        f.detail = "consumed authorization code redeemed a second time";
        f.evidence.note("first token  " + first_access_token);
        f.evidence.note("replay token " + second);
        return f;
    }
    std::string err = doc.is_object() ? doc.value("error", "") : "";
    f.verdict = Verdict::secure;
    f.detail = "replay rejected" + (err.empty() ? std::string() : " with " + err);
    return f;
}

// ---------------------------------------------------------------------------
// F6: UI-assisted consent confirmation

std::string TestLinkBundle::to_markdown() const {
    std::string out;
    out += "# Consent display test links\n\n";
    out += "Open each link in a browser session you own and answer the checklist.\n\n";
    out += "1. Normal authorization link (loopback callback on an unusual port):\n\n   " +
           normal_link + "\n\n";
    out += "2. Truncated mid-flow link (binding parameters removed):\n\n   " + truncated_link +
           "\n\n";
    out += "Checklist:\n\n";
    out += "- [ ] Is a consent page shown before any redirect?\n";
    out += "- [ ] Is the exact redirect target `" + redirect_uri + "` displayed?\n";
    out += "- [ ] Is a warning shown for the localhost/loopback callback?\n";
    return out;
}

ConsentChecklist inspect_consent_html(const std::string& html, const std::string& redirect_uri) {
    ConsentChecklist out;
    const bool has_form = str::icontains(html, "<form");
    out.consent_page_shown = has_form;
    if (!has_form) return out;
    out.redirect_uri_displayed = html.find(redirect_uri) != std::string::npos;
    out.localhost_warning_shown =
        str::icontains(html, "warning") &&
        (str::icontains(html, "localhost") || str::icontains(html, "loopback") ||
         str::icontains(html, "127.0.0.1"));
    return out;
}

Finding assist_f6_consent(net::Client& client, const oauth::AuthServerMetadata& meta,
                          const oauth::ClientRegistration& client_reg,
                          const std::string& redirect_uri, const ProbeBudget& budget,
                          const ConsentInspector& inspector, TestLinkBundle* bundle_out) {
    Finding f = make_finding(Flaw::f6, EvidenceLevel::ui_assisted, Verdict::needs_human, "");

    auto req = base_request(meta, client_reg.client_id, redirect_uri);
    auto pkce = oauth::generate_pkce(oauth::PkceMethod::s256);
    req.code_challenge = pkce.challenge;
    req.code_challenge_method = "S256";

    TestLinkBundle bundle;
    bundle.redirect_uri = redirect_uri;
    bundle.normal_link = oauth::build_authorization_url(req);
    auto truncated = req;
    truncated.state = std::nullopt;
    truncated.code_challenge = std::nullopt;
    truncated.code_challenge_method = std::nullopt;
    bundle.truncated_link = oauth::build_authorization_url(truncated);
    if (bundle_out) *bundle_out = bundle;

    if (!inspector) {
        f.detail = "test links generated; operator confirmation pending";
        return f;
    }

    std::string html;
    if (!budget.dry_run) {
        auto drive = drive_authorization(client, bundle.normal_link, redirect_uri, budget,
                                         ResponseClassifier{}, /*complete_consent=*/false);
        html = drive.consent_html;
        for (auto& line : drive.evidence.transcript) f.evidence.note(line);
    }

    ConsentChecklist answers = inspector(bundle, html);
    if (!answers.consent_page_shown.has_value()) {
        f.detail = "checklist unanswered; operator confirmation pending";
        return f;
    }
    if (!*answers.consent_page_shown) {
        f.verdict = Verdict::inconclusive;
        f.detail = "no consent page rendered in the test session";
        return f;
    }
    if (answers.redirect_uri_displayed.has_value() && !*answers.redirect_uri_displayed) {
        f.verdict = Verdict::vulnerable;
        f.detail = "consent page does not display the redirect target";
        if (answers.localhost_warning_shown.has_value() && !*answers.localhost_warning_shown)
            f.sub_verdict = "no_uri_no_warning";
        return f;
    }
    f.verdict = Verdict::secure;
    f.detail = "consent page displays the redirect target";
    if (answers.localhost_warning_shown.has_value() && !*answers.localhost_warning_shown) {
        f.detail += "; loopback warning missing";
        f.sub_verdict = "warning_missing";
    }
    return f;
}

}  // namespace mcpscan::detect
