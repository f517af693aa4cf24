#include "mcpscan/scanner.hpp"

#include <atomic>
#include <iostream>
#include <mutex>
#include <thread>

#include "mcpscan/crypto.hpp"
#include "mcpscan/lifecycle.hpp"
#include "mcpscan/oauth.hpp"
#include "mcpscan/strings.hpp"

namespace mcpscan::scan {

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::passive_only: return "passive_only";
        case Mode::active: return "active";
        case Mode::full: return "full";
    }
    return "full";
}

std::string tool_version() { return "0.1.0"; }

namespace {

struct BaselineFlow {
    bool ok = false;
    oauth::ClientRegistration registration;
    std::string redirect_uri;
    flows::Lifecycle lifecycle;
    net::Request token_request;
    std::string access_token;
    std::vector<capture::HttpExchange> exchanges;
    std::string failure;
};

// Legitimate scanner-owned flow: register, authorize with S256 and a strong
// state, complete consent, redeem the code. Supplies the redeemed-code
// artifact for the replay probe and doubles as the capture in drive mode.
BaselineFlow drive_baseline(const ScanConfig& config, const oauth::AuthServerMetadata& meta,
                            detect::CallbackCatcher& catcher,
                            std::shared_ptr<net::RateLimiter> limiter) {
    BaselineFlow out;
    capture::CaptureRecorder recorder;
    net::Client client(config.timeouts, &recorder, "baseline");
    client.set_rate_limiter(limiter);

    out.redirect_uri = catcher.url_for("/cb/legit");
    auto reg = oauth::register_client(client, meta, {out.redirect_uri}, "mcpscan");
    if (!reg.ok()) {
        out.failure = "baseline registration failed";
        if (!reg.body.empty()) out.failure += ": " + reg.body.substr(0, 160);
        out.exchanges = recorder.snapshot();
        return out;
    }
    out.registration = reg.registration;

    auto pkce = oauth::generate_pkce(oauth::PkceMethod::s256);
    oauth::AuthorizationRequest req;
    req.endpoint = meta.authorization_endpoint;
    req.client_id = reg.registration.client_id;
    req.redirect_uri = out.redirect_uri;
    req.state = crypto::random_token() + crypto::random_token();
    req.code_challenge = pkce.challenge;
    req.code_challenge_method = "S256";
    if (!config.scope.empty()) req.scope = config.scope;

    auto drive = detect::drive_authorization(client, oauth::build_authorization_url(req),
                                             out.redirect_uri, config.budget, config.classifier,
                                             /*complete_consent=*/true);
    if (drive.stage != detect::AuthDriveResult::Stage::code_issued || !drive.code) {
        out.failure = "baseline authorization did not complete (stage " +
                      std::to_string(static_cast<int>(drive.stage)) + ")";
        out.exchanges = recorder.snapshot();
        return out;
    }

    out.token_request = oauth::build_token_request(meta, *drive.code, pkce.verifier,
                                                   reg.registration, out.redirect_uri);
    auto token = oauth::parse_token_response(client.send(out.token_request));
    if (!token.ok()) {
        out.failure = "baseline token exchange failed: " + token.oauth_error;
        out.exchanges = recorder.snapshot();
        return out;
    }
    out.access_token = token.token.access_token;
    out.exchanges = recorder.snapshot();

    auto target_origin = Url::parse(meta.authorization_endpoint);
    auto lifecycles = flows::reconstruct_exchanges(out.exchanges, std::nullopt, nullptr);
    (void)target_origin;
    for (auto& lc : lifecycles) {
        if (lc.complete()) {
            out.lifecycle = lc;
            out.ok = true;
            break;
        }
    }
    if (!out.ok) out.failure = "baseline flow did not reconstruct into a complete lifecycle";
    return out;
}

detect::Finding merge_f5(const std::optional<detect::Finding>& passive,
                         const std::optional<detect::Finding>& active) {
    if (passive && !active) return *passive;
    if (active && !passive) return *active;
    detect::Finding merged = *active;  // stronger evidence level wins
    if (passive->verdict == detect::Verdict::vulnerable &&
        merged.verdict != detect::Verdict::vulnerable) {
        merged.verdict = detect::Verdict::vulnerable;
        merged.evidence_level = detect::EvidenceLevel::passive;
        merged.detail = passive->detail + " (active downgrade probes were refused)";
        merged.sub_verdict = passive->sub_verdict;
    } else if (merged.verdict == detect::Verdict::vulnerable &&
               passive->verdict == detect::Verdict::vulnerable) {
        merged.detail += "; passively observed: " + passive->detail;
    }
    for (auto r : passive->evidence.exchange_refs) merged.evidence.ref(r);
    for (const auto& t : passive->evidence.transcript) merged.evidence.transcript.push_back(t);
    return merged;
}

detect::ConsentChecklist interactive_checklist(const detect::TestLinkBundle& bundle) {
    std::cout << "\n" << bundle.to_markdown() << "\n";
    auto ask = [](const char* prompt) -> std::optional<bool> {
        std::cout << prompt << " [y/n/s(kip)] " << std::flush;
        std::string line;
        if (!std::getline(std::cin, line)) return std::nullopt;
        auto t = str::to_lower(str::trim(line));
        if (t == "y" || t == "yes") return true;
        if (t == "n" || t == "no") return false;
        return std::nullopt;
    };
    detect::ConsentChecklist out;
    out.consent_page_shown = ask("Was a consent page shown before any redirect?");
    out.redirect_uri_displayed = ask("Was the exact redirect_uri displayed?");
    out.localhost_warning_shown = ask("Was a localhost-callback warning displayed?");
    return out;
}

void scan_one_target(const ScanConfig& config, const probe::CandidateEndpoint& target,
                     std::shared_ptr<net::RateLimiter> limiter, report::TargetReport& tr) {
    tr.url = target.url;

    probe::ProbeOptions popt;
    popt.protocol_version = config.protocol_version;
    popt.timeouts = config.timeouts;
    popt.max_redirect_hops = config.budget.max_redirect_hops;

    net::Client client(config.timeouts);
    client.set_rate_limiter(limiter);

    auto cls = probe::classify_auth(client, target, popt);
    if (!cls.ok) {
        tr.outcome = "rejected";
        tr.notes.push_back(cls.error);
        tr.notes.push_back(std::string("handshake outcome: ") +
                           probe::handshake_outcome_name(cls.handshake.outcome));
        return;
    }
    tr.outcome = "scanned";
    tr.auth_status = probe::auth_status_name(cls.status);
    tr.transport = probe::transport_name(cls.handshake.transport);
    tr.protocol_version = cls.handshake.protocol_version;
    if (!cls.challenged_request.empty())
        tr.notes.push_back("auth challenge first seen on: " + cls.challenged_request);

    if (cls.status != probe::AuthStatus::oauth) {
        tr.notes.push_back("no OAuth authorization surface; flaw detection not applicable");
        return;
    }

    auto disc = oauth::discover(client, target.url);
    if (!disc.ok) {
        tr.outcome = "error";
        tr.notes.push_back("OAuth metadata discovery failed: " + disc.error);
        return;
    }
    const auto& meta = disc.auth_server;

    // --- capture acquisition ---
    std::vector<capture::HttpExchange> cap = config.preloaded_capture;
    std::optional<BaselineFlow> baseline;
    std::unique_ptr<detect::CallbackCatcher> catcher;

    if (config.mode != Mode::passive_only) {
        catcher = detect::run_callback_catcher(config.catcher_address);
        baseline = drive_baseline(config, meta, *catcher, limiter);
        if (!baseline->ok) tr.notes.push_back(baseline->failure);
    }

    if (config.capture_source == CaptureSource::flow_log) {
        if (!config.capture_path.empty()) {
            capture::IngestStats stats;
            cap = capture::ingest_flow_log(config.capture_path, &stats);
            if (stats.skipped > 0)
                tr.notes.push_back(std::to_string(stats.skipped) + " capture records skipped");
        } else {
            tr.notes.push_back("flow_log capture source selected but no capture path given");
        }
    } else if (config.capture_source == CaptureSource::drive) {
        if (baseline) {
            cap = baseline->exchanges;
        } else {
            tr.notes.push_back(
                "drive capture source is unavailable in passive_only mode; no capture analyzed");
        }
    }

    auto target_origin = Url::parse(target.url);
    flows::ReconstructionStats rstats;
    auto lifecycles = flows::reconstruct_exchanges(cap, target_origin, &rstats);
    auto chains = flows::link_delegated(lifecycles);

    tr.flows.lifecycles = lifecycles.size();
    for (const auto& lc : lifecycles)
        if (lc.complete()) tr.flows.complete++;
    for (const auto& ch : chains) {
        if (ch.l2) tr.flows.delegated_chains++;
        if (ch.bridge) tr.flows.chains_with_bridge++;
    }

    // --- passive rules ---
    std::optional<detect::Finding> f3;
    for (const auto& ch : chains) {
        auto f = detect::check_f3_layer_inconsistency(ch);
        if (!f3 || f.verdict == detect::Verdict::vulnerable ||
            (f3->verdict == detect::Verdict::inconclusive && f.verdict == detect::Verdict::secure))
            f3 = f;
        if (f3->verdict == detect::Verdict::vulnerable) break;
    }
    if (!f3) {
        f3 = detect::make_finding(detect::Flaw::f3, detect::EvidenceLevel::passive,
                                  detect::Verdict::inconclusive,
                                  "no delegated authorization chain observed");
    }

    std::optional<detect::Finding> f5_passive;
    for (const auto& lc : lifecycles) {
        if (!lc.auth_request) continue;
        auto f = detect::check_f5_passive(lc);
        if (!f5_passive || f.verdict == detect::Verdict::vulnerable ||
            (f5_passive->verdict == detect::Verdict::inconclusive &&
             f.verdict == detect::Verdict::secure))
            f5_passive = f;
        if (f5_passive->verdict == detect::Verdict::vulnerable) break;
    }
    if (!f5_passive && !cap.empty()) {
        f5_passive = detect::make_finding(detect::Flaw::f5, detect::EvidenceLevel::passive,
                                          detect::Verdict::inconclusive,
                                          "no authorization requests in the capture");
    }

    detect::Finding f8 = detect::check_f8_weak_state(lifecycles);

    // --- active probes ---
    std::optional<detect::Finding> f1, f2, f4, f5_active, f7, f9;
    if (config.mode != Mode::passive_only && catcher) {
        net::Client probe_client(config.timeouts);
        probe_client.set_rate_limiter(limiter);

        f1 = detect::probe_f1_malicious_dcr(probe_client, meta, *catcher, config.budget,
                                            config.classifier);

        std::optional<flows::Lifecycle> observed;
        for (const auto& lc : lifecycles) {
            if (lc.auth_request && lc.auth_request->redirect_uri) {
                observed = lc;
                break;
            }
        }
        std::optional<std::string> legit;
        if (baseline && baseline->ok) legit = baseline->redirect_uri;
        f2 = detect::probe_f2_blind_client_trust(probe_client, meta, observed, legit,
                                                 config.budget, config.classifier);

        const flows::DelegatedChain* delegated = nullptr;
        for (const auto& ch : chains) {
            if (ch.l2) {
                delegated = &ch;
                if (ch.bridge) break;  // prefer a chain with decodable bridge
            }
        }
        if (delegated) {
            f4 = detect::probe_f4_nested_pollution(probe_client, *delegated, *catcher,
                                                   config.budget, config.classifier);
        } else {
            f4 = detect::make_finding(detect::Flaw::f4, detect::EvidenceLevel::active,
                                      detect::Verdict::inconclusive,
                                      "no delegated chain with a replayable upstream request");
        }

        if (baseline && baseline->ok) {
            f5_active = detect::probe_f5_downgrade(probe_client, meta, baseline->registration,
                                                   baseline->redirect_uri, config.budget,
                                                   config.classifier);
            f7 = detect::probe_f7_open_redirect(probe_client, meta, baseline->registration,
                                                baseline->redirect_uri, *catcher, config.budget,
                                                config.classifier);
            f9 = detect::probe_f9_code_replay(probe_client, meta, baseline->registration,
                                              baseline->lifecycle, baseline->token_request,
                                              baseline->access_token, config.budget);
        } else {
            auto blocked = [&](detect::Flaw flaw) {
                return detect::make_finding(flaw, detect::EvidenceLevel::active,
                                            detect::Verdict::inconclusive,
                                            "no scanner-owned session available: " +
                                                (baseline ? baseline->failure : std::string()));
            };
            f5_active = blocked(detect::Flaw::f5);
            f7 = blocked(detect::Flaw::f7);
            f9 = blocked(detect::Flaw::f9);
        }
    }

    // --- UI-assisted (F6) ---
    std::optional<detect::Finding> f6;
    if (config.mode == Mode::full && baseline && baseline->ok && catcher) {
        net::Client ui_client(config.timeouts);
        ui_client.set_rate_limiter(limiter);
        detect::ConsentInspector inspector;
        switch (config.consent) {
            case ConsentMode::html_heuristic:
                inspector = [](const detect::TestLinkBundle& bundle, const std::string& html) {
                    return detect::inspect_consent_html(html, bundle.redirect_uri);
                };
                break;
            case ConsentMode::interactive:
                inspector = [](const detect::TestLinkBundle& bundle, const std::string&) {
                    return interactive_checklist(bundle);
                };
                break;
            case ConsentMode::bundle_only:
                break;  // verdict stays needs_human
        }
        detect::TestLinkBundle bundle;
        f6 = detect::assist_f6_consent(ui_client, meta, baseline->registration,
                                       baseline->redirect_uri, config.budget, inspector, &bundle);
        if (!config.bundle_path.empty()) {
            report::write_file_atomic(config.bundle_path, bundle.to_markdown());
            tr.notes.push_back("consent test links written to " + config.bundle_path);
        }
    }

    // --- assemble, ordered F1..F9 ---
    auto add = [&](std::optional<detect::Finding> f, detect::Flaw flaw,
                   detect::EvidenceLevel level, const char* why_missing) {
        if (!f) f = detect::make_finding(flaw, level, detect::Verdict::inconclusive, why_missing);
        f->target_url = target.url;
        tr.findings.push_back(std::move(*f));
    };

    const char* not_active = config.mode == Mode::passive_only
                                 ? "active probing disabled in passive_only mode"
                                 : "probe not executed";
    add(f1, detect::Flaw::f1, detect::EvidenceLevel::active, not_active);
    add(f2, detect::Flaw::f2, detect::EvidenceLevel::active, not_active);
    add(f3, detect::Flaw::f3, detect::EvidenceLevel::passive, "no capture analyzed");
    add(f4, detect::Flaw::f4, detect::EvidenceLevel::active, not_active);
    if (f5_passive && f5_active) {
        auto merged = merge_f5(f5_passive, f5_active);
        merged.target_url = target.url;
        tr.findings.push_back(merged);
    } else {
        add(f5_active ? f5_active : f5_passive, detect::Flaw::f5, detect::EvidenceLevel::passive,
            "no capture analyzed");
    }
    add(f6, detect::Flaw::f6, detect::EvidenceLevel::ui_assisted,
        config.mode == Mode::full ? "consent inspection not executed"
                                  : "UI-assisted confirmation runs only in full mode");
    add(f7, detect::Flaw::f7, detect::EvidenceLevel::active, not_active);
    f8.target_url = target.url;
    tr.findings.push_back(f8);
    add(f9, detect::Flaw::f9, detect::EvidenceLevel::active, not_active);

    if (catcher) catcher->stop();
}

}  // namespace

report::Report run_scan(const ScanConfig& config) {
    if (config.targets.empty()) throw ScanError("no targets given");
    if (config.capture_source == CaptureSource::flow_log && config.capture_path.empty() &&
        config.preloaded_capture.empty())
        throw ScanError("flow_log capture source requires a capture file");

    report::Report rep;
    rep.schema_version = 1;
    rep.tool_version = tool_version();
    rep.started_at = str::now_ms();
    rep.targets.resize(config.targets.size());

    auto limiter = std::make_shared<net::RateLimiter>(config.rate_limit);

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= config.targets.size()) return;
            try {
                scan_one_target(config, config.targets[i], limiter, rep.targets[i]);
            } catch (const std::exception& e) {
                rep.targets[i].url = config.targets[i].url;
                rep.targets[i].outcome = "error";
                rep.targets[i].notes.push_back(std::string("scan aborted: ") + e.what());
            }
        }
    };
    int n_threads = std::max(1, std::min<int>(config.concurrency,
                                              static_cast<int>(config.targets.size())));
    std::vector<std::thread> threads;
    for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    rep.finished_at = str::now_ms();
    return rep;
}

}  // namespace mcpscan::scan
