#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mcpscan/http.hpp"
#include "mcpscan/lifecycle.hpp"
#include "mcpscan/oauth.hpp"

namespace mcpscan::detect {

enum class Flaw { f1 = 1, f2, f3, f4, f5, f6, f7, f8, f9 };
enum class Category { c1 = 1, c2, c3, c4 };
enum class EvidenceLevel { passive, active, ui_assisted };
enum class Verdict { vulnerable, secure, inconclusive, needs_human };

const char* flaw_id(Flaw);            // "F1".."F9"
const char* flaw_name(Flaw);          // "Malicious DCR Binding", ...
Category category_of(Flaw);           // F1,F2->C1; F3,F4->C2; F5,F6->C3; F7,F8,F9->C4
const char* category_id(Category);    // "C1".."C4"
const char* category_name(Category);  // "Dynamic Client Registration Flaws", ...
const char* evidence_level_name(EvidenceLevel);
const char* verdict_name(Verdict);

struct Evidence {
    std::vector<long long> exchange_refs;
    std::vector<std::string> transcript;

    void note(std::string line) { transcript.push_back(std::move(line)); }
    void ref(long long seq) { exchange_refs.push_back(seq); }
};

struct Finding {
    Flaw flaw = Flaw::f1;
    EvidenceLevel evidence_level = EvidenceLevel::passive;
    Verdict verdict = Verdict::inconclusive;
    std::string detail;
    std::string sub_verdict;  // probe-specific qualifier (e.g. "strip", "weak")
    Evidence evidence;
    std::string target_url;

    Category category() const { return category_of(flaw); }
};

Finding make_finding(Flaw flaw, EvidenceLevel level, Verdict verdict, std::string detail);

struct ProbeBudget {
    int max_redirect_hops = 5;
    int max_probes_per_flaw = 8;
    bool dry_run = false;
};

// Markers deciding whether an authorization server "proceeded" with a
// request (rendered consent or routed toward login) versus rejecting it.
struct ResponseClassifier {
    std::vector<std::string> proceed_markers = {"<form", "consent", "authorize", "log in",
                                                "login", "sign in"};
    std::vector<std::string> error_markers = {"invalid_client", "invalid_request",
                                              "unauthorized_client", "invalid_redirect"};

    bool looks_like_proceed(const net::Response& res) const;
    bool looks_like_rejection(const net::Response& res) const;
};

// Scanner-owned HTTP listener standing in for the attack-side callback
// endpoint. Binds only to loopback or an explicitly declared host.
class CallbackCatcher {
   public:
    struct Entry {
        long long timestamp;
        std::string url;  // full request URL including query
        capture::HeaderList headers;
    };

    static std::unique_ptr<CallbackCatcher> start(
        const std::string& bind_host = "127.0.0.1", int port = 0,
        const std::vector<std::string>& declared_hosts = {});

    ~CallbackCatcher();

    std::string base_url() const;
    std::string url_for(std::string_view path) const;
    // Non-loopback attacker-pattern URL (TEST-NET address). Used where the
    // probe needs a redirect target no legitimate client would register;
    // the address is reserved documentation space and never routes.
    std::string external_probe_url(std::string_view path) const;

    std::vector<Entry> entries() const;
    std::vector<Entry> entries_for(std::string_view path_prefix) const;
    void stop();

   private:
    CallbackCatcher() = default;
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Passive rules (no traffic beyond what was already captured)

Finding check_f3_layer_inconsistency(const flows::DelegatedChain& chain);
Finding check_f5_passive(const flows::Lifecycle& lc);
Finding check_f8_weak_state(const std::vector<flows::Lifecycle>& lifecycles);

// Weak-state heuristics (exposed for tests): minimum length 8, minimum
// estimated entropy 32 bits.
bool state_is_weak(const std::string& state);

// ---------------------------------------------------------------------------
// Authorization-flow driver shared by the active probes

struct AuthDriveResult {
    enum class Stage {
        rejected_at_authorize,
        consent_shown,   // stopped at the consent page (consent not completed)
        code_issued,     // authorization response observed
        error_response,  // authorization response carried an error
        truncated,       // redirect chain exceeded the hop budget
        unreachable,
    };
    Stage stage = Stage::unreachable;
    std::optional<std::string> code;
    std::optional<std::string> state;
    std::string final_location;  // authorization response target
    std::string consent_html;
    int http_status = 0;
    Evidence evidence;
};

// Drives an authorization request in a scanner-owned session: follows
// redirects inside the hop budget, optionally completes the consent form,
// and stops on the authorization response. A redirect counts as the
// authorization response when it targets expected_redirect_uri (prefix
// match); with an empty expectation, any code- or error-bearing redirect
// ends the flow. Intermediate hops (delegated upstream legs, login chains)
// are followed and consume budget.
AuthDriveResult drive_authorization(net::Client& client, const std::string& authorization_url,
                                    const std::string& expected_redirect_uri,
                                    const ProbeBudget& budget,
                                    const ResponseClassifier& classifier, bool complete_consent);

// ---------------------------------------------------------------------------
// Active probes (scanner-owned sessions only)

Finding probe_f1_malicious_dcr(net::Client& client, const oauth::AuthServerMetadata& meta,
                               CallbackCatcher& catcher, const ProbeBudget& budget,
                               const ResponseClassifier& classifier = {});

Finding probe_f2_blind_client_trust(net::Client& client, const oauth::AuthServerMetadata& meta,
                                    const std::optional<flows::Lifecycle>& observed_baseline,
                                    const std::optional<std::string>& legit_redirect_uri,
                                    const ProbeBudget& budget,
                                    const ResponseClassifier& classifier = {});

Finding probe_f4_nested_pollution(net::Client& client, const flows::DelegatedChain& chain,
                                  CallbackCatcher& catcher, const ProbeBudget& budget,
                                  const ResponseClassifier& classifier = {});

Finding probe_f5_downgrade(net::Client& client, const oauth::AuthServerMetadata& meta,
                           const oauth::ClientRegistration& client_reg,
                           const std::string& legit_redirect_uri, const ProbeBudget& budget,
                           const ResponseClassifier& classifier = {});

Finding probe_f7_open_redirect(net::Client& client, const oauth::AuthServerMetadata& meta,
                               const oauth::ClientRegistration& client_reg,
                               const std::string& legit_redirect_uri, CallbackCatcher& catcher,
                               const ProbeBudget& budget,
                               const ResponseClassifier& classifier = {});

// Replays the exact token request that already redeemed `lc`'s code once.
Finding probe_f9_code_replay(net::Client& client, const oauth::AuthServerMetadata& meta,
                             const oauth::ClientRegistration& client_reg,
                             const flows::Lifecycle& lc, const net::Request& original_token_request,
                             const std::string& first_access_token, const ProbeBudget& budget);

// ---------------------------------------------------------------------------
// UI-assisted confirmation (F6)

struct ConsentChecklist {
    std::optional<bool> consent_page_shown;
    std::optional<bool> redirect_uri_displayed;
    std::optional<bool> localhost_warning_shown;
};

struct TestLinkBundle {
    std::string normal_link;     // full authorization link, loopback redirect
    std::string truncated_link;  // mid-flow link with binding parameters removed
    std::string redirect_uri;
    std::string to_markdown() const;
};

// Answers the checklist from the rendered page. Stands in for the operator
// against deterministic fixtures; real targets use the interactive path.
ConsentChecklist inspect_consent_html(const std::string& html, const std::string& redirect_uri);

using ConsentInspector =
    std::function<ConsentChecklist(const TestLinkBundle&, const std::string& consent_html)>;

// Emits the test links, optionally fetches the consent page, and sets the
// verdict from the checklist; without an inspector the verdict stays
// needs_human and only the bundle is produced.
Finding assist_f6_consent(net::Client& client, const oauth::AuthServerMetadata& meta,
                          const oauth::ClientRegistration& client_reg,
                          const std::string& redirect_uri, const ProbeBudget& budget,
                          const ConsentInspector& inspector, TestLinkBundle* bundle_out);

std::unique_ptr<CallbackCatcher> run_callback_catcher(const std::string& address,
                                                      const std::vector<std::string>& declared = {});

}  // namespace mcpscan::detect
