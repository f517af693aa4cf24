#include <doctest.h>

#include "mcpscan/report.hpp"
#include "mcpscan/scanner.hpp"
#include "support/lab_util.hpp"

using namespace mcpscan;

namespace {

report::Report sample_report() {
    report::Report rep;
    rep.tool_version = scan::tool_version();
    rep.started_at = 1000;
    rep.finished_at = 2000;
    report::TargetReport t;
    t.url = "http://127.0.0.1:1234/mcp";
    t.outcome = "scanned";
    t.auth_status = "oauth";
    t.transport = "streamable_http";
    t.protocol_version = "2025-06-18";
    auto f1 = detect::make_finding(detect::Flaw::f1, detect::EvidenceLevel::active,
                                   detect::Verdict::vulnerable, "open registration");
    f1.evidence.note("issued client_id=abc");
    f1.evidence.ref(3);
    auto f5 = detect::make_finding(detect::Flaw::f5, detect::EvidenceLevel::passive,
                                   detect::Verdict::secure, "S256 observed");
    auto f6 = detect::make_finding(detect::Flaw::f6, detect::EvidenceLevel::ui_assisted,
                                   detect::Verdict::needs_human, "links pending");
    t.findings = {f1, f5, f6};
    t.flows.lifecycles = 2;
    t.flows.complete = 1;
    rep.targets.push_back(t);
    return rep;
}

}  // namespace

TEST_CASE("report json round trips and recomputes totals") {
    auto rep = sample_report();
    auto j = report::report_to_json(rep);
    CHECK(j["schema_version"] == 1);
    CHECK(j["totals"]["per_flaw"]["F1"]["vulnerable"] == 1);
    CHECK(j["totals"]["per_flaw"]["F5"]["secure"] == 1);
    CHECK(j["totals"]["per_category"]["C1"] == 1);
    CHECK(j["totals"]["per_category"]["C3"] == 0);

    auto text = j.dump(2);
    auto back = report::report_from_json(text);
    REQUIRE(back.has_value());
    auto j2 = report::report_to_json(*back);
    CHECK(j2.dump(2) == text);  // byte-stable re-serialization
}

TEST_CASE("empty report renders a valid document with zero counts") {
    report::Report rep;
    rep.tool_version = "x";
    auto j = report::report_to_json(rep);
    CHECK(j["targets"].empty());
    CHECK(j["totals"]["per_flaw"]["F9"]["vulnerable"] == 0);
    auto md = report::report_to_markdown(rep);
    CHECK(md.find("# MCP OAuth authentication scan report") == 0);
}

TEST_CASE("markdown groups findings by category in order") {
    auto rep = sample_report();
    auto md = report::report_to_markdown(rep);
    auto c1 = md.find("### C1: Dynamic Client Registration Flaws");
    auto c3 = md.find("### C3: Open Client Environment Flaws");
    REQUIRE(c1 != std::string::npos);
    REQUIRE(c3 != std::string::npos);
    CHECK(c1 < c3);
    CHECK(md.find("F1 Malicious DCR Binding") != std::string::npos);
    CHECK(md.find("needs_human") != std::string::npos);
}

TEST_CASE("exit code contract") {
    auto rep = sample_report();
    CHECK(report::exit_code_for(rep, false) == report::kExitFindings);
    report::Report clean;
    CHECK(report::exit_code_for(clean, false) == report::kExitClean);
    CHECK(report::exit_code_for(rep, true) == report::kExitError);
}

TEST_CASE("scan with an empty target list is an input error") {
    scan::ScanConfig config;
    CHECK_THROWS_AS(scan::run_scan(config), scan::ScanError);
}

TEST_CASE("full scan of a two-flaw lab reports exactly those flaws") {
    auto the_lab = testsupport::spawn({1, 9});
    scan::ScanConfig config;
    config.targets = {{the_lab->mcp_url(), "test"}};
    config.mode = scan::Mode::full;
    config.timeouts = net::Timeouts{2, 5};
    config.rate_limit = 0.0;
    auto rep = scan::run_scan(config);
    REQUIRE(rep.targets.size() == 1);
    const auto& t = rep.targets[0];
    CHECK(t.outcome == "scanned");
    CHECK(t.auth_status == "oauth");
    REQUIRE(t.findings.size() == 9);
    for (const auto& f : t.findings) {
        bool seeded = f.flaw == detect::Flaw::f1 || f.flaw == detect::Flaw::f9;
        if (seeded)
            CHECK(f.verdict == detect::Verdict::vulnerable);
        else
            CHECK(f.verdict != detect::Verdict::vulnerable);
    }
    CHECK(report::exit_code_for(rep, false) == report::kExitFindings);
}

TEST_CASE("passive scan on a scripted capture flags F5 without probing") {
    auto the_lab = testsupport::spawn({1, 5, 7});
    auto exchanges = lab::scripted_session(*the_lab, lab::Script::plain_flow);
    const std::string path = "/tmp/mcpscan_passive_capture.jsonl";
    capture::write_flow_log(path, exchanges);
    the_lab->clear_request_log();

    scan::ScanConfig config;
    config.targets = {{the_lab->mcp_url(), "test"}};
    config.mode = scan::Mode::passive_only;
    config.capture_source = scan::CaptureSource::flow_log;
    config.capture_path = path;
    config.timeouts = net::Timeouts{2, 5};
    config.rate_limit = 0.0;
    auto rep = scan::run_scan(config);
    REQUIRE(rep.targets.size() == 1);
    for (const auto& f : rep.targets[0].findings) {
        CHECK(f.evidence_level == detect::EvidenceLevel::passive);
        if (f.flaw == detect::Flaw::f5) {
            CHECK(f.verdict == detect::Verdict::vulnerable);
        } else if (f.flaw == detect::Flaw::f1 || f.flaw == detect::Flaw::f7) {
            CHECK(f.verdict == detect::Verdict::inconclusive);
        }
    }
    // Passive safety: nothing mutating reached the lab.
    for (const auto& e : the_lab->request_log()) {
        CHECK(e.target.find("/register") == std::string::npos);
        CHECK(e.target.find("/authorize") == std::string::npos);
        CHECK(e.target.find("/token") == std::string::npos);
    }
    std::remove(path.c_str());
}
