#include "mcpscan/report.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include "mcpscan/strings.hpp"

namespace mcpscan::report {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json finding_to_json(const detect::Finding& f) {
    ordered_json j;
    j["flaw"] = detect::flaw_id(f.flaw);
    j["flaw_name"] = detect::flaw_name(f.flaw);
    j["category"] = detect::category_id(f.category());
    j["category_name"] = detect::category_name(f.category());
    j["evidence_level"] = detect::evidence_level_name(f.evidence_level);
    j["verdict"] = detect::verdict_name(f.verdict);
    j["detail"] = f.detail;
    if (!f.sub_verdict.empty()) j["sub_verdict"] = f.sub_verdict;
    ordered_json ev;
    ev["exchange_refs"] = f.evidence.exchange_refs;
    ev["transcript"] = f.evidence.transcript;
    j["evidence"] = ev;
    return j;
}

namespace {

std::optional<detect::Finding> finding_from_json(const json& j) {
    detect::Finding f;
    std::string flaw = j.value("flaw", "");
    if (flaw.size() != 2 || flaw[0] != 'F' || flaw[1] < '1' || flaw[1] > '9') return std::nullopt;
    f.flaw = static_cast<detect::Flaw>(flaw[1] - '0');
    std::string level = j.value("evidence_level", "passive");
    f.evidence_level = level == "active"        ? detect::EvidenceLevel::active
                       : level == "ui_assisted" ? detect::EvidenceLevel::ui_assisted
                                                : detect::EvidenceLevel::passive;
    std::string verdict = j.value("verdict", "inconclusive");
    f.verdict = verdict == "vulnerable"    ? detect::Verdict::vulnerable
                : verdict == "secure"      ? detect::Verdict::secure
                : verdict == "needs_human" ? detect::Verdict::needs_human
                                           : detect::Verdict::inconclusive;
    f.detail = j.value("detail", "");
    f.sub_verdict = j.value("sub_verdict", "");
    if (j.contains("evidence") && j["evidence"].is_object()) {
        const auto& ev = j["evidence"];
        if (ev.contains("exchange_refs"))
            for (const auto& r : ev["exchange_refs"]) f.evidence.exchange_refs.push_back(r.get<long long>());
        if (ev.contains("transcript"))
            for (const auto& t : ev["transcript"]) f.evidence.transcript.push_back(t.get<std::string>());
    }
    return f;
}

ordered_json compute_totals(const Report& report) {
    ordered_json per_flaw = ordered_json::object();
    for (int i = 1; i <= 9; ++i) {
        auto flaw = static_cast<detect::Flaw>(i);
        ordered_json counts = {{"vulnerable", 0}, {"secure", 0}, {"inconclusive", 0},
                               {"needs_human", 0}};
        per_flaw[detect::flaw_id(flaw)] = counts;
    }
    ordered_json per_category = ordered_json::object();
    for (int i = 1; i <= 4; ++i)
        per_category[detect::category_id(static_cast<detect::Category>(i))] = 0;

    for (const auto& target : report.targets) {
        for (const auto& f : target.findings) {
            auto& counts = per_flaw[detect::flaw_id(f.flaw)];
            const char* v = detect::verdict_name(f.verdict);
            counts[v] = counts[v].get<int>() + 1;
            if (f.verdict == detect::Verdict::vulnerable) {
                auto cid = detect::category_id(f.category());
                per_category[cid] = per_category[cid].get<int>() + 1;
            }
        }
    }
    return ordered_json{{"per_flaw", per_flaw}, {"per_category", per_category}};
}

}  // namespace

ordered_json report_to_json(const Report& report) {
    ordered_json j;
    j["schema_version"] = report.schema_version;
    j["tool_version"] = report.tool_version;
    j["started_at"] = report.started_at;
    j["finished_at"] = report.finished_at;
    ordered_json targets = ordered_json::array();
    for (const auto& t : report.targets) {
        ordered_json tj;
        tj["url"] = t.url;
        tj["outcome"] = t.outcome;
        if (!t.auth_status.empty()) tj["auth_status"] = t.auth_status;
        if (!t.transport.empty()) tj["transport"] = t.transport;
        if (!t.protocol_version.empty()) tj["protocol_version"] = t.protocol_version;
        ordered_json findings = ordered_json::array();
        for (const auto& f : t.findings) findings.push_back(finding_to_json(f));
        tj["findings"] = findings;
        tj["flows"] = ordered_json{{"lifecycles", t.flows.lifecycles},
                                   {"complete", t.flows.complete},
                                   {"delegated_chains", t.flows.delegated_chains},
                                   {"chains_with_bridge", t.flows.chains_with_bridge}};
        tj["notes"] = t.notes;
        targets.push_back(tj);
    }
    j["targets"] = targets;
    j["totals"] = compute_totals(report);
    return j;
}

std::optional<Report> report_from_json(const std::string& text) {
    auto doc = json::parse(text, nullptr, false);
    if (!doc.is_object()) return std::nullopt;
    Report report;
    try {
        report.schema_version = doc.value("schema_version", 1);
        report.tool_version = doc.value("tool_version", "");
        report.started_at = doc.value("started_at", 0LL);
        report.finished_at = doc.value("finished_at", 0LL);
        for (const auto& tj : doc.value("targets", json::array())) {
            TargetReport t;
            t.url = tj.value("url", "");
            t.outcome = tj.value("outcome", "");
            t.auth_status = tj.value("auth_status", "");
            t.transport = tj.value("transport", "");
            t.protocol_version = tj.value("protocol_version", "");
            for (const auto& fj : tj.value("findings", json::array())) {
                if (auto f = finding_from_json(fj)) t.findings.push_back(std::move(*f));
            }
            if (tj.contains("flows") && tj["flows"].is_object()) {
                const auto& fl = tj["flows"];
                t.flows.lifecycles = fl.value("lifecycles", 0u);
                t.flows.complete = fl.value("complete", 0u);
                t.flows.delegated_chains = fl.value("delegated_chains", 0u);
                t.flows.chains_with_bridge = fl.value("chains_with_bridge", 0u);
            }
            for (const auto& n : tj.value("notes", json::array()))
                t.notes.push_back(n.get<std::string>());
            report.targets.push_back(std::move(t));
        }
    } catch (const json::exception&) {
        return std::nullopt;
    }
    return report;
}

std::string report_to_markdown(const Report& report) {
    std::string md;
    md += "# MCP OAuth authentication scan report\n\n";
    md += "- Tool version: " + report.tool_version + "\n";
    md += "- Targets: " + std::to_string(report.targets.size()) + "\n\n";

    auto totals = compute_totals(report);
    md += "## Summary\n\n";
    md += "| Flaw | Name | Category | Vulnerable | Secure | Inconclusive |\n";
    md += "|------|------|----------|-----------:|-------:|-------------:|\n";
    for (int i = 1; i <= 9; ++i) {
        auto flaw = static_cast<detect::Flaw>(i);
        const auto& counts = totals["per_flaw"][detect::flaw_id(flaw)];
        md += std::string("| ") + detect::flaw_id(flaw) + " | " + detect::flaw_name(flaw) +
              " | " + detect::category_id(detect::category_of(flaw)) + " | " +
              std::to_string(counts["vulnerable"].get<int>()) + " | " +
              std::to_string(counts["secure"].get<int>()) + " | " +
              std::to_string(counts["inconclusive"].get<int>() +
                             counts["needs_human"].get<int>()) +
              " |\n";
    }
    md += "\n";

    for (const auto& t : report.targets) {
        md += "## Target: " + t.url + "\n\n";
        md += "- Outcome: " + t.outcome + "\n";
        if (!t.auth_status.empty()) md += "- Authentication: " + t.auth_status + "\n";
        if (!t.transport.empty()) md += "- Transport: " + t.transport + "\n";
        if (!t.protocol_version.empty()) md += "- Protocol version: " + t.protocol_version + "\n";
        md += "- Flows: " + std::to_string(t.flows.lifecycles) + " lifecycles (" +
              std::to_string(t.flows.complete) + " complete), " +
              std::to_string(t.flows.delegated_chains) + " delegated chains\n";
        for (const auto& n : t.notes) md += "- Note: " + n + "\n";
        md += "\n";

        for (int c = 1; c <= 4; ++c) {
            auto category = static_cast<detect::Category>(c);
            std::string section;
            for (const auto& f : t.findings) {
                if (f.category() != category) continue;
                section += std::string("- **") + detect::flaw_id(f.flaw) + " " +
                           detect::flaw_name(f.flaw) + "** — " + detect::verdict_name(f.verdict) +
                           " (" + detect::evidence_level_name(f.evidence_level) + ")";
                if (!f.sub_verdict.empty()) section += " [" + f.sub_verdict + "]";
                if (!f.detail.empty()) section += ": " + f.detail;
                section += "\n";
            }
            if (!section.empty()) {
                md += std::string("### ") + detect::category_id(category) + ": " +
                      detect::category_name(category) + "\n\n" + section + "\n";
            }
        }
    }
    return md;
}

bool report_has_vulnerable(const Report& report) {
    for (const auto& t : report.targets)
        for (const auto& f : t.findings)
            if (f.verdict == detect::Verdict::vulnerable) return true;
    return false;
}

int exit_code_for(const Report& report, bool operational_error) {
    if (operational_error) return kExitError;
    return report_has_vulnerable(report) ? kExitFindings : kExitClean;
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out.good()) throw std::runtime_error("cannot write " + tmp);
        out << content;
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

}  // namespace mcpscan::report
