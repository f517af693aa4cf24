#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "mcpscan/detectors.hpp"

namespace mcpscan::report {

struct FlowSummary {
    size_t lifecycles = 0;
    size_t complete = 0;
    size_t delegated_chains = 0;   // chains with an upstream leg attached
    size_t chains_with_bridge = 0;
};

struct TargetReport {
    std::string url;
    std::string outcome;  // scanned | rejected | error
    std::string auth_status;
    std::string transport;
    std::string protocol_version;
    std::vector<detect::Finding> findings;
    FlowSummary flows;
    std::vector<std::string> notes;
};

struct Report {
    int schema_version = 1;
    std::string tool_version;
    long long started_at = 0;
    long long finished_at = 0;
    std::vector<TargetReport> targets;
};

// Totals are recomputed from the per-target lists on every render.
nlohmann::ordered_json report_to_json(const Report& report);
std::optional<Report> report_from_json(const std::string& text);

// Groups findings by taxonomy category C1..C4 with the flaw names spelled
// out, one section per target.
std::string report_to_markdown(const Report& report);

bool report_has_vulnerable(const Report& report);

// Exit-code contract: 0 = clean, 1 = findings present, 2 = operational error.
inline constexpr int kExitClean = 0;
inline constexpr int kExitFindings = 1;
inline constexpr int kExitError = 2;
int exit_code_for(const Report& report, bool operational_error);

// Writes via a temp file + rename so readers never observe a partial report.
void write_file_atomic(const std::string& path, const std::string& content);

nlohmann::ordered_json finding_to_json(const detect::Finding& finding);

}  // namespace mcpscan::report
