#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcpscan/capture.hpp"
#include "mcpscan/detectors.hpp"
#include "mcpscan/mcp_probe.hpp"
#include "mcpscan/report.hpp"

namespace mcpscan::scan {

enum class Mode { passive_only, active, full };
enum class CaptureSource { live_proxy, flow_log, drive };
enum class ConsentMode { html_heuristic, interactive, bundle_only };

const char* mode_name(Mode);

struct ScanConfig {
    std::vector<probe::CandidateEndpoint> targets;
    Mode mode = Mode::full;
    detect::ProbeBudget budget;
    std::string catcher_address = "127.0.0.1:0";
    CaptureSource capture_source = CaptureSource::drive;
    std::string capture_path;  // flow_log source
    // Pre-acquired exchanges (live_proxy mode feeds these in).
    std::vector<capture::HttpExchange> preloaded_capture;
    std::string scope = "mcp";
    int concurrency = 4;
    double rate_limit = 2.0;  // req/s per host; loopback exempt
    net::Timeouts timeouts{10, 30};
    detect::ResponseClassifier classifier;
    std::string protocol_version = "2025-11-25";
    ConsentMode consent = ConsentMode::html_heuristic;
    std::string bundle_path;  // where the F6 link bundle is written (optional)
};

class ScanError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Full pipeline per target: validate + classify, discover, acquire capture,
// reconstruct lifecycles, passive rules, then (mode permitting) active
// probes and UI-assisted confirmation. Per-target failures are recorded in
// the report, never fatal to the batch. Throws ScanError only for unusable
// configuration (no targets, unreadable capture file).
report::Report run_scan(const ScanConfig& config);

std::string tool_version();

}  // namespace mcpscan::scan
