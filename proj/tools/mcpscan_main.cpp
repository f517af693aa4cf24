// mcpscan: validate remote MCP endpoints, reconstruct their OAuth
// authorization lifecycles, and detect authentication flaws against them.
// Also hosts the flaw-toggleable mock deployment used as a test target.

#include <CLI11.hpp>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "mcpscan/flawlab.hpp"
#include "mcpscan/lifecycle.hpp"
#include "mcpscan/proxy.hpp"
#include "mcpscan/report.hpp"
#include "mcpscan/scanner.hpp"
#include "mcpscan/strings.hpp"

namespace {

volatile std::sig_atomic_t g_interrupted = 0;
void handle_sigint(int) { g_interrupted = 1; }

using namespace mcpscan;

double env_double(const char* name, double fallback) {
    const char* v = std::getenv(name);
    return v ? std::atof(v) : fallback;
}

int env_int(const char* name, int fallback) {
    const char* v = std::getenv(name);
    return v ? std::atoi(v) : fallback;
}

std::vector<probe::CandidateEndpoint> collect_targets(const std::string& target,
                                                      const std::string& targets_file) {
    std::vector<probe::CandidateEndpoint> out;
    if (!targets_file.empty()) out = probe::read_target_file(targets_file);
    if (!target.empty()) out.push_back({target, "cli"});
    return out;
}

int cmd_probe(const std::string& target, const std::string& targets_file, int concurrency,
              double rate_limit) {
    auto targets = collect_targets(target, targets_file);
    if (targets.empty()) {
        std::cerr << "probe: no targets given\n";
        return report::kExitError;
    }
    probe::ProbeOptions opt;
    opt.timeouts.connect_s = env_int("MCPSCAN_CONNECT_TIMEOUT_S", opt.timeouts.connect_s);
    opt.timeouts.total_s = env_int("MCPSCAN_TOTAL_TIMEOUT_S", opt.timeouts.total_s);
    auto result = probe::validate_candidates(targets, concurrency, rate_limit, opt);
    std::cout << probe::validation_to_jsonl(result);
    return result.endpoints.empty() && !result.rejections.empty() ? report::kExitError
                                                                  : report::kExitClean;
}

int cmd_scan(scan::ScanConfig config, const std::string& out_path, const std::string& format,
             int proxy_port, int proxy_duration_s) {
    config.timeouts.connect_s = env_int("MCPSCAN_CONNECT_TIMEOUT_S", config.timeouts.connect_s);
    config.timeouts.total_s = env_int("MCPSCAN_TOTAL_TIMEOUT_S", config.timeouts.total_s);
    config.rate_limit = env_double("MCPSCAN_RATE_LIMIT", config.rate_limit);

    if (config.capture_source == scan::CaptureSource::live_proxy) {
        capture::CaptureRecorder recorder;
        auto proxy = net::LiveProxy::start(proxy_port, net::ProxyConfig{}, &recorder);
        std::cerr << "live proxy listening on 127.0.0.1:" << proxy->port() << " for "
                  << proxy_duration_s << "s; point the client's HTTP proxy here\n";
        std::signal(SIGINT, handle_sigint);
        for (int i = 0; i < proxy_duration_s * 10 && !g_interrupted; ++i)
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        proxy->stop();
        config.preloaded_capture = recorder.snapshot();
        std::cerr << "captured " << config.preloaded_capture.size() << " exchanges\n";
    }

    report::Report rep;
    bool operational_error = false;
    try {
        rep = scan::run_scan(config);
    } catch (const std::exception& e) {
        std::cerr << "scan: " << e.what() << "\n";
        return report::kExitError;
    }

    size_t reachable = 0;
    for (const auto& t : rep.targets)
        if (t.outcome == "scanned") ++reachable;
    if (reachable == 0) operational_error = true;

    std::string rendered = format == "markdown" ? report::report_to_markdown(rep)
                                                : report::report_to_json(rep).dump(2) + "\n";
    if (out_path.empty() || out_path == "-") {
        std::cout << rendered;
    } else {
        report::write_file_atomic(out_path, rendered);
        std::cerr << "report written to " << out_path << "\n";
    }
    return report::exit_code_for(rep, operational_error);
}

int cmd_flawlab(lab::FlawLabConfig config, const std::string& config_file,
                const std::string& script, const std::string& capture_out,
                const std::string& log_file, bool print_config) {
    if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in.good()) {
            std::cerr << "flawlab: cannot read config " << config_file << "\n";
            return report::kExitError;
        }
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::string err;
        auto parsed = lab::FlawLabConfig::from_json(text, &err);
        if (!parsed) {
            std::cerr << "flawlab: bad config: " << err << "\n";
            return report::kExitError;
        }
        config = *parsed;
    }
    if (print_config) {
        std::cout << config.to_json() << "\n";
        return report::kExitClean;
    }

    std::unique_ptr<lab::Lab> the_lab;
    try {
        the_lab = lab::Lab::spawn(config);
    } catch (const lab::ConfigError& e) {
        std::cerr << "flawlab: " << e.what() << "\n";
        return report::kExitError;
    }

    std::cout << "mcp_url=" << the_lab->mcp_url() << "\n";
    std::cout << "auth_origin=" << the_lab->auth_origin() << "\n";
    if (auto up = the_lab->upstream_origin()) std::cout << "upstream_origin=" << *up << "\n";
    std::cout.flush();

    int rc = report::kExitClean;
    if (!script.empty()) {
        lab::Script s = script == "delegated_flow"   ? lab::Script::delegated_flow
                        : script == "two_interleaved" ? lab::Script::two_interleaved
                                                       : lab::Script::plain_flow;
        try {
            auto exchanges = lab::scripted_session(*the_lab, s);
            const std::string path = capture_out.empty() ? "flawlab-capture.jsonl" : capture_out;
            capture::write_flow_log(path, exchanges);
            std::cout << "capture written to " << path << " (" << exchanges.size()
                      << " exchanges)\n";
        } catch (const std::exception& e) {
            std::cerr << "flawlab: scripted session failed: " << e.what() << "\n";
            rc = report::kExitError;
        }
    } else {
        std::signal(SIGINT, handle_sigint);
        std::cerr << "serving; Ctrl-C to stop\n";
        while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }

    if (!log_file.empty()) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& e : the_lab->request_log()) {
            arr.push_back({{"seq", e.seq},
                           {"server_role", e.server_role},
                           {"method", e.method},
                           {"target", e.target},
                           {"status", e.status}});
        }
        report::write_file_atomic(log_file, arr.dump(2) + "\n");
        std::cerr << "request log written to " << log_file << "\n";
    }
    the_lab->stop();
    return rc;
}

int cmd_reconstruct(const std::string& capture_path, const std::string& target_origin) {
    capture::IngestStats stats;
    std::vector<capture::HttpExchange> exchanges;
    try {
        exchanges = capture::ingest_flow_log(capture_path, &stats);
    } catch (const std::exception& e) {
        std::cerr << "reconstruct: " << e.what() << "\n";
        return report::kExitError;
    }
    std::optional<Url> origin;
    if (!target_origin.empty()) origin = Url::parse(target_origin);
    flows::ReconstructionStats rstats;
    auto lifecycles = flows::reconstruct_exchanges(exchanges, origin, &rstats);
    auto chains = flows::link_delegated(lifecycles);

    nlohmann::ordered_json out;
    out["exchanges"] = stats.total == 0 ? exchanges.size() : stats.total;
    out["params_extracted"] = rstats.params_in;
    nlohmann::ordered_json lcs = nlohmann::ordered_json::array();
    for (const auto& lc : lifecycles) lcs.push_back(flows::lifecycle_to_json(lc));
    out["lifecycles"] = lcs;
    nlohmann::ordered_json chs = nlohmann::ordered_json::array();
    for (const auto& ch : chains) chs.push_back(flows::chain_to_json(ch));
    out["chains"] = chs;
    std::cout << out.dump(2) << "\n";
    return report::kExitClean;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MCP OAuth authentication scanner"};
    app.require_subcommand(1);

    // --- probe ---
    auto* probe_cmd = app.add_subcommand("probe", "Validate MCP endpoints and classify auth");
    std::string p_target, p_targets_file;
    int p_concurrency = 4;
    double p_rate = 2.0;
    probe_cmd->add_option("--target", p_target, "Single target URL");
    probe_cmd->add_option("--targets", p_targets_file, "Target list file (url[,label] per line)");
    probe_cmd->add_option("--concurrency", p_concurrency, "Concurrent probes");
    probe_cmd->add_option("--rate-limit", p_rate, "Requests/second per host (loopback exempt)");

    // --- scan ---
    auto* scan_cmd = app.add_subcommand("scan", "Run the detection pipeline against targets");
    std::string s_target, s_targets_file, s_mode = "full", s_capture_source = "drive";
    std::string s_capture, s_out, s_format = "json", s_catcher = "127.0.0.1:0";
    std::string s_consent = "heuristic", s_bundle, s_scope = "mcp";
    int s_concurrency = 4, s_max_hops = 5, s_max_probes = 8;
    int s_proxy_port = 0, s_proxy_duration = 60;
    double s_rate = 2.0;
    bool s_dry_run = false;
    scan_cmd->add_option("--target", s_target, "Single target URL");
    scan_cmd->add_option("--targets", s_targets_file, "Target list file");
    scan_cmd->add_option("--mode", s_mode, "passive_only | active | full")
        ->check(CLI::IsMember({"passive_only", "active", "full"}));
    scan_cmd->add_option("--capture-source", s_capture_source, "drive | flow_log | live_proxy")
        ->check(CLI::IsMember({"drive", "flow_log", "live_proxy"}));
    scan_cmd->add_option("--capture", s_capture, "Flow log (native JSONL or HAR)");
    scan_cmd->add_option("--out", s_out, "Report path (- for stdout)");
    scan_cmd->add_option("--format", s_format, "json | markdown")
        ->check(CLI::IsMember({"json", "markdown"}));
    scan_cmd->add_option("--budget.max-hops", s_max_hops, "Redirect hop budget per probe");
    scan_cmd->add_option("--budget.max-probes", s_max_probes, "Probe budget per flaw");
    scan_cmd->add_flag("--dry-run", s_dry_run, "Plan probes without sending them");
    scan_cmd->add_option("--catcher", s_catcher, "Callback catcher bind address host:port");
    scan_cmd->add_option("--concurrency", s_concurrency, "Concurrent targets");
    scan_cmd->add_option("--rate-limit", s_rate, "Requests/second per host (loopback exempt)");
    scan_cmd->add_option("--scope", s_scope, "OAuth scope to request");
    scan_cmd->add_option("--consent", s_consent, "heuristic | interactive | bundle-only")
        ->check(CLI::IsMember({"heuristic", "interactive", "bundle-only"}));
    scan_cmd->add_option("--bundle", s_bundle, "Write the consent test-link bundle here");
    scan_cmd->add_option("--proxy-port", s_proxy_port, "live_proxy listen port (0 = any)");
    scan_cmd->add_option("--proxy-duration", s_proxy_duration, "live_proxy capture seconds");

    // --- flawlab ---
    auto* lab_cmd = app.add_subcommand("flawlab", "Host the flaw-toggleable mock deployment");
    std::string l_flags, l_variants, l_config, l_script, l_capture_out, l_log_file;
    std::string l_auth_mode = "oauth";
    bool l_delegated = false, l_print = false;
    uint64_t l_seed = 1;
    int l_mcp_port = 0, l_auth_port = 0, l_up_port = 0, l_hops = 0;
    lab_cmd->add_option("--flags", l_flags, "Seeded flaws, e.g. F1,F5");
    lab_cmd->add_option("--variant", l_variants, "Variants, e.g. F5=strip,F7=weak,F8=omit");
    lab_cmd->add_flag("--delegated", l_delegated, "Enable the upstream delegated layer");
    lab_cmd->add_option("--auth-mode", l_auth_mode, "oauth | static_token | none")
        ->check(CLI::IsMember({"oauth", "static_token", "none"}));
    lab_cmd->add_option("--seed", l_seed, "Deterministic artifact seed");
    lab_cmd->add_option("--mcp-port", l_mcp_port, "MCP listener port (0 = any)");
    lab_cmd->add_option("--auth-port", l_auth_port, "Authorization server port (0 = any)");
    lab_cmd->add_option("--upstream-port", l_up_port, "Upstream service port (0 = any)");
    lab_cmd->add_option("--authorize-hops", l_hops, "Redirect hops before /authorize validates");
    lab_cmd->add_option("--config", l_config, "JSON config file (overrides other options)");
    lab_cmd->add_option("--script", l_script,
                        "Run a scripted session and exit: plain_flow | delegated_flow | "
                        "two_interleaved")
        ->check(CLI::IsMember({"plain_flow", "delegated_flow", "two_interleaved"}));
    lab_cmd->add_option("--capture-out", l_capture_out, "Where the scripted capture is written");
    lab_cmd->add_option("--log-file", l_log_file, "Dump the request log here on shutdown");
    lab_cmd->add_flag("--print-config", l_print, "Print the effective config JSON and exit");

    // --- reconstruct ---
    auto* rec_cmd = app.add_subcommand("reconstruct", "Dump lifecycles from a capture file");
    std::string r_capture, r_origin;
    rec_cmd->add_option("--capture", r_capture, "Flow log (native JSONL or HAR)")->required();
    rec_cmd->add_option("--target-origin", r_origin, "MCP server origin for layer refinement");

    CLI11_PARSE(app, argc, argv);

    if (probe_cmd->parsed()) return cmd_probe(p_target, p_targets_file, p_concurrency, p_rate);

    if (scan_cmd->parsed()) {
        scan::ScanConfig config;
        config.targets = collect_targets(s_target, s_targets_file);
        if (config.targets.empty()) {
            std::cerr << "scan: no targets given\n";
            return report::kExitError;
        }
        config.mode = s_mode == "passive_only" ? scan::Mode::passive_only
                      : s_mode == "active"     ? scan::Mode::active
                                               : scan::Mode::full;
        config.capture_source = s_capture_source == "flow_log" ? scan::CaptureSource::flow_log
                                : s_capture_source == "live_proxy"
                                    ? scan::CaptureSource::live_proxy
                                    : scan::CaptureSource::drive;
        config.capture_path = s_capture;
        config.budget.max_redirect_hops = s_max_hops;
        config.budget.max_probes_per_flaw = s_max_probes;
        config.budget.dry_run = s_dry_run;
        config.catcher_address = s_catcher;
        config.concurrency = s_concurrency;
        config.rate_limit = s_rate;
        config.scope = s_scope;
        config.consent = s_consent == "interactive"   ? scan::ConsentMode::interactive
                         : s_consent == "bundle-only" ? scan::ConsentMode::bundle_only
                                                      : scan::ConsentMode::html_heuristic;
        config.bundle_path = s_bundle;
        return cmd_scan(std::move(config), s_out, s_format, s_proxy_port, s_proxy_duration);
    }

    if (lab_cmd->parsed()) {
        lab::FlawLabConfig config;
        for (const auto& f : str::split(l_flags, ',')) {
            auto t = str::trim(f);
            if (t.size() == 2 && (t[0] == 'F' || t[0] == 'f') && t[1] >= '1' && t[1] <= '9')
                config.set_flag(t[1] - '0', true);
            else if (!t.empty()) {
                std::cerr << "flawlab: unknown flag " << t << "\n";
                return report::kExitError;
            }
        }
        for (const auto& v : str::split(l_variants, ',')) {
            auto t = str::trim(v);
            if (t.empty()) continue;
            auto eq = t.find('=');
            if (eq == std::string::npos) {
                std::cerr << "flawlab: bad variant " << t << "\n";
                return report::kExitError;
            }
            std::string key = str::to_lower(t.substr(0, eq)), val = t.substr(eq + 1);
            if (key == "f5") config.f5_variant = val;
            else if (key == "f7") config.f7_variant = val;
            else if (key == "f8") config.f8_variant = val;
        }
        config.delegated_mode = l_delegated;
        config.auth_mode = l_auth_mode == "none"           ? lab::AuthMode::none
                           : l_auth_mode == "static_token" ? lab::AuthMode::static_token
                                                           : lab::AuthMode::oauth;
        config.seed = l_seed;
        config.mcp_port = l_mcp_port;
        config.auth_port = l_auth_port;
        config.upstream_port = l_up_port;
        config.authorize_hops = l_hops;
        return cmd_flawlab(std::move(config), l_config, l_script, l_capture_out, l_log_file,
                           l_print);
    }

    if (rec_cmd->parsed()) return cmd_reconstruct(r_capture, r_origin);
    return report::kExitError;
}
