#include "mcpscan/capture.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>

#include "mcpscan/strings.hpp"

namespace mcpscan::capture {

using nlohmann::json;
using nlohmann::ordered_json;

std::optional<std::string> HttpExchange::request_header(std::string_view name) const {
    for (const auto& [k, v] : request_headers)
        if (str::iequals(k, name)) return v;
    return std::nullopt;
}

std::optional<std::string> HttpExchange::response_header(std::string_view name) const {
    for (const auto& [k, v] : response_headers)
        if (str::iequals(k, name)) return v;
    return std::nullopt;
}

long long CaptureRecorder::append(HttpExchange ex) {
    std::lock_guard<std::mutex> lock(mutex_);
    ex.sequence_no = next_seq_++;
    if (ex.timestamp == 0) ex.timestamp = str::now_ms();
    long long seq = ex.sequence_no;
    exchanges_.push_back(std::move(ex));
    return seq;
}

std::vector<HttpExchange> CaptureRecorder::snapshot() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return exchanges_;
}

size_t CaptureRecorder::size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return exchanges_.size();
}

bool OAuthParamSet::has_any() const {
    return redirect_uri || client_id || code_challenge || code_challenge_method || state ||
           code || error || grant_type || token_endpoint_hit;
}

const char* layer_name(Layer layer) {
    switch (layer) {
        case Layer::l1_local_client: return "L1";
        case Layer::l2_upstream_delegated: return "L2";
        case Layer::unknown: return "unknown";
    }
    return "unknown";
}

namespace {

struct FieldSink {
    OAuthParamSet& out;
    std::vector<std::string>& malformed;

    void take(const std::string& key, const std::string& value) {
        auto set = [&](std::optional<std::string>& slot) {
            if (!slot) slot = value;
        };
        if (key == "redirect_uri") set(out.redirect_uri);
        else if (key == "client_id") set(out.client_id);
        else if (key == "code_challenge") set(out.code_challenge);
        else if (key == "code_challenge_method") set(out.code_challenge_method);
        else if (key == "state") set(out.state);
        else if (key == "code") set(out.code);
        else if (key == "error") set(out.error);
        else if (key == "grant_type") {
            set(out.grant_type);
            out.token_endpoint_hit = true;
        }
    }

    void take_query(std::string_view raw) {
        std::vector<std::string> bad;
        for (const auto& [k, v] : parse_query(raw, &bad)) take(k, v);
        for (auto& k : bad) malformed.push_back(k);
    }
};

bool body_is_form(const HttpExchange& ex) {
    auto ct = ex.request_header("Content-Type");
    if (ct && str::icontains(*ct, "application/x-www-form-urlencoded")) return true;
    if (ct) return false;
    // No content type: treat k=v&k=v shaped bodies as forms.
    if (ex.request_body.empty() || ex.request_body.find('=') == std::string::npos) return false;
    return ex.request_body.find('{') == std::string::npos &&
           ex.request_body.find('\n') == std::string::npos;
}

bool body_is_json(const HttpExchange& ex) {
    auto ct = ex.request_header("Content-Type");
    if (ct && str::icontains(*ct, "application/json")) return true;
    if (ct) return false;
    auto t = str::trim(ex.request_body);
    return !t.empty() && t.front() == '{';
}

}  // namespace

std::optional<OAuthParamSet> extract_oauth_params(const HttpExchange& ex) {
    OAuthParamSet out;
    out.exchange_ref = ex.sequence_no;
    FieldSink sink{out, out.raw_flagged};

    if (auto url = Url::parse(ex.url)) {
        sink.take_query(url->query);
        sink.take_query(url->fragment);
    }
    if (body_is_form(ex)) {
        sink.take_query(ex.request_body);
    } else if (body_is_json(ex)) {
        auto parsed = json::parse(ex.request_body, nullptr, false);
        if (parsed.is_object()) {
            for (auto& [k, v] : parsed.items()) {
                if (v.is_string()) sink.take(k, v.get<std::string>());
            }
        }
    }

    // A Location header contributes a completed authorization response:
    // code or error together with the echoed state. Other redirect targets
    // (login hops, upstream handoffs) are navigation, not parameters of
    // this exchange, and harvesting them would invent authorization
    // requests that never went over the wire as such.
    if (auto loc = ex.response_header("Location")) {
        std::string query_part;
        if (auto loc_url = Url::parse(*loc)) {
            query_part = loc_url->query;
            if (query_part.empty()) query_part = loc_url->fragment;
        } else if (auto q = loc->find('?'); q != std::string::npos) {
            query_part = loc->substr(q + 1);
        }
        if (!query_part.empty()) {
            std::vector<std::string> bad;
            Query q = parse_query(query_part, &bad);
            auto code = query_get(q, "code");
            auto err = query_get(q, "error");
            if (code || err) {
                if (code && !out.code) out.code = *code;
                if (err && !out.error) out.error = *err;
                if (auto st = query_get(q, "state"); st && !out.state) out.state = *st;
                for (auto& k : bad) out.raw_flagged.push_back(k);
            }
        }
    }

    if (!out.has_any()) return std::nullopt;
    return out;
}

Layer classify_layer(const std::string& redirect_uri) {
    auto url = Url::parse(redirect_uri);
    if (!url) return Layer::unknown;
    if (!url->is_http()) return Layer::l1_local_client;  // custom scheme
    if (is_loopback_host(url->host)) return Layer::l1_local_client;
    return Layer::l2_upstream_delegated;
}

namespace {
std::string registrable_suffix(const std::string& host) {
    auto labels = str::split(host, '.');
    if (labels.size() < 2) return host;
    return labels[labels.size() - 2] + "." + labels[labels.size() - 1];
}
}  // namespace

Layer refine_layer(Layer base, const OAuthParamSet& params,
                   const std::optional<Url>& target_origin) {
    if (!target_origin || !params.redirect_uri) return base;
    auto cb = Url::parse(*params.redirect_uri);
    if (!cb || !cb->is_http()) return base;
    if (is_loopback_host(cb->host)) {
        // Loopback callbacks normally mean a local client; when they point
        // at the scanned server's own listener they are the delegated hop.
        if (is_loopback_host(target_origin->host) &&
            cb->host_port() == target_origin->host_port())
            return Layer::l2_upstream_delegated;
        return base;
    }
    if (registrable_suffix(cb->host) == registrable_suffix(target_origin->host))
        return Layer::l2_upstream_delegated;
    return base;
}

// ---------------------------------------------------------------------------
// Flow-log formats

std::string exchange_to_json_line(const HttpExchange& ex) {
    ordered_json j;
    j["sequence_no"] = ex.sequence_no;
    j["timestamp"] = ex.timestamp;
    j["method"] = ex.method;
    j["url"] = ex.url;
    auto headers = [](const HeaderList& hl) {
        ordered_json arr = ordered_json::array();
        for (const auto& [k, v] : hl) arr.push_back(ordered_json::array({k, v}));
        return arr;
    };
    j["request_headers"] = headers(ex.request_headers);
    j["request_body"] = str::base64url_encode(ex.request_body);
    j["status"] = ex.status;
    j["response_headers"] = headers(ex.response_headers);
    j["response_body"] = str::base64url_encode(ex.response_body);
    j["session_tag"] = ex.session_tag;
    return j.dump();
}

namespace {

std::optional<HttpExchange> exchange_from_json(const json& j) {
    if (!j.is_object()) return std::nullopt;
    HttpExchange ex;
    try {
        ex.sequence_no = j.at("sequence_no").get<long long>();
        ex.timestamp = j.at("timestamp").get<long long>();
        ex.method = j.at("method").get<std::string>();
        ex.url = j.at("url").get<std::string>();
        ex.status = j.at("status").get<int>();
        ex.session_tag = j.value("session_tag", "");
        auto headers = [](const json& arr) {
            HeaderList hl;
            for (const auto& h : arr) hl.emplace_back(h.at(0).get<std::string>(), h.at(1).get<std::string>());
            return hl;
        };
        ex.request_headers = headers(j.at("request_headers"));
        ex.response_headers = headers(j.at("response_headers"));
        auto req_body = str::base64url_decode(j.at("request_body").get<std::string>());
        auto res_body = str::base64url_decode(j.at("response_body").get<std::string>());
        if (!req_body || !res_body) return std::nullopt;
        ex.request_body = *req_body;
        ex.response_body = *res_body;
    } catch (const json::exception&) {
        return std::nullopt;
    }
    return ex;
}

std::vector<HttpExchange> ingest_har(const json& doc, IngestStats& stats) {
    std::vector<HttpExchange> out;
    const auto& entries = doc.at("log").at("entries");
    for (const auto& entry : entries) {
        ++stats.total;
        try {
            HttpExchange ex;
            if (auto ts = str::parse_iso8601_ms(entry.value("startedDateTime", "")))
                ex.timestamp = *ts;
            const auto& req = entry.at("request");
            ex.method = req.at("method").get<std::string>();
            ex.url = req.at("url").get<std::string>();
            if (req.contains("headers")) {
                for (const auto& h : req["headers"])
                    ex.request_headers.emplace_back(h.value("name", ""), h.value("value", ""));
            }
            if (req.contains("postData")) ex.request_body = req["postData"].value("text", "");
            const auto& res = entry.at("response");
            ex.status = res.at("status").get<int>();
            if (res.contains("headers")) {
                for (const auto& h : res["headers"])
                    ex.response_headers.emplace_back(h.value("name", ""), h.value("value", ""));
            }
            if (res.contains("content")) {
                std::string text = res["content"].value("text", "");
                if (res["content"].value("encoding", "") == "base64") {
                    if (auto decoded = str::base64url_decode(text)) text = *decoded;
                }
                ex.response_body = text;
            }
            ex.session_tag = entry.value("pageref", "har");
            out.push_back(std::move(ex));
        } catch (const json::exception&) {
            ++stats.skipped;
        }
    }
    return out;
}

}  // namespace

std::vector<HttpExchange> ingest_flow_log(const std::string& path, IngestStats* stats_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw IngestError("cannot open flow log: " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    IngestStats stats;
    std::vector<HttpExchange> out;

    const std::string trimmed = str::trim(content);
    bool is_har = false;
    if (!trimmed.empty() && trimmed.front() == '{') {
        auto doc = json::parse(trimmed, nullptr, false);
        if (doc.is_object() && doc.contains("log")) {
            is_har = true;
            out = ingest_har(doc, stats);
        }
    }
    if (!is_har) {
        size_t line_no = 0;
        for (const auto& line : str::split(content, '\n')) {
            ++line_no;
            auto t = str::trim(line);
            if (t.empty()) continue;
            ++stats.total;
            auto parsed = json::parse(t, nullptr, false);
            auto ex = parsed.is_discarded() ? std::nullopt : exchange_from_json(parsed);
            if (!ex) {
                ++stats.skipped;
                continue;
            }
            out.push_back(std::move(*ex));
        }
    }

    if (stats.total > 0 && stats.skipped * 10 > stats.total) {
        throw IngestError("flow log " + path + ": " + std::to_string(stats.skipped) + "/" +
                          std::to_string(stats.total) + " records unparseable");
    }

    std::stable_sort(out.begin(), out.end(), [](const HttpExchange& a, const HttpExchange& b) {
        return a.timestamp < b.timestamp;
    });
    // Re-number when ingesting external formats without sequence numbers.
    long long seq = 0;
    bool need_seq = false;
    for (const auto& ex : out)
        if (ex.sequence_no == 0) need_seq = true;
    if (need_seq) {
        for (auto& ex : out) ex.sequence_no = ++seq;
    }
    if (stats_out) *stats_out = stats;
    return out;
}

void write_flow_log(const std::string& path, const std::vector<HttpExchange>& exchanges) {
    std::ofstream outf(path, std::ios::binary | std::ios::trunc);
    if (!outf.good()) throw IngestError("cannot write flow log: " + path);
    for (const auto& ex : exchanges) outf << exchange_to_json_line(ex) << "\n";
}

}  // namespace mcpscan::capture
