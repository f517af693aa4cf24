#include "mcpscan/http.hpp"

#include <algorithm>
#include <thread>

#include "mcpscan/http_deps.hpp"
#include "mcpscan/strings.hpp"

namespace mcpscan::net {

std::optional<std::string> Response::header(std::string_view name) const {
    for (const auto& [k, v] : headers) {
        if (str::iequals(k, name)) return v;
    }
    return std::nullopt;
}

RateLimiter::RateLimiter(double requests_per_second)
    : min_interval_ms_(requests_per_second > 0 ? 1000.0 / requests_per_second : 0.0) {}

void RateLimiter::acquire(const std::string& host) {
    if (min_interval_ms_ <= 0.0 || is_loopback_host(host)) return;
    long long wait = 0;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        const long long now = str::now_ms();
        auto it = last_request_ms_.find(host);
        long long earliest =
            (it == last_request_ms_.end()) ? now : it->second + static_cast<long long>(min_interval_ms_);
        long long scheduled = std::max(now, earliest);
        last_request_ms_[host] = scheduled;
        wait = scheduled - now;
    }
    if (wait > 0) std::this_thread::sleep_for(std::chrono::milliseconds(wait));
}

Client::Client(Timeouts timeouts, capture::CaptureRecorder* recorder, std::string session_tag)
    : timeouts_(timeouts), recorder_(recorder), session_tag_(std::move(session_tag)) {}

void Client::set_recorder(capture::CaptureRecorder* recorder, std::string session_tag) {
    recorder_ = recorder;
    session_tag_ = std::move(session_tag);
}

void Client::set_rate_limiter(std::shared_ptr<RateLimiter> limiter) {
    limiter_ = std::move(limiter);
}

Response Client::send(const Request& req) {
    Response out;
    auto parsed = Url::parse(req.url);
    if (!parsed || !parsed->is_http()) {
        out.error = "malformed or non-http url: " + req.url;
        return out;
    }
    if (limiter_) limiter_->acquire(parsed->host);

    httplib::Client cli(parsed->origin());
    cli.set_connection_timeout(timeouts_.connect_s, 0);
    cli.set_read_timeout(timeouts_.total_s, 0);
    cli.set_write_timeout(timeouts_.total_s, 0);
    cli.set_follow_location(false);
    cli.enable_server_certificate_verification(false);

    httplib::Headers headers;
    for (const auto& [k, v] : req.headers) headers.emplace(k, v);

    const std::string target = parsed->path_query();
    httplib::Result res;
    const std::string content_type =
        req.content_type.empty() ? "application/octet-stream" : req.content_type;
    if (req.method == "GET") {
        res = cli.Get(target, headers);
    } else if (req.method == "POST") {
        res = cli.Post(target, headers, req.body, content_type);
    } else if (req.method == "PUT") {
        res = cli.Put(target, headers, req.body, content_type);
    } else if (req.method == "DELETE") {
        res = cli.Delete(target, headers, req.body, content_type);
    } else if (req.method == "HEAD") {
        res = cli.Head(target, headers);
    } else {
        out.error = "unsupported method: " + req.method;
        return out;
    }

    if (!res) {
        out.error = httplib::to_string(res.error());
    } else {
        out.ok = true;
        out.status = res->status;
        out.body = res->body;
        for (const auto& [k, v] : res->headers) out.headers.emplace_back(k, v);
    }

    if (recorder_) {
        capture::HttpExchange ex;
        ex.method = req.method;
        ex.url = req.url;
        ex.request_headers = req.headers;
        if (!req.content_type.empty())
            ex.request_headers.emplace_back("Content-Type", req.content_type);
        ex.request_body = req.body;
        ex.status = out.status;
        ex.response_headers = out.headers;
        ex.response_body = out.body;
        ex.session_tag = session_tag_;
        recorder_->append(std::move(ex));
    }
    return out;
}

std::string resolve_location(const Url& base, const std::string& location) {
    if (location.empty()) return "";
    if (location.find("://") != std::string::npos) return location;
    if (location.rfind("//", 0) == 0) return base.scheme + ":" + location;
    if (!location.empty() && location[0] == '/') return base.origin() + location;
    // Relative path: resolve against the base path's directory.
    std::string dir = base.path;
    size_t slash = dir.rfind('/');
    dir = (slash == std::string::npos) ? "/" : dir.substr(0, slash + 1);
    return base.origin() + dir + location;
}

FollowResult Client::send_following(const Request& req, int max_hops) {
    FollowResult out;
    Request current = req;
    for (;;) {
        Response res = send(current);
        out.final = res;
        out.final_url = current.url;
        if (!res.ok) return out;
        if (res.status < 300 || res.status >= 400) return out;
        auto location = res.header("Location");
        if (!location || location->empty()) return out;

        auto base = Url::parse(current.url);
        std::string next_url = base ? resolve_location(*base, *location) : *location;
        if (static_cast<int>(out.hops.size()) >= max_hops) {
            out.truncated = true;
            return out;
        }
        out.hops.push_back({current.url, res.status, next_url});
        auto next = Url::parse(next_url);
        if (!next || !next->is_http()) {
            // Redirect into a custom scheme cannot be followed; surface it.
            out.final_url = next_url;
            return out;
        }
        Request follow;
        follow.method = (res.status == 307 || res.status == 308) ? current.method : "GET";
        if (follow.method == "GET") {
            follow.body.clear();
            follow.content_type.clear();
        } else {
            follow.body = current.body;
            follow.content_type = current.content_type;
        }
        follow.url = next_url;
        // Carry non-entity headers forward.
        for (const auto& [k, v] : current.headers) {
            if (!str::iequals(k, "Content-Type") && !str::iequals(k, "Content-Length"))
                follow.headers.emplace_back(k, v);
        }
        current = follow;
    }
}

}  // namespace mcpscan::net
