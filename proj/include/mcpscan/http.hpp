#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mcpscan/capture.hpp"
#include "mcpscan/url.hpp"

namespace mcpscan::net {

struct Timeouts {
    int connect_s = 10;
    int total_s = 30;
};

struct Request {
    std::string method = "GET";
    std::string url;
    capture::HeaderList headers;
    std::string body;
    std::string content_type;
};

struct Response {
    bool ok = false;  // a response was received (any status)
    int status = 0;
    capture::HeaderList headers;
    std::string body;
    std::string error;  // transport error description when !ok

    std::optional<std::string> header(std::string_view name) const;
};

// Per-host politeness limiter. Loopback targets are exempt: the budget
// exists to avoid hammering third-party servers, not fixtures we own.
class RateLimiter {
   public:
    explicit RateLimiter(double requests_per_second);
    void acquire(const std::string& host);

   private:
    double min_interval_ms_;
    std::mutex mutex_;
    std::map<std::string, long long> last_request_ms_;
};

struct Hop {
    std::string url;
    int status = 0;
    std::string location;
};

struct FollowResult {
    Response final;
    std::string final_url;
    std::vector<Hop> hops;      // redirect responses that were followed
    bool truncated = false;     // still redirecting when the hop budget ran out
};

// Thin HTTP(S) client. Redirects are never followed implicitly; callers use
// send_following with an explicit hop budget. When a recorder is attached,
// every wire exchange is appended to it.
class Client {
   public:
    explicit Client(Timeouts timeouts = {}, capture::CaptureRecorder* recorder = nullptr,
                    std::string session_tag = "");

    Response send(const Request& req);
    FollowResult send_following(const Request& req, int max_hops);

    void set_recorder(capture::CaptureRecorder* recorder, std::string session_tag);
    void set_rate_limiter(std::shared_ptr<RateLimiter> limiter);
    const Timeouts& timeouts() const { return timeouts_; }

   private:
    Timeouts timeouts_;
    capture::CaptureRecorder* recorder_;
    std::string session_tag_;
    std::shared_ptr<RateLimiter> limiter_;
};

std::string resolve_location(const Url& base, const std::string& location);

}  // namespace mcpscan::net
