#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "mcpscan/capture.hpp"
#include "mcpscan/http.hpp"

namespace mcpscan::net {

struct ProxyConfig {
    // Hosts the proxy will forward to; empty means any. Traffic the
    // operator does not own should be excluded here.
    std::vector<std::string> allowed_hosts;
    Timeouts timeouts;
};

// Recording forward proxy for plaintext HTTP. Each proxied request/response
// is appended to the capture recorder with a per-connection session tag.
// CONNECT requests are tunneled opaquely and never recorded: the proxy does
// not terminate TLS, so traffic inside a tunnel stays out of the capture.
class LiveProxy {
   public:
    ~LiveProxy();

    // Binds 127.0.0.1:port (port 0 picks a free one). Throws on bind failure.
    static std::unique_ptr<LiveProxy> start(int port, const ProxyConfig& config,
                                            capture::CaptureRecorder* recorder);

    int port() const { return port_; }
    void stop();

   private:
    LiveProxy() = default;
    void accept_loop();
    void handle_connection(int fd, long long conn_id);

    int listen_fd_ = -1;
    int port_ = 0;
    ProxyConfig config_;
    capture::CaptureRecorder* recorder_ = nullptr;
    std::atomic<bool> running_{false};
    std::atomic<long long> next_conn_{1};
    std::thread accept_thread_;
    std::mutex workers_mutex_;
    std::vector<std::thread> workers_;
};

}  // namespace mcpscan::net
