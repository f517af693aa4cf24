#include "mcpscan/proxy.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <stdexcept>

#include "mcpscan/strings.hpp"

namespace mcpscan::net {

namespace {

bool read_until_headers(int fd, std::string& buf) {
    char chunk[4096];
    while (buf.find("\r\n\r\n") == std::string::npos) {
        if (buf.size() > 1 << 20) return false;
        ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0) return false;
        buf.append(chunk, static_cast<size_t>(n));
    }
    return true;
}

int connect_to(const std::string& host, int port, int timeout_s) {
    struct addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    struct addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0)
        return -1;
    int fd = -1;
    for (auto* p = res; p; p = p->ai_next) {
        fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
        if (fd < 0) continue;
        struct timeval tv{timeout_s, 0};
        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
        ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
        if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    return fd;
}

void pump(int a, int b) {
    struct pollfd fds[2] = {{a, POLLIN, 0}, {b, POLLIN, 0}};
    char buf[8192];
    for (;;) {
        if (::poll(fds, 2, 30000) <= 0) return;
        for (int i = 0; i < 2; ++i) {
            if (fds[i].revents & (POLLIN | POLLHUP)) {
                ssize_t n = ::recv(fds[i].fd, buf, sizeof(buf), 0);
                if (n <= 0) return;
                int other = (i == 0) ? b : a;
                ssize_t off = 0;
                while (off < n) {
                    ssize_t w = ::send(other, buf + off, n - off, MSG_NOSIGNAL);
                    if (w <= 0) return;
                    off += w;
                }
            }
            if (fds[i].revents & (POLLERR | POLLNVAL)) return;
        }
    }
}

void send_all(int fd, std::string_view data) {
    size_t off = 0;
    while (off < data.size()) {
        ssize_t w = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
        if (w <= 0) return;
        off += static_cast<size_t>(w);
    }
}

void send_simple(int fd, int status, const std::string& reason) {
    std::string head = "HTTP/1.1 " + std::to_string(status) + " " + reason +
                       "\r\nConnection: close\r\nContent-Length: 0\r\n\r\n";
    send_all(fd, head);
}

}  // namespace

std::unique_ptr<LiveProxy> LiveProxy::start(int port, const ProxyConfig& config,
                                            capture::CaptureRecorder* recorder) {
    auto proxy = std::unique_ptr<LiveProxy>(new LiveProxy());
    proxy->config_ = config;
    proxy->recorder_ = recorder;

    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error("proxy: socket() failed");
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    struct sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<uint16_t>(port));
    if (::bind(fd, reinterpret_cast<struct sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw std::runtime_error("proxy: cannot bind 127.0.0.1:" + std::to_string(port));
    }
    if (::listen(fd, 32) != 0) {
        ::close(fd);
        throw std::runtime_error("proxy: listen() failed");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd, reinterpret_cast<struct sockaddr*>(&addr), &len);
    proxy->port_ = ntohs(addr.sin_port);
    proxy->listen_fd_ = fd;
    proxy->running_ = true;
    proxy->accept_thread_ = std::thread([p = proxy.get()] { p->accept_loop(); });
    return proxy;
}

LiveProxy::~LiveProxy() { stop(); }

void LiveProxy::stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (accept_thread_.joinable()) accept_thread_.join();
    std::lock_guard<std::mutex> lock(workers_mutex_);
    for (auto& t : workers_) {
        if (t.joinable()) t.join();
    }
    workers_.clear();
}

void LiveProxy::accept_loop() {
    while (running_) {
        int client = ::accept(listen_fd_, nullptr, nullptr);
        if (client < 0) {
            if (!running_) return;
            continue;
        }
        long long id = next_conn_++;
        std::lock_guard<std::mutex> lock(workers_mutex_);
        workers_.emplace_back([this, client, id] { handle_connection(client, id); });
    }
}

void LiveProxy::handle_connection(int fd, long long conn_id) {
    std::string buf;
    if (!read_until_headers(fd, buf)) {
        ::close(fd);
        return;
    }
    size_t head_end = buf.find("\r\n\r\n");
    std::string head = buf.substr(0, head_end);
    std::string rest = buf.substr(head_end + 4);

    auto lines = str::split(head, '\n');
    std::string request_line = str::trim(lines.empty() ? "" : lines[0]);
    auto parts = str::split(request_line, ' ');
    if (parts.size() < 3) {
        send_simple(fd, 400, "Bad Request");
        ::close(fd);
        return;
    }
    const std::string& method = parts[0];
    const std::string& target = parts[1];

    capture::HeaderList req_headers;
    size_t content_length = 0;
    for (size_t i = 1; i < lines.size(); ++i) {
        std::string line = str::trim(lines[i]);
        if (line.empty()) continue;
        size_t colon = line.find(':');
        if (colon == std::string::npos) continue;
        std::string k = str::trim(line.substr(0, colon));
        std::string v = str::trim(line.substr(colon + 1));
        if (str::iequals(k, "Content-Length")) content_length = std::stoul(v);
        if (str::iequals(k, "Proxy-Connection")) continue;
        req_headers.emplace_back(k, v);
    }

    if (method == "CONNECT") {
        // Opaque tunnel: never recorded.
        auto hp = str::split(target, ':');
        if (hp.size() != 2) {
            send_simple(fd, 400, "Bad Request");
            ::close(fd);
            return;
        }
        if (!config_.allowed_hosts.empty()) {
            bool allowed = false;
            for (const auto& h : config_.allowed_hosts)
                if (str::iequals(h, hp[0])) allowed = true;
            if (!allowed) {
                send_simple(fd, 403, "Forbidden");
                ::close(fd);
                return;
            }
        }
        int upstream = connect_to(hp[0], std::stoi(hp[1]), config_.timeouts.connect_s);
        if (upstream < 0) {
            send_simple(fd, 502, "Bad Gateway");
            ::close(fd);
            return;
        }
        send_all(fd, "HTTP/1.1 200 Connection Established\r\n\r\n");
        if (!rest.empty()) send_all(upstream, rest);
        pump(fd, upstream);
        ::close(upstream);
        ::close(fd);
        return;
    }

    auto url = Url::parse(target);
    if (!url || url->scheme != "http") {
        send_simple(fd, 400, "Bad Request");
        ::close(fd);
        return;
    }
    if (!config_.allowed_hosts.empty()) {
        bool allowed = false;
        for (const auto& h : config_.allowed_hosts)
            if (str::iequals(h, url->host)) allowed = true;
        if (!allowed) {
            send_simple(fd, 403, "Forbidden");
            ::close(fd);
            return;
        }
    }

    std::string body = rest;
    char chunk[4096];
    while (body.size() < content_length) {
        ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0) break;
        body.append(chunk, static_cast<size_t>(n));
    }
    body.resize(std::min(body.size(), content_length));

    Client cli(config_.timeouts, recorder_, "conn-" + std::to_string(conn_id));
    Request req;
    req.method = method;
    req.url = target;
    req.body = body;
    for (const auto& [k, v] : req_headers) {
        if (str::iequals(k, "Host") || str::iequals(k, "Content-Length") ||
            str::iequals(k, "Connection"))
            continue;
        if (str::iequals(k, "Content-Type")) {
            req.content_type = v;
            continue;
        }
        req.headers.emplace_back(k, v);
    }
    Response res = cli.send(req);

    if (!res.ok) {
        send_simple(fd, 502, "Bad Gateway");
        ::close(fd);
        return;
    }
    std::string out = "HTTP/1.1 " + std::to_string(res.status) + " proxied\r\n";
    for (const auto& [k, v] : res.headers) {
        if (str::iequals(k, "Transfer-Encoding") || str::iequals(k, "Connection") ||
            str::iequals(k, "Content-Length"))
            continue;
        out += k + ": " + v + "\r\n";
    }
    out += "Content-Length: " + std::to_string(res.body.size()) + "\r\n";
    out += "Connection: close\r\n\r\n";
    out += res.body;
    send_all(fd, out);
    ::close(fd);
}

}  // namespace mcpscan::net
