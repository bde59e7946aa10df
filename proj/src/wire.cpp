#include "ppml/wire.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <condition_variable>
#include <cstring>
#include <deque>

namespace ppml::wire {

namespace {

using Kind = WireError::Kind;

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

void check_payload(const Frame& f) {
    if (f.payload.size() > kMaxPayload) {
        throw WireError(Kind::malformed, "frame payload exceeds " + std::to_string(kMaxPayload) + " bytes");
    }
}

class TcpConnection : public Connection {
public:
    TcpConnection(int fd, std::string peer) : fd_(fd), peer_(std::move(peer)) {
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }
    ~TcpConnection() override {
        if (fd_ >= 0) ::close(fd_);
    }

    void send(const Frame& frame) override {
        check_payload(frame);
        auto bytes = encode_frame(frame);
        std::lock_guard lock(send_mu_);
        std::size_t done = 0;
        while (done < bytes.size()) {
            auto n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw WireError(errno == EPIPE || errno == ECONNRESET ? Kind::closed : Kind::io, errno_text("send"));
            }
            done += static_cast<std::size_t>(n);
        }
    }

    Frame recv() override {
        std::uint8_t header[kFrameHeaderSize];
        read_exact(header, sizeof header, true);
        auto len = get_u32_be(ByteView(header, 4));
        if (len > kMaxPayload) throw WireError(Kind::malformed, "oversized frame");
        Frame f;
        f.type = header[4];
        f.payload.resize(len);
        if (len) read_exact(f.payload.data(), len, false);
        return f;
    }

    void set_recv_timeout(std::chrono::milliseconds timeout) override { timeout_ = timeout; }

    void close() override { ::shutdown(fd_, SHUT_RDWR); }

    std::string peer() const override { return peer_; }

private:
    void read_exact(std::uint8_t* out, std::size_t n, bool frame_start) {
        std::size_t done = 0;
        while (done < n) {
            if (timeout_.count() > 0) {
                pollfd p{fd_, POLLIN, 0};
                int r = ::poll(&p, 1, static_cast<int>(timeout_.count()));
                if (r == 0) throw WireError(Kind::timeout, "receive timed out");
                if (r < 0) {
                    if (errno == EINTR) continue;
                    throw WireError(Kind::io, errno_text("poll"));
                }
            }
            auto got = ::recv(fd_, out + done, n - done, 0);
            if (got == 0) {
                if (frame_start && done == 0) throw WireError(Kind::closed, "connection closed");
                throw WireError(Kind::malformed, "connection closed mid-frame");
            }
            if (got < 0) {
                if (errno == EINTR) continue;
                throw WireError(errno == ECONNRESET ? Kind::closed : Kind::io, errno_text("recv"));
            }
            done += static_cast<std::size_t>(got);
        }
    }

    int fd_;
    std::string peer_;
    std::mutex send_mu_;
    std::chrono::milliseconds timeout_{0};
};

std::string describe(const sockaddr_storage& addr) {
    char host[NI_MAXHOST] = {};
    char serv[NI_MAXSERV] = {};
    if (::getnameinfo(reinterpret_cast<const sockaddr*>(&addr), sizeof addr, host, sizeof host, serv, sizeof serv,
                      NI_NUMERICHOST | NI_NUMERICSERV) != 0) {
        return "?";
    }
    return std::string(host) + ":" + serv;
}

struct AddrInfo {
    addrinfo* head = nullptr;
    AddrInfo(const Endpoint& ep, bool passive) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        if (passive) hints.ai_flags = AI_PASSIVE;
        auto port = std::to_string(ep.port);
        int rc = ::getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), port.c_str(), &hints, &head);
        if (rc != 0) throw WireError(Kind::io, "resolve " + ep.to_string() + ": " + ::gai_strerror(rc));
    }
    ~AddrInfo() {
        if (head) ::freeaddrinfo(head);
    }
};

// One direction of an in-memory pipe.
struct Queue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Frame> frames;
    bool closed = false;
};

class MemoryConnection : public Connection {
public:
    MemoryConnection(std::shared_ptr<Queue> in, std::shared_ptr<Queue> out, std::string name)
        : in_(std::move(in)), out_(std::move(out)), name_(std::move(name)) {}
    ~MemoryConnection() override { MemoryConnection::close(); }

    void send(const Frame& frame) override {
        check_payload(frame);
        std::lock_guard lock(out_->mu);
        if (out_->closed) throw WireError(Kind::closed, "connection closed");
        out_->frames.push_back(frame);
        out_->cv.notify_all();
    }

    Frame recv() override {
        std::unique_lock lock(in_->mu);
        auto ready = [&] { return !in_->frames.empty() || in_->closed; };
        if (timeout_.count() > 0) {
            if (!in_->cv.wait_for(lock, timeout_, ready)) throw WireError(Kind::timeout, "receive timed out");
        } else {
            in_->cv.wait(lock, ready);
        }
        if (in_->frames.empty()) throw WireError(Kind::closed, "connection closed");
        Frame f = std::move(in_->frames.front());
        in_->frames.pop_front();
        return f;
    }

    void set_recv_timeout(std::chrono::milliseconds timeout) override { timeout_ = timeout; }

    void close() override {
        for (auto* q : {in_.get(), out_.get()}) {
            std::lock_guard lock(q->mu);
            q->closed = true;
            q->cv.notify_all();
        }
    }

    std::string peer() const override { return name_; }

private:
    std::shared_ptr<Queue> in_;
    std::shared_ptr<Queue> out_;
    std::string name_;
    std::chrono::milliseconds timeout_{0};
};

}  // namespace

Bytes encode_frame(const Frame& f) {
    Bytes out;
    out.reserve(kFrameHeaderSize + f.payload.size());
    put_u32_be(out, static_cast<std::uint32_t>(f.payload.size()));
    out.push_back(f.type);
    append(out, f.payload);
    return out;
}

Endpoint parse_endpoint(std::string_view text) {
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon + 1 == text.size()) {
        throw std::invalid_argument("expected host:port, got '" + std::string(text) + "'");
    }
    Endpoint ep;
    ep.host = std::string(text.substr(0, colon));
    if (ep.host.size() >= 2 && ep.host.front() == '[' && ep.host.back() == ']') {
        ep.host = ep.host.substr(1, ep.host.size() - 2);
    }
    auto port = text.substr(colon + 1);
    auto [end, ec] = std::from_chars(port.data(), port.data() + port.size(), ep.port);
    if (ec != std::errc() || end != port.data() + port.size()) {
        throw std::invalid_argument("bad port in '" + std::string(text) + "'");
    }
    return ep;
}

TcpListener::TcpListener(const Endpoint& bind_to) : host_(bind_to.host) {
    AddrInfo ai(bind_to, true);
    int last_errno = 0;
    for (auto* a = ai.head; a; a = a->ai_next) {
        int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
        if (fd < 0) {
            last_errno = errno;
            continue;
        }
        int one = 1;
        ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
            fd_ = fd;
            break;
        }
        last_errno = errno;
        ::close(fd);
    }
    if (fd_ < 0) {
        errno = last_errno;
        throw WireError(Kind::io, errno_text(("bind " + bind_to.to_string()).c_str()));
    }
    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = addr.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
                                       : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
}

TcpListener::~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
}

ConnectionPtr TcpListener::accept(std::chrono::milliseconds timeout) {
    using clock = std::chrono::steady_clock;
    auto deadline = clock::now() + timeout;
    while (!closed_) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now());
        if (left.count() <= 0) return nullptr;
        pollfd p{fd_, POLLIN, 0};
        int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 100)));
        if (r < 0 && errno != EINTR) throw WireError(Kind::io, errno_text("poll"));
        if (r <= 0 || closed_) continue;
        sockaddr_storage addr{};
        socklen_t len = sizeof addr;
        int fd = ::accept4(fd_, reinterpret_cast<sockaddr*>(&addr), &len, SOCK_CLOEXEC);
        if (fd < 0) {
            if (errno == EINTR || errno == EAGAIN || errno == ECONNABORTED) continue;
            if (closed_) break;
            throw WireError(Kind::io, errno_text("accept"));
        }
        return std::make_unique<TcpConnection>(fd, describe(addr));
    }
    return nullptr;
}

void TcpListener::close() {
    if (!closed_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
}

ConnectionPtr tcp_connect(const Endpoint& to, std::chrono::milliseconds timeout) {
    AddrInfo ai(to, false);
    std::string last = "no addresses";
    for (auto* a = ai.head; a; a = a->ai_next) {
        int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, a->ai_protocol);
        if (fd < 0) continue;
        int rc = ::connect(fd, a->ai_addr, a->ai_addrlen);
        if (rc < 0 && errno == EINPROGRESS) {
            pollfd p{fd, POLLOUT, 0};
            rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
            if (rc == 0) {
                errno = ETIMEDOUT;
                rc = -1;
            } else if (rc > 0) {
                int err = 0;
                socklen_t len = sizeof err;
                ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
                errno = err;
                rc = err == 0 ? 0 : -1;
            }
        }
        if (rc == 0) {
            ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) & ~O_NONBLOCK);
            return std::make_unique<TcpConnection>(fd, to.to_string());
        }
        last = std::strerror(errno);
        ::close(fd);
    }
    throw WireError(Kind::io, "connect " + to.to_string() + ": " + last);
}

ConnectionServer::ConnectionServer(const Endpoint& bind_to, Handler handler, ErrorSink on_error)
    : listener_(bind_to), handler_(std::move(handler)), on_error_(std::move(on_error)) {
    acceptor_ = std::thread([this] { accept_loop(); });
}

ConnectionServer::~ConnectionServer() { stop(); }

void ConnectionServer::accept_loop() {
    while (!stopping_) {
        ConnectionPtr conn;
        try {
            conn = listener_.accept(std::chrono::milliseconds(200));
        } catch (const std::exception& e) {
            if (on_error_) on_error_("listener", e);
            continue;
        }
        if (!conn) continue;
        std::lock_guard lock(mu_);
        if (stopping_) break;
        live_.insert(conn.get());
        workers_.emplace_back([this, c = std::shared_ptr<Connection>(std::move(conn))] {
            try {
                handler_(*c);
            } catch (const std::exception& e) {
                if (on_error_) on_error_(c->peer(), e);
            }
            c->close();
            std::lock_guard lock(mu_);
            live_.erase(c.get());
        });
    }
}

void ConnectionServer::stop() {
    {
        std::lock_guard lock(stop_mu_);
        if (stopped_) return;
        stopped_ = true;
    }
    stopping_ = true;
    listener_.close();
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> workers;
    {
        std::lock_guard lock(mu_);
        for (auto* c : live_) c->close();
        workers.swap(workers_);
    }
    for (auto& t : workers) t.join();
    stop_cv_.notify_all();
}

void ConnectionServer::wait() {
    std::unique_lock lock(stop_mu_);
    stop_cv_.wait(lock, [this] { return stopped_; });
}

std::pair<ConnectionPtr, ConnectionPtr> memory_pair() {
    auto a_to_b = std::make_shared<Queue>();
    auto b_to_a = std::make_shared<Queue>();
    return {std::make_unique<MemoryConnection>(b_to_a, a_to_b, "memory:b"),
            std::make_unique<MemoryConnection>(a_to_b, b_to_a, "memory:a")};
}

TapConnection::TapConnection(ConnectionPtr inner, Rewriter rewrite_out)
    : inner_(std::move(inner)), rewrite_out_(std::move(rewrite_out)) {}

void TapConnection::send(const Frame& frame) {
    std::optional<Frame> out = rewrite_out_ ? rewrite_out_(frame) : std::optional<Frame>(frame);
    if (!out) return;
    {
        std::lock_guard lock(mu_);
        events_.push_back({Direction::out, *out});
    }
    inner_->send(*out);
}

Frame TapConnection::recv() {
    Frame f = inner_->recv();
    std::lock_guard lock(mu_);
    events_.push_back({Direction::in, f});
    return f;
}

std::vector<TapConnection::Event> TapConnection::events() const {
    std::lock_guard lock(mu_);
    return events_;
}

}  // namespace ppml::wire
