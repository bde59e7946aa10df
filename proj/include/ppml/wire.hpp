#pragma once

// Frame transport shared by every service: u32 big-endian payload length,
// one type byte, payload. Layouts of individual messages: docs/WIRE.md.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ppml/bytes.hpp"

namespace ppml::wire {

inline constexpr std::size_t kMaxPayload = 1u << 20;
inline constexpr std::size_t kFrameHeaderSize = 5;

namespace msg {
// PCS (plaintext JSON)
inline constexpr std::uint8_t kPcsFetch = 0x01;
inline constexpr std::uint8_t kPcsRegister = 0x02;
inline constexpr std::uint8_t kPcsRevoke = 0x03;
inline constexpr std::uint8_t kPcsGetRoot = 0x04;
inline constexpr std::uint8_t kPcsGetCrl = 0x05;
inline constexpr std::uint8_t kPcsOk = 0x0e;
inline constexpr std::uint8_t kPcsError = 0x0f;
// attested handshake
inline constexpr std::uint8_t kAlert = 0x15;
inline constexpr std::uint8_t kHelloAttester = 0x20;
inline constexpr std::uint8_t kHelloVerifier = 0x21;
inline constexpr std::uint8_t kFinished = 0x22;
// sealed records
inline constexpr std::uint8_t kProvisionReq = 0x30;
inline constexpr std::uint8_t kProvisionResp = 0x31;
inline constexpr std::uint8_t kAppData = 0x37;
}  // namespace msg

struct Frame {
    std::uint8_t type = 0;
    Bytes payload;

    friend bool operator==(const Frame&, const Frame&) = default;
};

Bytes encode_frame(const Frame& f);

class WireError : public std::runtime_error {
public:
    enum class Kind { io, closed, timeout, malformed };
    WireError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// A bidirectional, ordered frame pipe. One sender and one receiver may use
/// it concurrently.
class Connection {
public:
    virtual ~Connection() = default;
    virtual void send(const Frame& frame) = 0;
    /// Throws WireError: closed on orderly EOF, timeout after the receive timeout.
    virtual Frame recv() = 0;
    /// Zero means wait forever.
    virtual void set_recv_timeout(std::chrono::milliseconds timeout) = 0;
    virtual void close() = 0;
    virtual std::string peer() const = 0;
};

using ConnectionPtr = std::unique_ptr<Connection>;

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    std::string to_string() const { return host + ":" + std::to_string(port); }
};

/// Parses "host:port". Throws std::invalid_argument.
Endpoint parse_endpoint(std::string_view text);

class TcpListener {
public:
    /// Port 0 picks an ephemeral port; see port().
    explicit TcpListener(const Endpoint& bind_to);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t port() const { return port_; }
    Endpoint endpoint() const { return {host_, port_}; }
    /// Returns nullptr on timeout or after close().
    ConnectionPtr accept(std::chrono::milliseconds timeout);
    /// Safe to call from another thread while accept() is waiting.
    void close();

private:
    int fd_ = -1;
    std::string host_;
    std::uint16_t port_ = 0;
    std::atomic<bool> closed_{false};
};

ConnectionPtr tcp_connect(const Endpoint& to, std::chrono::milliseconds timeout = std::chrono::seconds(10));

/// Accept loop with one thread per connection. Handler exceptions are
/// reported through on_error and never stop the server.
class ConnectionServer {
public:
    using Handler = std::function<void(Connection&)>;
    using ErrorSink = std::function<void(const std::string& peer, const std::exception&)>;

    ConnectionServer(const Endpoint& bind_to, Handler handler, ErrorSink on_error = nullptr);
    /// Stops and joins all workers.
    ~ConnectionServer();
    ConnectionServer(const ConnectionServer&) = delete;
    ConnectionServer& operator=(const ConnectionServer&) = delete;

    Endpoint endpoint() const { return listener_.endpoint(); }
    /// Closes the listener and every live connection, then joins.
    void stop();
    /// Blocks until stop() is called from elsewhere.
    void wait();

private:
    void accept_loop();

    TcpListener listener_;
    Handler handler_;
    ErrorSink on_error_;
    std::mutex mu_;
    std::set<Connection*> live_;
    std::vector<std::thread> workers_;
    std::thread acceptor_;
    std::atomic<bool> stopping_{false};
    std::mutex stop_mu_;
    std::condition_variable stop_cv_;
    bool stopped_ = false;
};

/// Two connected in-memory endpoints.
std::pair<ConnectionPtr, ConnectionPtr> memory_pair();

/// Wraps a connection, recording every frame and optionally rewriting or
/// dropping outbound frames. Used by tests to play a network adversary.
class TapConnection : public Connection {
public:
    enum class Direction { out, in };
    struct Event {
        Direction direction;
        Frame frame;
    };
    /// Returning nullopt drops the frame.
    using Rewriter = std::function<std::optional<Frame>(const Frame&)>;

    explicit TapConnection(ConnectionPtr inner, Rewriter rewrite_out = nullptr);

    void send(const Frame& frame) override;
    Frame recv() override;
    void set_recv_timeout(std::chrono::milliseconds timeout) override { inner_->set_recv_timeout(timeout); }
    void close() override { inner_->close(); }
    std::string peer() const override { return inner_->peer(); }

    std::vector<Event> events() const;

private:
    ConnectionPtr inner_;
    Rewriter rewrite_out_;
    mutable std::mutex mu_;
    std::vector<Event> events_;
};

}  // namespace ppml::wire
