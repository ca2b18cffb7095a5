#pragma once

// Thin POSIX socket wrappers plus a blocking protocol client (TCP framing or
// websocket) used by drivers and tests.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "teleop/error.hpp"
#include "teleop/protocol.hpp"
#include "teleop/websocket.hpp"

namespace teleop::net {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) ::close(std::exchange(fd_, -1));
  }

  /// Unblocks a reader on another thread without releasing the descriptor.
  void shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  bool send_all(std::string_view data) const {
    while (!data.empty()) {
      const ssize_t n = ::send(fd_, data.data(), data.size(), MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      data.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
  }

  /// Bytes read, 0 on orderly close, -1 on error.
  ssize_t recv_some(char* buf, std::size_t cap) const {
    for (;;) {
      const ssize_t n = ::recv(fd_, buf, cap, 0);
      if (n < 0 && errno == EINTR) continue;
      return n;
    }
  }

  /// Waits for readability; false on timeout.
  bool wait_readable(int timeout_ms) const {
    pollfd p{fd_, POLLIN, 0};
    for (;;) {
      const int r = ::poll(&p, 1, timeout_ms);
      if (r < 0 && errno == EINTR) continue;
      return r > 0;
    }
  }

 private:
  int fd_ = -1;
};

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

inline Socket listen_tcp(const std::string& host, std::uint16_t port) {
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw Error(ErrorCode::BindFailure, std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw Error(ErrorCode::BindFailure, "bad bind address '" + host + "'");
  }
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw Error(ErrorCode::BindFailure, host + ":" + std::to_string(port) + ": " + std::strerror(errno));
  }
  if (::listen(s.fd(), 64) != 0) {
    throw Error(ErrorCode::BindFailure, std::string("listen: ") + std::strerror(errno));
  }
  return s;
}

inline Socket connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    throw Error(ErrorCode::IoFailure, "cannot resolve " + host);
  }
  Socket s(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol));
  const int rc = s.valid() ? ::connect(s.fd(), res->ai_addr, res->ai_addrlen) : -1;
  ::freeaddrinfo(res);
  if (rc != 0) {
    throw Error(ErrorCode::IoFailure, "connect " + host + ":" + std::to_string(port) + ": " +
                                          std::strerror(errno));
  }
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

/// Blocking client speaking either transport.
class Client {
 public:
  static Client tcp(const std::string& host, std::uint16_t port) {
    Client c;
    c.sock_ = connect_tcp(host, port);
    return c;
  }

  static Client websocket(const std::string& host, std::uint16_t port,
                          const std::string& path = "/ws", double timeout_s = 5.0) {
    Client c;
    c.ws_ = true;
    c.sock_ = connect_tcp(host, port);
    const std::string key = ws::random_key();
    if (!c.sock_.send_all(ws::client_request(host, path, key))) {
      throw Error(ErrorCode::IoFailure, "websocket handshake send failed");
    }
    std::string head;
    const auto deadline = std::chrono::steady_clock::now() + to_duration(timeout_s);
    char buf[1024];
    while (head.find("\r\n\r\n") == std::string::npos) {
      if (!c.sock_.wait_readable(remaining_ms(deadline))) {
        throw Error(ErrorCode::IoFailure, "websocket handshake timed out");
      }
      const ssize_t n = c.sock_.recv_some(buf, sizeof buf);
      if (n <= 0) throw Error(ErrorCode::IoFailure, "websocket handshake: connection closed");
      head.append(buf, static_cast<std::size_t>(n));
    }
    const auto end = head.find("\r\n\r\n");
    if (head.rfind("HTTP/1.1 101", 0) != 0 ||
        head.find(ws::accept_key(key)) == std::string::npos) {
      throw Error(ErrorCode::IoFailure, "websocket upgrade refused: " + head.substr(0, head.find("\r\n")));
    }
    c.wsp_.feed(std::string_view(head).substr(end + 4));
    return c;
  }

  bool send(const proto::Message& m) {
    if (!ws_) return sock_.send_all(proto::encode(m));
    return send_raw_ws({true, ws::Opcode::Text, proto::encode_body(m)});
  }

  bool send_raw(std::string_view bytes) { return sock_.send_all(bytes); }

  bool send_raw_ws(const ws::Frame& f) {
    return sock_.send_all(ws::encode_frame(f, mask_++ * 2654435761u + 1u));
  }

  /// Next message within the timeout, or nullopt on timeout or close.
  std::optional<proto::Message> receive(double timeout_s = 2.0) {
    const auto deadline = std::chrono::steady_clock::now() + to_duration(timeout_s);
    for (;;) {
      if (auto body = next_body()) return proto::decode_body(*body);
      if (closed_) return std::nullopt;
      if (!sock_.wait_readable(remaining_ms(deadline))) return std::nullopt;
      char buf[65536];
      const ssize_t n = sock_.recv_some(buf, sizeof buf);
      if (n <= 0) {
        closed_ = true;
        continue;
      }
      if (ws_) {
        wsp_.feed({buf, static_cast<std::size_t>(n)});
      } else {
        fr_.feed({buf, static_cast<std::size_t>(n)});
      }
    }
  }

  /// Receives until a message satisfies `pred` or the timeout expires.
  template <class Pred>
  std::optional<proto::Message> receive_until(Pred pred, double timeout_s = 2.0) {
    const auto deadline = std::chrono::steady_clock::now() + to_duration(timeout_s);
    for (;;) {
      const double left =
          std::chrono::duration<double>(deadline - std::chrono::steady_clock::now()).count();
      if (left <= 0.0) return std::nullopt;
      auto m = receive(left);
      if (!m) return std::nullopt;
      if (pred(*m)) return m;
    }
  }

  bool closed() const { return closed_; }
  void close() { sock_.close(); }

 private:
  static std::chrono::steady_clock::duration to_duration(double s) {
    return std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(s));
  }
  static int remaining_ms(std::chrono::steady_clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    return static_cast<int>(std::max<long long>(0, left.count()));
  }

  std::optional<std::string> next_body() {
    if (!ws_) return fr_.next();
    while (auto f = wsp_.next()) {
      if (f->opcode == ws::Opcode::Text) return f->payload;
      if (f->opcode == ws::Opcode::Ping) send_raw_ws({true, ws::Opcode::Pong, f->payload});
      if (f->opcode == ws::Opcode::Close) closed_ = true;
    }
    return std::nullopt;
  }

  Socket sock_;
  bool ws_ = false;
  bool closed_ = false;
  std::uint32_t mask_ = 1;
  proto::FrameReader fr_;
  ws::FrameParser wsp_{false};
};

}  // namespace teleop::net
