// SPDX-License-Identifier: Apache-2.0
//
// Thin POSIX stream sockets: TCP (host:port) and local (unix:/path or any
// path containing '/').
#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <span>
#include <string>
#include <utility>

#include "deltakd/errors.hpp"

namespace deltakd::net {

struct Endpoint {
  enum class Kind { Tcp, Local } kind = Kind::Tcp;
  std::string host;  ///< TCP only
  std::uint16_t port = 0;
  std::string path;  ///< local only

  std::string str() const { return kind == Kind::Local ? "unix:" + path : host + ":" + std::to_string(port); }

  static Endpoint parse(const std::string& s) {
    Endpoint e;
    if (s.rfind("unix:", 0) == 0 || s.find('/') != std::string::npos) {
      e.kind = Kind::Local;
      e.path = s.rfind("unix:", 0) == 0 ? s.substr(5) : s;
      if (e.path.empty()) throw ConfigError("endpoint: empty socket path");
      if (e.path.size() >= sizeof(sockaddr_un::sun_path)) throw ConfigError("endpoint: socket path too long");
      return e;
    }
    const auto colon = s.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) {
      throw ConfigError("endpoint: expected host:port or unix:/path, got '" + s + "'");
    }
    e.host = s.substr(0, colon);
    const auto port = s.substr(colon + 1);
    for (char c : port) {
      if (c < '0' || c > '9') throw ConfigError("endpoint: bad port '" + port + "'");
    }
    const unsigned long p = std::stoul(port);
    if (p > 65535) throw ConfigError("endpoint: port out of range");
    e.port = static_cast<std::uint16_t>(p);
    return e;
  }
};

inline std::string errno_text(const std::string& what) { return what + ": " + std::strerror(errno); }

/// Owning file descriptor.
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

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  void close() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  /// Wakes any thread blocked on this socket without releasing the fd.
  void shutdown() noexcept {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

namespace detail {

struct ResolvedAddress {
  sockaddr_storage addr{};
  socklen_t len = 0;
  int family = AF_INET;
};

inline ResolvedAddress resolve(const Endpoint& e, bool passive) {
  ResolvedAddress r;
  if (e.kind == Endpoint::Kind::Local) {
    auto* un = reinterpret_cast<sockaddr_un*>(&r.addr);
    un->sun_family = AF_UNIX;
    std::memcpy(un->sun_path, e.path.c_str(), e.path.size() + 1);
    r.len = static_cast<socklen_t>(sizeof(sockaddr_un));
    r.family = AF_UNIX;
    return r;
  }
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string host = (e.host == "*" ? std::string() : e.host);
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), std::to_string(e.port).c_str(), &hints, &res);
  if (rc != 0 || !res) throw TransportError("cannot resolve " + e.str() + ": " + ::gai_strerror(rc));
  std::memcpy(&r.addr, res->ai_addr, res->ai_addrlen);
  r.len = static_cast<socklen_t>(res->ai_addrlen);
  r.family = res->ai_family;
  ::freeaddrinfo(res);
  return r;
}

}  // namespace detail

/// Binds and listens. For TCP port 0 the kernel picks a port; see
/// local_endpoint(). A stale local socket file is replaced.
inline Socket listen_on(const Endpoint& e, int backlog = 64) {
  const auto addr = detail::resolve(e, true);
  Socket s(::socket(addr.family, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw TransportError(errno_text("socket"));
  if (e.kind == Endpoint::Kind::Local) {
    ::unlink(e.path.c_str());
  } else {
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  }
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr.addr), addr.len) != 0) {
    throw TransportError(errno_text("bind " + e.str()));
  }
  if (::listen(s.fd(), backlog) != 0) throw TransportError(errno_text("listen " + e.str()));
  return s;
}

/// The address a listening socket is actually bound to.
inline Endpoint local_endpoint(const Socket& s, const Endpoint& requested) {
  if (requested.kind == Endpoint::Kind::Local) return requested;
  sockaddr_storage ss{};
  socklen_t len = sizeof(ss);
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&ss), &len) != 0) throw TransportError(errno_text("getsockname"));
  Endpoint out = requested;
  if (ss.ss_family == AF_INET6) {
    out.port = ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
  } else {
    out.port = ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  }
  if (out.host.empty() || out.host == "*" || out.host == "0.0.0.0") out.host = "127.0.0.1";
  return out;
}

/// Connects within `timeout`; refused or unreachable peers raise
/// TransportError immediately.
inline Socket connect_to(const Endpoint& e, std::chrono::milliseconds timeout) {
  const auto addr = detail::resolve(e, false);
  Socket s(::socket(addr.family, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
  if (!s.valid()) throw TransportError(errno_text("socket"));
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr.addr), addr.len) != 0) {
    if (errno != EINPROGRESS) throw TransportError(errno_text("connect " + e.str()));
    pollfd p{s.fd(), POLLOUT, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc == 0) throw TransportError("connect " + e.str() + ": timed out");
    if (rc < 0) throw TransportError(errno_text("connect " + e.str()));
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) throw TransportError("connect " + e.str() + ": " + std::strerror(err));
  }
  const int flags = ::fcntl(s.fd(), F_GETFL);
  ::fcntl(s.fd(), F_SETFL, flags & ~O_NONBLOCK);
  if (e.kind == Endpoint::Kind::Tcp) {
    int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  return s;
}

inline Socket accept_from(const Socket& listener) {
  Socket s(::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC));
  if (!s.valid()) throw TransportError(errno_text("accept"));
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));  // harmless failure on local sockets
  return s;
}

inline void send_all(const Socket& s, std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::send(s.fd(), bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("send"));
    }
    off += static_cast<std::size_t>(n);
  }
}

/// Reads whatever is available. Returns 0 on orderly shutdown by the peer.
inline std::size_t recv_some(const Socket& s, std::span<std::uint8_t> buf) {
  for (;;) {
    const ssize_t n = ::recv(s.fd(), buf.data(), buf.size(), 0);
    if (n >= 0) return static_cast<std::size_t>(n);
    if (errno == EINTR) continue;
    throw TransportError(errno_text("recv"));
  }
}

/// Waits until `s` is readable. False on timeout.
inline bool wait_readable(const Socket& s, std::chrono::milliseconds timeout) {
  pollfd p{s.fd(), POLLIN, 0};
  for (;;) {
    const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) throw TransportError(errno_text("poll"));
    return rc > 0;
  }
}

}  // namespace deltakd::net
