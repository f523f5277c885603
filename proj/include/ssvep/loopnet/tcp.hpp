#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>

namespace ssvep::loopnet {

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline NetError sys_error(const std::string& what) {
  return NetError(what + ": " + std::strerror(errno));
}

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
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  /// Wakes any thread blocked on this socket without releasing the fd.
  void shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

inline Socket listen_tcp(const std::string& host, std::uint16_t port, int backlog = 16) {
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw sys_error("socket");
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw NetError("bad listen address " + host);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw sys_error("bind " + host + ":" + std::to_string(port));
  }
  if (::listen(s.fd(), backlog) != 0) throw sys_error("listen");
  return s;
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) throw sys_error("getsockname");
  return ntohs(addr.sin_port);
}

inline Socket connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    throw NetError("cannot resolve " + host);
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
  Socket s(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol));
  if (!s.valid()) throw sys_error("socket");
  if (::connect(s.fd(), res->ai_addr, res->ai_addrlen) != 0) {
    throw sys_error("connect " + host + ":" + std::to_string(port));
  }
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return s;
}

/// Buffered line/byte I/O over a connected socket.
class Connection {
 public:
  explicit Connection(Socket s) : sock_(std::move(s)) {}

  const Socket& socket() const { return sock_; }

  void write_all(std::string_view data) {
    while (!data.empty()) {
      const auto n = ::send(sock_.fd(), data.data(), data.size(), MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw sys_error("send");
      }
      data.remove_prefix(static_cast<std::size_t>(n));
    }
  }

  /// True if buffered or socket data is available within `timeout`.
  bool wait_readable(std::chrono::milliseconds timeout) {
    if (!buf_.empty()) return true;
    pollfd p{sock_.fd(), POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (r < 0 && errno != EINTR) throw sys_error("poll");
    return r > 0;
  }

  /// Next line including its '\n'; nullopt on orderly close or timeout.
  /// Throws when the line exceeds `max_len` or on socket error.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout = std::chrono::milliseconds(-1),
                                       std::size_t max_len = 4096) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
      const auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl + 1);
        buf_.erase(0, nl + 1);
        return line;
      }
      if (buf_.size() > max_len) throw NetError("line too long");
      if (!fill(timeout.count() < 0 ? -1 : remaining_ms(deadline))) return std::nullopt;
    }
  }

  /// Exactly n bytes; nullopt on close or timeout.
  std::optional<std::string> read_exact(std::size_t n, std::chrono::milliseconds timeout = std::chrono::milliseconds(-1)) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (buf_.size() < n) {
      if (!fill(timeout.count() < 0 ? -1 : remaining_ms(deadline))) return std::nullopt;
    }
    std::string out = buf_.substr(0, n);
    buf_.erase(0, n);
    return out;
  }

  /// Buffered bytes after waiting up to `timeout` for at least n of them.
  std::string_view peek(std::size_t n, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (buf_.size() < n && fill(remaining_ms(deadline))) {
    }
    return buf_;
  }

  std::string_view buffered() const { return buf_; }

 private:
  static int remaining_ms(std::chrono::steady_clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    return static_cast<int>(std::max<long long>(0, left.count()));
  }

  bool fill(int timeout_ms) {
    pollfd p{sock_.fd(), POLLIN, 0};
    int r;
    do {
      r = ::poll(&p, 1, timeout_ms);
    } while (r < 0 && errno == EINTR);
    if (r < 0) throw sys_error("poll");
    if (r == 0) return false;
    char chunk[4096];
    ssize_t n;
    do {
      n = ::recv(sock_.fd(), chunk, sizeof(chunk), 0);
    } while (n < 0 && errno == EINTR);
    if (n < 0) {
      if (errno == ECONNRESET) return false;
      throw sys_error("recv");
    }
    if (n == 0) return false;
    buf_.append(chunk, static_cast<std::size_t>(n));
    return true;
  }

  Socket sock_;
  std::string buf_;
};

/// Accept loop with one thread per connection. stop() shuts every socket
/// down and joins all threads.
class TcpServer {
 public:
  using Handler = std::function<void(Connection&, const std::atomic<bool>& stopping)>;

  TcpServer(const std::string& host, std::uint16_t port, Handler handler)
      : listener_(listen_tcp(host, port)), port_(local_port(listener_)), handler_(std::move(handler)) {
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  ~TcpServer() { stop(); }

  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return port_; }

  void stop() {
    if (stopping_.exchange(true)) return;
    listener_.shutdown();
    if (accept_thread_.joinable()) accept_thread_.join();
    std::list<Session> sessions;
    {
      std::lock_guard lock(mu_);
      for (auto& s : sessions_) s.conn->socket().shutdown();
      sessions.swap(sessions_);
    }
    for (auto& s : sessions) {
      if (s.thread.joinable()) s.thread.join();
    }
    listener_.close();
  }

 private:
  struct Session {
    std::shared_ptr<Connection> conn;
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };

  void accept_loop() {
    while (!stopping_) {
      pollfd p{listener_.fd(), POLLIN, 0};
      const int r = ::poll(&p, 1, 100);
      if (r <= 0) continue;
      if (p.revents & (POLLERR | POLLHUP | POLLNVAL)) break;
      const int fd = ::accept4(listener_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      auto conn = std::make_shared<Connection>(Socket(fd));
      auto done = std::make_shared<std::atomic<bool>>(false);
      std::lock_guard lock(mu_);
      reap();
      if (stopping_) break;
      sessions_.push_back({conn, std::thread([this, conn, done] {
                             try {
                               handler_(*conn, stopping_);
                             } catch (const std::exception&) {
                               // connection-level failure; the peer sees the close
                             }
                             *done = true;
                           }),
                           done});
    }
  }

  void reap() {
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (*it->done) {
        it->thread.join();
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }

  Socket listener_;
  std::uint16_t port_;
  Handler handler_;
  std::atomic<bool> stopping_{false};
  std::mutex mu_;
  std::list<Session> sessions_;
  std::thread accept_thread_;
};

}  // namespace ssvep::loopnet
