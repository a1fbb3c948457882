#ifndef REXPROBE_TRANSPORT_HPP
#define REXPROBE_TRANSPORT_HPP

// Newline-delimited message transports: in-memory loopback, child process
// pipes, and TCP. POSIX only.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "rexprobe/common.hpp"

namespace rexprobe {

class TransportError : public Error {
 public:
  using Error::Error;
};

/// One JSON object per line in each direction, strictly request/response.
class Transport {
 public:
  virtual ~Transport() = default;
  /// Sends one line; the newline is appended here.
  virtual void send(const std::string& line) = 0;
  /// Next line without its newline, or nullopt on timeout. Throws
  /// TransportError when the peer has gone away.
  virtual std::optional<std::string> receive(std::chrono::milliseconds timeout) = 0;
};

/// Hands every line to an in-process handler and queues its reply.
class LoopbackTransport : public Transport {
 public:
  explicit LoopbackTransport(std::function<std::string(const std::string&)> handler)
      : handler_(std::move(handler)) {}

  void send(const std::string& line) override { replies_.push_back(handler_(line)); }

  std::optional<std::string> receive(std::chrono::milliseconds) override {
    if (replies_.empty()) return std::nullopt;
    std::string line = std::move(replies_.front());
    replies_.pop_front();
    return line;
  }

 private:
  std::function<std::string(const std::string&)> handler_;
  std::deque<std::string> replies_;
};

namespace detail {

inline std::string errno_message(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

/// Buffered line reader and writer over a pair of file descriptors.
class FdLineChannel {
 public:
  FdLineChannel() = default;
  FdLineChannel(int read_fd, int write_fd, bool socket) : read_fd_(read_fd), write_fd_(write_fd), socket_(socket) {}

  void write_line(const std::string& line) {
    std::string framed = line;
    framed += '\n';
    std::size_t off = 0;
    while (off < framed.size()) {
      const ssize_t n = socket_ ? ::send(write_fd_, framed.data() + off, framed.size() - off, MSG_NOSIGNAL)
                                : ::write(write_fd_, framed.data() + off, framed.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(errno_message("write to adapter failed"));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
        std::string line = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      pollfd pfd{read_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw TransportError(errno_message("poll failed"));
      }
      if (ready == 0) return std::nullopt;
      char chunk[65536];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(errno_message("read from adapter failed"));
      }
      if (n == 0) throw TransportError("adapter closed the connection");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int read_fd_ = -1;
  int write_fd_ = -1;
  bool socket_ = false;
  std::string buffer_;
};

}  // namespace detail

/// Runs `/bin/sh -c command` and talks to it over its stdin and stdout.
/// SIGPIPE is ignored process-wide once a child transport exists, so a dead
/// adapter surfaces as a TransportError instead of killing the harness.
class ChildProcessTransport : public Transport {
 public:
  explicit ChildProcessTransport(const std::string& command) {
    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw TransportError(detail::errno_message("pipe"));
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw TransportError(detail::errno_message("pipe"));
    }
    pid_ = ::fork();
    if (pid_ < 0) throw TransportError(detail::errno_message("fork"));
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    ::fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    ::fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
    channel_ = detail::FdLineChannel(read_fd_, write_fd_, false);
  }

  ChildProcessTransport(const ChildProcessTransport&) = delete;
  ChildProcessTransport& operator=(const ChildProcessTransport&) = delete;

  ~ChildProcessTransport() override {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    if (pid_ > 0) {
      // Closing stdin asks the adapter to exit; give it a moment, then kill.
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
        ::usleep(20000);
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
    }
  }

  void send(const std::string& line) override { channel_.write_line(line); }
  std::optional<std::string> receive(std::chrono::milliseconds timeout) override { return channel_.read_line(timeout); }

 private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  detail::FdLineChannel channel_;
};

/// Splits "host:port". Throws on a missing or malformed port.
inline std::pair<std::string, std::string> split_host_port(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon + 1 == address.size()) {
    throw Error("expected host:port, got '" + address + "'");
  }
  std::string host = address.substr(0, colon);
  if (host.empty()) host = "127.0.0.1";
  return {host, address.substr(colon + 1)};
}

class TcpTransport : public Transport {
 public:
  explicit TcpTransport(const std::string& address) {
    auto [host, port] = split_host_port(address);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
      throw TransportError("cannot resolve " + address + ": " + ::gai_strerror(rc));
    }
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
      fd_ = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd_ < 0) continue;
      if (::connect(fd_, ai->ai_addr, ai->ai_addrlen) == 0) break;
      ::close(fd_);
      fd_ = -1;
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) throw TransportError("cannot connect to " + address);
    channel_ = detail::FdLineChannel(fd_, fd_, true);
  }

  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;
  ~TcpTransport() override {
    if (fd_ >= 0) ::close(fd_);
  }

  void send(const std::string& line) override { channel_.write_line(line); }
  std::optional<std::string> receive(std::chrono::milliseconds timeout) override { return channel_.read_line(timeout); }

 private:
  int fd_ = -1;
  detail::FdLineChannel channel_;
};

/// Listening socket for serving the protocol over TCP.
class TcpListener {
 public:
  explicit TcpListener(const std::string& address) {
    auto [host, port] = split_host_port(address);
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
      throw TransportError("cannot resolve " + address + ": " + ::gai_strerror(rc));
    }
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const bool ok = fd_ >= 0 && ::bind(fd_, res->ai_addr, res->ai_addrlen) == 0 && ::listen(fd_, 8) == 0;
    ::freeaddrinfo(res);
    if (!ok) throw TransportError(detail::errno_message(("cannot listen on " + address).c_str()));
  }

  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  /// Port actually bound (useful with port 0).
  int port() const {
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    return ntohs(addr.sin_port);
  }

  /// Blocks for the next connection and returns its descriptor.
  int accept() const {
    for (;;) {
      const int c = ::accept(fd_, nullptr, nullptr);
      if (c >= 0) return c;
      if (errno != EINTR) throw TransportError(detail::errno_message("accept"));
    }
  }

 private:
  int fd_ = -1;
};

}  // namespace rexprobe

#endif  // REXPROBE_TRANSPORT_HPP
