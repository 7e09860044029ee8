#include "ppfpose/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace ppfpose {

namespace {

using Clock = std::chrono::steady_clock;

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left > 0 ? static_cast<int>(left) : 0;
}

void send_all(int fd, const std::string& data) {
  size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(errno_text("send"));
    }
    sent += static_cast<size_t>(n);
  }
}

enum class ReadStatus { line, closed, timeout, too_long };

// Pulls bytes into `buf` until it holds a full line, which is moved to `line`.
ReadStatus read_line(int fd, std::string& buf, std::string& line, int timeout_ms) {
  const auto deadline = timeout_ms < 0 ? Clock::time_point::max() : Clock::now() + std::chrono::milliseconds(timeout_ms);
  for (;;) {
    const auto nl = buf.find('\n');
    if (nl != std::string::npos) {
      line = buf.substr(0, nl + 1);
      buf.erase(0, nl + 1);
      return ReadStatus::line;
    }
    if (buf.size() > kMaxFrameBytes) return ReadStatus::too_long;
    pollfd p{fd, POLLIN, 0};
    const int wait = timeout_ms < 0 ? 200 : remaining_ms(deadline);
    const int r = ::poll(&p, 1, wait);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(errno_text("poll"));
    }
    if (r == 0) {
      if (timeout_ms < 0) continue;
      return ReadStatus::timeout;
    }
    char chunk[4096];
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      return ReadStatus::closed;
    }
    if (n == 0) return ReadStatus::closed;
    buf.append(chunk, static_cast<size_t>(n));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Client

TcpClientChannel::TcpClientChannel(const std::string& host, uint16_t port, std::chrono::milliseconds connect_timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw ProtocolError("cannot resolve " + host + ": " + ::gai_strerror(rc));

  std::string last_error = "no address";
  for (addrinfo* a = res; a && fd_ < 0; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, a->ai_addr, a->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      rc = ::poll(&p, 1, static_cast<int>(connect_timeout.count()));
      int err = 0;
      socklen_t len = sizeof err;
      if (rc == 1 && ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) == 0 && err == 0) {
        rc = 0;
      } else {
        errno = rc == 0 ? ETIMEDOUT : (err ? err : errno);
        rc = -1;
      }
    }
    if (rc == 0) {
      ::fcntl(fd, F_SETFL, flags);
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      fd_ = fd;
    } else {
      last_error = errno_text("connect");
      ::close(fd);
    }
  }
  ::freeaddrinfo(res);
  if (fd_ < 0) throw ProtocolError("cannot connect to " + host + ":" + service + ": " + last_error);
}

TcpClientChannel::~TcpClientChannel() {
  if (fd_ >= 0) ::close(fd_);
}

std::string TcpClientChannel::request(const std::string& frame, std::chrono::milliseconds timeout) {
  if (fd_ < 0) throw ProtocolError("connection closed");
  send_all(fd_, frame);
  std::string line;
  switch (read_line(fd_, buffer_, line, static_cast<int>(timeout.count()))) {
    case ReadStatus::line: return line;
    case ReadStatus::timeout:
      throw TimeoutError("no reply within " + std::to_string(timeout.count()) + " ms");
    case ReadStatus::too_long: throw ProtocolError("reply exceeds the frame limit");
    case ReadStatus::closed: break;
  }
  ::close(fd_);
  fd_ = -1;
  throw ProtocolError("server closed the connection");
}

// ---------------------------------------------------------------------------
// Server

TcpServer::TcpServer(uint16_t port, const std::string& host) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw ProtocolError(errno_text("socket"));
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw ProtocolError("bad IPv4 listen address " + host);
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd_, 4) < 0) {
    const std::string msg = errno_text("bind") + " (" + host + ":" + std::to_string(port) + ")";
    ::close(fd_);
    throw ProtocolError(msg);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpServer::~TcpServer() {
  if (fd_ >= 0) ::close(fd_);
}

size_t TcpServer::serve(ServerSession& session, size_t max_connections, const std::atomic<bool>* stop) {
  auto stopped = [stop] { return stop && stop->load(); };
  size_t frames = 0, connections = 0;
  while (!stopped() && (max_connections == 0 || connections < max_connections)) {
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, 100);
    if (r < 0 && errno != EINTR) throw ProtocolError(errno_text("poll"));
    if (r <= 0) continue;
    const int conn = ::accept(fd_, nullptr, nullptr);
    if (conn < 0) continue;
    const int one = 1;
    ::setsockopt(conn, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    ++connections;

    std::string buf, line;
    try {
      while (!stopped()) {
        const ReadStatus st = read_line(conn, buf, line, 200);
        if (st == ReadStatus::timeout) continue;
        if (st == ReadStatus::too_long) {
          send_all(conn, encode(ErrorReply{"frame exceeds " + std::to_string(kMaxFrameBytes) + " bytes"}));
          break;
        }
        if (st == ReadStatus::closed) break;
        send_all(conn, session.handle_frame(line));
        ++frames;
      }
    } catch (const ProtocolError&) {
      // Peer went away mid-reply; wait for the next connection.
    }
    ::close(conn);
  }
  return frames;
}

}  // namespace ppfpose
