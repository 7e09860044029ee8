#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <string>

#include "ppfpose/protocol.hpp"

namespace ppfpose {

constexpr uint16_t kDefaultPort = 7465;
// Longer frames close the connection.
constexpr size_t kMaxFrameBytes = 1 << 20;

/// Newline-delimited JSON over one TCP connection.
class TcpClientChannel : public ClientChannel {
 public:
  TcpClientChannel(const std::string& host, uint16_t port,
                   std::chrono::milliseconds connect_timeout = std::chrono::milliseconds(5000));
  ~TcpClientChannel() override;
  TcpClientChannel(const TcpClientChannel&) = delete;
  TcpClientChannel& operator=(const TcpClientChannel&) = delete;

  std::string request(const std::string& frame, std::chrono::milliseconds timeout) override;

 private:
  int fd_ = -1;
  std::string buffer_;
};

/// Serves one client connection at a time against a shared session.
class TcpServer {
 public:
  /// Port 0 picks a free port.
  explicit TcpServer(uint16_t port = kDefaultPort, const std::string& host = "127.0.0.1");
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  uint16_t port() const { return port_; }

  /// Returns after `max_connections` connections have closed (0 = no limit)
  /// or once `stop` becomes true. Returns the number of frames handled.
  size_t serve(ServerSession& session, size_t max_connections = 0, const std::atomic<bool>* stop = nullptr);

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

}  // namespace ppfpose
