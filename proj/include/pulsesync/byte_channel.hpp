#pragma once

// Duplex byte streams: an in-process pipe pair and TCP sockets.

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>

namespace pulsesync {

class ByteChannel {
 public:
  virtual ~ByteChannel() = default;

  /// Blocks until every byte is written. Throws ConnectivityError when the
  /// peer is gone.
  virtual void write_all(std::span<const std::uint8_t> bytes) = 0;

  /// Reads at least one byte. Returns 0 on orderly EOF and nullopt when
  /// `timeout` elapses with nothing to read.
  virtual std::optional<std::size_t> read_some(std::span<std::uint8_t> buffer,
                                               std::chrono::milliseconds timeout) = 0;

  /// Half-close: the peer sees EOF after draining.
  virtual void close() = 0;

  void write_all(std::string_view text) {
    write_all(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
};

/// Two connected in-memory endpoints. Thread-safe across the pair.
std::pair<std::unique_ptr<ByteChannel>, std::unique_ptr<ByteChannel>> make_memory_channel_pair();

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  std::string to_string() const;
  /// "host:port"; throws ConfigError.
  static Endpoint parse(std::string_view text);
};

/// Owns a connected stream socket.
class SocketChannel final : public ByteChannel {
 public:
  explicit SocketChannel(int fd) noexcept : fd_(fd) {}
  SocketChannel(const SocketChannel&) = delete;
  SocketChannel& operator=(const SocketChannel&) = delete;
  ~SocketChannel() override;

  void write_all(std::span<const std::uint8_t> bytes) override;
  using ByteChannel::write_all;
  std::optional<std::size_t> read_some(std::span<std::uint8_t> buffer,
                                       std::chrono::milliseconds timeout) override;
  void close() override;

  int fd() const noexcept { return fd_; }

 private:
  int fd_;
  bool write_closed_ = false;
};

/// Throws ConnectivityError when the connection cannot be made in time.
std::unique_ptr<SocketChannel> tcp_connect(const Endpoint& endpoint,
                                           std::chrono::milliseconds timeout = std::chrono::seconds(5));

class TcpListener {
 public:
  /// Binds and listens; port 0 picks an ephemeral port.
  explicit TcpListener(const Endpoint& endpoint);
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener();

  Endpoint local_endpoint() const;

  /// nullptr on timeout.
  std::unique_ptr<SocketChannel> accept(std::chrono::milliseconds timeout);

 private:
  int fd_ = -1;
  Endpoint bound_;
};

} // namespace pulsesync
