#include "pulsesync/byte_channel.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "pulsesync/errors.hpp"

namespace pulsesync {
namespace {

struct PipeState {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::uint8_t> bytes;
  bool closed = false;
};

class MemoryChannel final : public ByteChannel {
 public:
  MemoryChannel(std::shared_ptr<PipeState> in, std::shared_ptr<PipeState> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~MemoryChannel() override { close(); }

  void write_all(std::span<const std::uint8_t> bytes) override {
    std::lock_guard lock(out_->mu);
    if (out_->closed) throw ConnectivityError("write on closed in-memory channel");
    out_->bytes.insert(out_->bytes.end(), bytes.begin(), bytes.end());
    out_->cv.notify_all();
  }
  using ByteChannel::write_all;

  std::optional<std::size_t> read_some(std::span<std::uint8_t> buffer,
                                       std::chrono::milliseconds timeout) override {
    std::unique_lock lock(in_->mu);
    if (!in_->cv.wait_for(lock, timeout, [&] { return !in_->bytes.empty() || in_->closed; })) {
      return std::nullopt;
    }
    const std::size_t n = std::min(buffer.size(), in_->bytes.size());
    std::copy_n(in_->bytes.begin(), n, buffer.begin());
    in_->bytes.erase(in_->bytes.begin(), in_->bytes.begin() + static_cast<std::ptrdiff_t>(n));
    return n;
  }

  void close() override {
    std::lock_guard lock(out_->mu);
    out_->closed = true;
    out_->cv.notify_all();
  }

 private:
  std::shared_ptr<PipeState> in_;
  std::shared_ptr<PipeState> out_;
};

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1) return addr;

  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw ConnectivityError(fmt::format("cannot resolve host '{}'", ep.host));
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

} // namespace

std::pair<std::unique_ptr<ByteChannel>, std::unique_ptr<ByteChannel>> make_memory_channel_pair() {
  auto a_to_b = std::make_shared<PipeState>();
  auto b_to_a = std::make_shared<PipeState>();
  return {std::make_unique<MemoryChannel>(b_to_a, a_to_b), std::make_unique<MemoryChannel>(a_to_b, b_to_a)};
}

std::string Endpoint::to_string() const { return fmt::format("{}:{}", host, port); }

Endpoint Endpoint::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw ConfigError(fmt::format("endpoint '{}' is not HOST:PORT", text));
  }
  Endpoint ep;
  ep.host = std::string(text.substr(0, colon));
  const auto port_text = text.substr(colon + 1);
  unsigned port = 0;
  const auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port > 65535) {
    throw ConfigError(fmt::format("endpoint '{}' has an invalid port", text));
  }
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

SocketChannel::~SocketChannel() {
  if (fd_ >= 0) ::close(fd_);
}

void SocketChannel::write_all(std::span<const std::uint8_t> bytes) {
  while (!bytes.empty()) {
    const ssize_t n = ::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ConnectivityError(fmt::format("socket send failed: {}", std::strerror(errno)));
    }
    bytes = bytes.subspan(static_cast<std::size_t>(n));
  }
}

std::optional<std::size_t> SocketChannel::read_some(std::span<std::uint8_t> buffer,
                                                    std::chrono::milliseconds timeout) {
  pollfd pfd{fd_, POLLIN, 0};
  for (;;) {
    const int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) throw ConnectivityError(fmt::format("poll failed: {}", std::strerror(errno)));
    if (rc == 0) return std::nullopt;
    break;
  }
  for (;;) {
    const ssize_t n = ::recv(fd_, buffer.data(), buffer.size(), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) {
      if (errno == ECONNRESET) return 0;
      throw ConnectivityError(fmt::format("socket recv failed: {}", std::strerror(errno)));
    }
    return static_cast<std::size_t>(n);
  }
}

void SocketChannel::close() {
  if (fd_ >= 0 && !write_closed_) {
    ::shutdown(fd_, SHUT_WR);
    write_closed_ = true;
  }
}

std::unique_ptr<SocketChannel> tcp_connect(const Endpoint& endpoint, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  const sockaddr_in addr = resolve(endpoint);
  // Retry refused connections until the deadline so a producer can start
  // before its server is listening.
  for (;;) {
    const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) throw ConnectivityError(fmt::format("socket(): {}", std::strerror(errno)));
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) {
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return std::make_unique<SocketChannel>(fd);
    }
    const int err = errno;
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline) {
      throw ConnectivityError(
          fmt::format("cannot connect to {}: {}", endpoint.to_string(), std::strerror(err)));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

TcpListener::TcpListener(const Endpoint& endpoint) {
  const sockaddr_in addr = resolve(endpoint);
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw ConnectivityError(fmt::format("socket(): {}", std::strerror(errno)));
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd_, 4) != 0) {
    const int err = errno;
    ::close(fd_);
    fd_ = -1;
    throw ConnectivityError(fmt::format("cannot listen on {}: {}", endpoint.to_string(), std::strerror(err)));
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  bound_.host = endpoint.host;
  bound_.port = ntohs(bound.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

Endpoint TcpListener::local_endpoint() const { return bound_; }

std::unique_ptr<SocketChannel> TcpListener::accept(std::chrono::milliseconds timeout) {
  pollfd pfd{fd_, POLLIN, 0};
  int rc;
  do {
    rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
  } while (rc < 0 && errno == EINTR);
  if (rc <= 0) return nullptr;
  const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) throw ConnectivityError(fmt::format("accept failed: {}", std::strerror(errno)));
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_unique<SocketChannel>(fd);
}

} // namespace pulsesync
