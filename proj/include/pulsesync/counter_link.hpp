#pragma once

// ASCII line protocol between the DAQ host and the pulse counter.
//
//   request   response
//   "C?\n"    "C=<decimal count>\n"
//   "R\n"     "OK\n"
//   other     "ERR\n"
//
// Responses are single ASCII lines of at most 32 bytes.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>

#include "pulsesync/byte_channel.hpp"
#include "pulsesync/trigger_core.hpp"

namespace pulsesync {

inline constexpr std::size_t kMaxCounterLine = 32;
inline constexpr std::chrono::milliseconds kDefaultCounterTimeout{100};

/// Response for one request line (without its trailing newline).
std::string handle_counter_request(std::string_view line, PulseCounter& counter);

/// Thread-safe pulse counter: trigger ingestion and line-protocol queries are
/// serialised through one lock, in arrival order.
class CounterService {
 public:
  explicit CounterService(Nanos pairing_window = PulseCounter::kDefaultPairingWindow)
      : counter_(pairing_window) {}

  void ingest(const TriggerEvent& event);
  std::uint64_t count() const;

  /// Answers requests on `channel` until EOF or stop() is requested.
  void serve(ByteChannel& channel, std::stop_token stop = {});

 private:
  mutable std::mutex mu_;
  PulseCounter counter_;
};

/// Client side of the counter query channel.
class CounterLink {
 public:
  virtual ~CounterLink() = default;
  /// Throws ConnectivityError on timeout, EOF, or malformed reply.
  virtual std::uint64_t query_count() = 0;
  virtual void reset() = 0;
};

class LineCounterLink final : public CounterLink {
 public:
  explicit LineCounterLink(ByteChannel& channel,
                           std::chrono::milliseconds timeout = kDefaultCounterTimeout)
      : channel_(channel), timeout_(timeout) {}

  std::uint64_t query_count() override;
  void reset() override;

  /// Sends one raw request line and returns the reply line without '\n'.
  std::string transact(std::string_view request_line);

 private:
  ByteChannel& channel_;
  std::chrono::milliseconds timeout_;
  std::string pending_;
};

/// A CounterService answering over an in-memory channel on its own thread,
/// plus the DAQ-side link to it.
class CounterEmulator {
 public:
  explicit CounterEmulator(Nanos pairing_window = PulseCounter::kDefaultPairingWindow,
                           std::chrono::milliseconds timeout = kDefaultCounterTimeout);
  ~CounterEmulator();

  CounterService& service() noexcept { return service_; }
  CounterLink& link() noexcept { return *link_; }

  /// Stops answering; later queries time out like a dead micro-controller.
  void disconnect();

 private:
  CounterService service_;
  std::unique_ptr<ByteChannel> device_end_;
  std::unique_ptr<ByteChannel> host_end_;
  std::unique_ptr<LineCounterLink> link_;
  std::jthread worker_;
};

} // namespace pulsesync
