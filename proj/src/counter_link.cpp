#include "pulsesync/counter_link.hpp"

#include <charconv>

#include <fmt/format.h>

#include "pulsesync/errors.hpp"

namespace pulsesync {

std::string handle_counter_request(std::string_view line, PulseCounter& counter) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  if (line == "C?") return fmt::format("C={}\n", counter.count());
  if (line == "R") {
    counter.reset();
    return "OK\n";
  }
  return "ERR\n";
}

void CounterService::ingest(const TriggerEvent& event) {
  std::lock_guard lock(mu_);
  counter_.ingest(event);
}

std::uint64_t CounterService::count() const {
  std::lock_guard lock(mu_);
  return counter_.count();
}

void CounterService::serve(ByteChannel& channel, std::stop_token stop) {
  std::string line;
  bool overlong = false;
  std::uint8_t buf[256];
  while (!stop.stop_requested()) {
    std::optional<std::size_t> n;
    try {
      n = channel.read_some(buf, std::chrono::milliseconds(20));
    } catch (const ConnectivityError&) {
      return;
    }
    if (!n) continue;
    if (*n == 0) return;
    for (std::size_t i = 0; i < *n; ++i) {
      const char c = static_cast<char>(buf[i]);
      if (c != '\n') {
        if (line.size() < kMaxCounterLine) {
          line.push_back(c);
        } else {
          overlong = true;
        }
        continue;
      }
      std::string reply;
      if (overlong) {
        reply = "ERR\n";
      } else {
        std::lock_guard lock(mu_);
        reply = handle_counter_request(line, counter_);
      }
      line.clear();
      overlong = false;
      try {
        channel.write_all(reply);
      } catch (const ConnectivityError&) {
        return;
      }
    }
  }
}

std::string LineCounterLink::transact(std::string_view request_line) {
  channel_.write_all(request_line);
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  std::uint8_t buf[64];
  for (;;) {
    const auto nl = pending_.find('\n');
    if (nl != std::string::npos) {
      std::string reply = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      return reply;
    }
    if (pending_.size() > kMaxCounterLine) {
      throw ConnectivityError("counter reply exceeds 32 bytes");
    }
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      throw ConnectivityError(fmt::format("counter query timed out after {} ms", timeout_.count()));
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
    const auto n = channel_.read_some(buf, std::max(left, std::chrono::milliseconds(1)));
    if (!n) continue;
    if (*n == 0) throw ConnectivityError("counter link closed by peer");
    pending_.append(reinterpret_cast<const char*>(buf), *n);
  }
}

std::uint64_t LineCounterLink::query_count() {
  const std::string reply = transact("C?\n");
  if (reply.size() < 3 || reply.compare(0, 2, "C=") != 0) {
    throw ConnectivityError(fmt::format("unexpected counter reply '{}'", reply));
  }
  std::uint64_t value = 0;
  const char* first = reply.data() + 2;
  const char* last = reply.data() + reply.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw ConnectivityError(fmt::format("unparseable counter reply '{}'", reply));
  }
  return value;
}

void LineCounterLink::reset() {
  const std::string reply = transact("R\n");
  if (reply != "OK") throw ConnectivityError(fmt::format("counter reset refused: '{}'", reply));
}

CounterEmulator::CounterEmulator(Nanos pairing_window, std::chrono::milliseconds timeout)
    : service_(pairing_window) {
  auto [device, host] = make_memory_channel_pair();
  device_end_ = std::move(device);
  host_end_ = std::move(host);
  link_ = std::make_unique<LineCounterLink>(*host_end_, timeout);
  worker_ = std::jthread([this](std::stop_token st) { service_.serve(*device_end_, st); });
}

CounterEmulator::~CounterEmulator() {
  host_end_->close();  // the service sees end of stream and returns at once
  disconnect();
}

void CounterEmulator::disconnect() {
  if (worker_.joinable()) {
    worker_.request_stop();
    worker_.join();
    device_end_->close();
  }
}

} // namespace pulsesync
