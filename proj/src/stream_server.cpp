#include "pulsesync/stream_server.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pulsesync/errors.hpp"

namespace pulsesync {
namespace {

template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  // False when the queue was closed from the consumer side.
  bool push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || abandoned_; });
    if (abandoned_) return false;
    items_.push_back(std::move(item));
    high_water_ = std::max(high_water_, items_.size());
    not_empty_.notify_one();
    return true;
  }

  enum class Pop { Item, Timeout, Closed };

  Pop pop(T& out, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    if (!not_empty_.wait_for(lock, timeout, [&] { return !items_.empty() || closed_; })) return Pop::Timeout;
    if (items_.empty()) return Pop::Closed;
    out = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return Pop::Item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
  }

  void abandon() {
    std::lock_guard lock(mu_);
    abandoned_ = true;
    not_full_.notify_all();
  }

  std::size_t high_water() const {
    std::lock_guard lock(mu_);
    return high_water_;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<T> items_;
  std::size_t capacity_;
  std::size_t high_water_ = 0;
  bool closed_ = false;
  bool abandoned_ = false;
};

} // namespace

bool CounterSet::contains(std::uint64_t v) const {
  auto it = ranges_.upper_bound(v);
  if (it == ranges_.begin()) return false;
  --it;
  return v < it->second;
}

void CounterSet::insert(std::uint64_t v) {
  if (contains(v)) return;
  auto next = ranges_.upper_bound(v);
  const bool joins_next = next != ranges_.end() && next->first == v + 1;
  if (next != ranges_.begin()) {
    auto prev = std::prev(next);
    if (prev->second == v) {
      prev->second = joins_next ? next->second : v + 1;
      if (joins_next) ranges_.erase(next);
      return;
    }
  }
  if (joins_next) {
    const auto end = next->second;
    ranges_.erase(next);
    ranges_.emplace(v, end);
  } else {
    ranges_.emplace(v, v + 1);
  }
}

std::string_view to_string(AcceptStatus status) {
  switch (status) {
    case AcceptStatus::Accepted: return "accepted";
    case AcceptStatus::RejectedDims: return "dims mismatch";
    case AcceptStatus::RejectedDuplicate: return "duplicate counter";
    case AcceptStatus::RejectedRegression: return "counter regression";
    case AcceptStatus::RejectedIneffective: return "ineffective counter";
    case AcceptStatus::RejectedShift: return "outside shift domain";
  }
  return "unknown";
}

PackageAssembler::PackageAssembler(WavelengthSequence seq, std::uint64_t first_effective, std::int64_t shift)
    : seq_(std::move(seq)), first_effective_(first_effective), shift_(shift) {}

void PackageAssembler::open_package(std::uint64_t index) {
  OpenPackage p;
  p.index = index;
  p.sums.assign(seq_.size(), std::vector<double>(dims_->first * dims_->second, 0.0));
  p.filled.assign(seq_.frames_per_package(), false);
  open_ = std::move(p);
}

AcceptResult PackageAssembler::accept(const wire::StreamPacket& packet) {
  AcceptResult result;
  const std::uint64_t counter = packet.header.frame_counter;
  const auto reject = [&](AcceptStatus s, std::uint64_t& stat) {
    result.status = s;
    ++stat;
    return result;
  };

  if (counter < first_effective_) return reject(AcceptStatus::RejectedIneffective, stats_.rejected_ineffective);
  const auto k = effective_frame_index(counter, shift_, first_effective_);
  if (!k) return reject(AcceptStatus::RejectedShift, stats_.rejected_shift);
  result.slot = assign_frame_index(seq_, *k);

  const std::pair<std::size_t, std::size_t> dims{packet.header.axial, packet.header.lateral};
  if (dims_ && *dims_ != dims) return reject(AcceptStatus::RejectedDims, stats_.rejected_dims);
  if (seen_.contains(counter)) return reject(AcceptStatus::RejectedDuplicate, stats_.rejected_duplicate);
  const std::uint64_t pkg = result.slot.package_index;
  if ((open_ && pkg < open_->index) || (!open_ && last_completed_ && pkg <= *last_completed_)) {
    return reject(AcceptStatus::RejectedRegression, stats_.rejected_regression);
  }

  if (!dims_) dims_ = dims;
  if (open_ && pkg > open_->index) {
    result.completed.push_back(complete(*open_, 0));
    open_.reset();
  }
  if (!open_) {
    open_package(pkg);
    open_->min_counter = open_->max_counter = counter;
  }

  auto& open = *open_;
  packet.accumulate_into(open.sums[result.slot.wavelength_index]);
  open.filled[std::size_t{result.slot.wavelength_index} * seq_.frames_per_wavelength() + result.slot.slot_index] = true;
  open.min_counter = std::min(open.min_counter, counter);
  open.max_counter = std::max(open.max_counter, counter);
  seen_.insert(counter);
  ++stats_.accepted;
  return result;
}

WavelengthPackage PackageAssembler::complete(OpenPackage& open, std::uint32_t flags) {
  const std::size_t W = seq_.size();
  const std::uint32_t N = seq_.frames_per_wavelength();
  const std::size_t plane = dims_->first * dims_->second;

  WavelengthPackage out;
  out.package_index = open.index;
  out.axial = dims_->first;
  out.lateral = dims_->second;
  out.wavelengths_nm = seq_.wavelengths();
  out.frames_expected = N;
  out.min_counter = open.min_counter;
  out.max_counter = open.max_counter;
  out.flags = flags;
  out.frames_used.assign(W, 0);
  out.tensor.assign(plane * W, 0.0);

  for (std::uint32_t w = 0; w < W; ++w) {
    for (std::uint32_t s = 0; s < N; ++s) {
      if (open.filled[std::size_t{w} * N + s]) {
        ++out.frames_used[w];
      } else {
        out.missing_frames.push_back({w, s});
      }
    }
    if (out.frames_used[w] == 0) {
      out.incomplete_wavelengths.push_back(w);
      continue;
    }
    const double n = out.frames_used[w];
    const auto& sums = open.sums[w];
    for (std::size_t i = 0; i < plane; ++i) out.tensor[i * W + w] = sums[i] / n;
  }

  ++stats_.packages;
  if (flags != 0) ++stats_.partial_packages;
  stats_.missing_frames += out.missing_frames.size();
  last_completed_ = open.index;
  return out;
}

std::optional<WavelengthPackage> PackageAssembler::flush(std::uint32_t flags) {
  if (!open_) return std::nullopt;
  // A package whose every slot arrived is complete however it was closed.
  if (std::all_of(open_->filled.begin(), open_->filled.end(), [](bool b) { return b; })) flags = 0;
  auto pkg = complete(*open_, flags);
  open_.reset();
  return pkg;
}

std::string ServerReport::to_csv() const {
  std::string out = "metric,value\n";
  out += fmt::format("packets,{}\n", packets);
  out += fmt::format("bytes,{}\n", bytes);
  out += fmt::format("packages,{}\n", packages);
  out += fmt::format("partial_packages,{}\n", partial_packages);
  out += fmt::format("timeout_flushes,{}\n", timeout_flushes);
  out += fmt::format("missing_frames,{}\n", missing_frames);
  out += fmt::format("decode_errors,{}\n", decode_errors);
  out += fmt::format("rejected_dims,{}\n", rejected_dims);
  out += fmt::format("rejected_duplicate,{}\n", rejected_duplicate);
  out += fmt::format("rejected_regression,{}\n", rejected_regression);
  out += fmt::format("rejected_ineffective,{}\n", rejected_ineffective);
  out += fmt::format("persisted,{}\n", persisted);
  out += fmt::format("max_queue_depth,{}\n", max_queue_depth);
  out += fmt::format("elapsed_seconds,{:.6f}\n", elapsed_seconds);
  out += fmt::format("throughput_pps,{:.3f}\n", throughput());
  return out;
}

StreamServer::StreamServer(ServerOptions options, PackagePublisher publish)
    : options_(std::move(options)), publish_(std::move(publish)) {
  listener_ = std::make_unique<TcpListener>(options_.listen);
}

Endpoint StreamServer::endpoint() const { return listener_->local_endpoint(); }

ServerReport StreamServer::run(std::stop_token stop) {
  const auto deadline = std::chrono::steady_clock::now() + options_.accept_timeout;
  std::unique_ptr<SocketChannel> conn;
  while (!conn) {
    if (stop.stop_requested()) return {};
    conn = listener_->accept(std::chrono::milliseconds(100));
    if (!conn && options_.accept_timeout.count() > 0 && std::chrono::steady_clock::now() >= deadline) {
      throw ConnectivityError(fmt::format("no producer connected to {} within {} ms",
                                          endpoint().to_string(), options_.accept_timeout.count()));
    }
  }
  spdlog::info("producer connected on {}", endpoint().to_string());
  return run_channel(*conn, stop);
}

ServerReport StreamServer::run_channel(ByteChannel& channel, std::stop_token stop) {
  ServerReport report;
  PackageAssembler assembler(options_.sequence, options_.first_effective_count);
  std::unique_ptr<RawSessionWriter> writer;
  if (!options_.raw_dir.empty()) {
    SessionManifest manifest;
    manifest.sequence = options_.sequence;
    manifest.first_effective_count = options_.first_effective_count;
    manifest.config_hash = options_.config_hash;
    writer = std::make_unique<RawSessionWriter>(options_.raw_dir, manifest);
  }

  // Stage 1: bytes -> validated packets.
  BoundedQueue<wire::StreamPacket> queue(options_.queue_depth);
  std::atomic<std::uint64_t> decode_errors{0};
  std::atomic<std::uint64_t> bytes{0};
  std::jthread receiver([&](std::stop_token rx_stop) {
    wire::PacketDecoder decoder;
    std::vector<std::uint8_t> buf(1 << 18);
    const auto drain = [&] {
      for (;;) {
        auto r = decoder.next();
        if (std::holds_alternative<wire::NeedMoreBytes>(r)) return true;
        if (auto* e = std::get_if<wire::DecodeError>(&r)) {
          ++decode_errors;
          spdlog::warn("decode error at byte {}: {} ({} bytes skipped)", e->offset, wire::to_string(e->fault),
                       e->skipped);
          continue;
        }
        if (!queue.push(std::move(std::get<wire::StreamPacket>(r)))) return false;
      }
    };
    try {
      while (!rx_stop.stop_requested() && !stop.stop_requested()) {
        const auto n = channel.read_some(buf, std::chrono::milliseconds(50));
        if (!n) continue;
        if (*n == 0) break;
        bytes += *n;
        decoder.feed(std::span(buf.data(), *n));
        if (!drain()) break;
      }
    } catch (const ConnectivityError& e) {
      spdlog::warn("reception ended: {}", e.what());
    }
    if (auto err = decoder.finish()) {
      ++decode_errors;
      spdlog::warn("stream ended inside a packet at byte {} ({})", err->offset, wire::to_string(err->fault));
    }
    queue.close();
  });

  // Stage 2: accumulate, persist, publish.
  const auto emit = [&](const WavelengthPackage& pkg) {
    ++report.packages;
    if (pkg.flags & kPackageTimeoutFlush) ++report.timeout_flushes;
    if (pkg.flags != 0) ++report.partial_packages;
    report.missing_frames += pkg.missing_frames.size();
    if (publish_) publish_(pkg);
  };

  std::optional<std::chrono::steady_clock::time_point> first_packet;
  auto last_activity = std::chrono::steady_clock::now();
  try {
    wire::StreamPacket packet;
    for (;;) {
      const auto r = queue.pop(packet, std::chrono::milliseconds(50));
      const auto now = std::chrono::steady_clock::now();
      if (r == decltype(queue)::Pop::Closed) break;
      if (r == decltype(queue)::Pop::Timeout) {
        if (assembler.has_open_package() && now - last_activity >= options_.inactivity_timeout) {
          spdlog::info("inactivity timeout, flushing open package");
          if (auto pkg = assembler.flush(kPackageTimeoutFlush)) emit(*pkg);
        }
        continue;
      }
      last_activity = now;
      if (!first_packet) first_packet = now;
      const auto second = static_cast<std::size_t>(
          std::chrono::duration_cast<std::chrono::seconds>(now - *first_packet).count());
      if (report.packets_per_second.size() <= second) report.packets_per_second.resize(second + 1, 0);
      ++report.packets_per_second[second];
      ++report.packets;

      auto result = assembler.accept(packet);
      if (result.status != AcceptStatus::Accepted) {
        spdlog::debug("counter {} rejected: {}", packet.header.frame_counter, to_string(result.status));
        continue;
      }
      if (writer) {
        if (report.persisted == 0) writer->set_dims(packet.header.axial, packet.header.lateral);
        writer->append(packet);
        ++report.persisted;
      }
      for (const auto& pkg : result.completed) emit(pkg);
    }
    if (auto pkg = assembler.flush(kPackageFinalFlush)) emit(*pkg);
    if (writer) writer->close();
  } catch (...) {
    queue.abandon();
    receiver.request_stop();
    throw;
  }
  receiver.join();

  if (first_packet) {
    report.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - *first_packet).count();
  }
  const auto& st = assembler.stats();
  report.decode_errors = decode_errors.load();
  report.bytes = bytes.load();
  report.rejected_dims = st.rejected_dims;
  report.rejected_duplicate = st.rejected_duplicate;
  report.rejected_regression = st.rejected_regression;
  report.rejected_ineffective = st.rejected_ineffective;
  report.max_queue_depth = queue.high_water();
  return report;
}

} // namespace pulsesync
