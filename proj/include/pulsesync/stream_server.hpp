#pragma once

// Reception side: demultiplexes effective frames by counter into wavelength
// packages and averages them, ignoring frames that never arrived.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include "pulsesync/byte_channel.hpp"
#include "pulsesync/package.hpp"
#include "pulsesync/raw_session.hpp"
#include "pulsesync/trigger_core.hpp"
#include "pulsesync/wire_protocol.hpp"

namespace pulsesync {

/// Set of u64 values stored as disjoint half-open ranges.
class CounterSet {
 public:
  bool contains(std::uint64_t v) const;
  void insert(std::uint64_t v);
  std::size_t ranges() const noexcept { return ranges_.size(); }

 private:
  std::map<std::uint64_t, std::uint64_t> ranges_;  // start -> end (exclusive)
};

enum class AcceptStatus {
  Accepted,
  RejectedDims,
  RejectedDuplicate,
  RejectedRegression,  // unseen counter for an already completed package
  RejectedIneffective, // counter below the first effective count
  RejectedShift,       // counter outside the shift's domain
};

std::string_view to_string(AcceptStatus status);

struct AcceptResult {
  AcceptStatus status = AcceptStatus::Accepted;
  SlotAssignment slot{};
  std::vector<WavelengthPackage> completed;
};

struct AssemblerStats {
  std::uint64_t accepted = 0;
  std::uint64_t rejected_dims = 0;
  std::uint64_t rejected_duplicate = 0;
  std::uint64_t rejected_regression = 0;
  std::uint64_t rejected_ineffective = 0;
  std::uint64_t rejected_shift = 0;
  std::uint64_t packages = 0;
  std::uint64_t partial_packages = 0;
  std::uint64_t missing_frames = 0;

  std::uint64_t rejected() const noexcept {
    return rejected_dims + rejected_duplicate + rejected_regression + rejected_ineffective + rejected_shift;
  }
};

/// Routes frames to (package, wavelength, slot) and keeps running sums for the
/// one open package. A package completes when a frame of a later package
/// arrives or on flush(). Sums are float64; int16 inputs sum exactly, so the
/// tensor does not depend on arrival order.
class PackageAssembler {
 public:
  explicit PackageAssembler(WavelengthSequence seq, std::uint64_t first_effective = kFirstEffectiveCount,
                            std::int64_t shift = 0);

  AcceptResult accept(const wire::StreamPacket& packet);

  /// Completes the open package, if any, tagging it with `flags`.
  std::optional<WavelengthPackage> flush(std::uint32_t flags = kPackageFinalFlush);

  bool has_open_package() const noexcept { return open_.has_value(); }
  std::optional<std::pair<std::size_t, std::size_t>> dims() const noexcept { return dims_; }
  const AssemblerStats& stats() const noexcept { return stats_; }
  const WavelengthSequence& sequence() const noexcept { return seq_; }

 private:
  struct OpenPackage {
    std::uint64_t index = 0;
    std::vector<std::vector<double>> sums;  // per wavelength, axial*lateral
    std::vector<bool> filled;               // w * N + slot
    std::uint64_t min_counter = 0;
    std::uint64_t max_counter = 0;
  };

  WavelengthPackage complete(OpenPackage& open, std::uint32_t flags);
  void open_package(std::uint64_t index);

  WavelengthSequence seq_;
  std::uint64_t first_effective_;
  std::int64_t shift_;
  std::optional<std::pair<std::size_t, std::size_t>> dims_;
  std::optional<OpenPackage> open_;
  std::optional<std::uint64_t> last_completed_;
  CounterSet seen_;
  AssemblerStats stats_;
};

using PackagePublisher = std::function<void(const WavelengthPackage&)>;

struct ServerOptions {
  Endpoint listen{"127.0.0.1", 0};
  WavelengthSequence sequence{{700.0, 740.0, 760.0, 780.0}, Layout::Cyclic, 50};
  std::uint64_t first_effective_count = kFirstEffectiveCount;
  /// Empty disables raw persistence.
  std::filesystem::path raw_dir;
  std::string config_hash;
  std::chrono::milliseconds inactivity_timeout{2000};
  /// How long to wait for the producer to connect; zero waits forever.
  std::chrono::milliseconds accept_timeout{0};
  std::size_t queue_depth = 64;
};

struct ServerReport {
  std::uint64_t packets = 0;
  std::uint64_t bytes = 0;
  std::uint64_t packages = 0;
  std::uint64_t partial_packages = 0;
  std::uint64_t timeout_flushes = 0;
  std::uint64_t missing_frames = 0;
  std::uint64_t decode_errors = 0;
  std::uint64_t rejected_dims = 0;
  std::uint64_t rejected_duplicate = 0;
  std::uint64_t rejected_regression = 0;
  std::uint64_t rejected_ineffective = 0;
  std::uint64_t persisted = 0;
  std::size_t max_queue_depth = 0;
  double elapsed_seconds = 0.0;
  /// Packets handled in each whole wall-clock second since the first packet.
  std::vector<std::uint64_t> packets_per_second;

  std::uint64_t rejects() const noexcept {
    return rejected_dims + rejected_duplicate + rejected_regression + rejected_ineffective;
  }
  double throughput() const noexcept { return elapsed_seconds > 0 ? static_cast<double>(packets) / elapsed_seconds : 0.0; }
  std::string to_csv() const;
};

/// One session: accepts a single producer connection, then decode ->
/// accept -> persist -> publish until the producer disconnects.
class StreamServer {
 public:
  StreamServer(ServerOptions options, PackagePublisher publish);

  /// Bound address (the real port when listening on port 0).
  Endpoint endpoint() const;

  /// Blocks until the session ends. Throws StorageError if persistence
  /// fails and ConnectivityError if no producer connects in time.
  ServerReport run(std::stop_token stop = {});

  /// Processes an already-connected channel.
  ServerReport run_channel(ByteChannel& channel, std::stop_token stop = {});

 private:
  ServerOptions options_;
  PackagePublisher publish_;
  std::unique_ptr<TcpListener> listener_;
};

} // namespace pulsesync
