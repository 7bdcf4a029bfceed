#pragma once

// Bounded single-producer / single-consumer package exchange.
//
// The producer never blocks: when the consumer lags by a full ring, the
// oldest unread package is overwritten and counted as an overrun. The
// consumer always gets either a whole package or nothing.
//
// Memory layout (identical for the heap and POSIX shared-memory backends):
//
//   header page, 4096 bytes (byte offsets)
//       0 u64 magic "PSRING01"     8 u64 capacity     16 u64 slot_bytes
//      64 u64 write_sequence     128 u64 read_sequence
//     192 u64 overruns           256 u64 closed
//   slot i at 4096 + i * stride, stride = 64 + slot_bytes rounded up to 64
//       0 u64 state     sequence; bit 63 = writing, bit 62 = consumed
//       8 u64 length    payload bytes in use
//      16 u32 crc32     of the payload
//      64 payload       serialized WavelengthPackage
//
// Slot handshake: the producer swaps the state to (seq | writing), notes an
// overrun if the previous occupant was never consumed, writes the payload,
// then stores seq. The consumer copies a slot whose state equals the wanted
// seq and claims it with a CAS to (seq | consumed); a failed CAS means the
// producer started overwriting mid-copy and the copy is discarded.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pulsesync/package.hpp"

namespace pulsesync {

class RingMemory;

struct PolledPackage {
  WavelengthPackage package;
  std::uint64_t sequence = 0;
  /// Sequences skipped since the caller's last_seen (lost to overruns).
  std::uint64_t gap = 0;
};

class ExchangeRing {
 public:
  static constexpr std::uint64_t kDefaultCapacity = 8;

  /// In-process ring.
  static ExchangeRing create(std::uint64_t capacity, std::size_t slot_bytes);
  /// Creates (replacing any stale one) a named POSIX shared-memory ring; the
  /// creator unlinks it on destruction.
  static ExchangeRing create_shared(const std::string& name, std::uint64_t capacity, std::size_t slot_bytes);
  /// Attaches to an existing shared ring. Throws ConnectivityError if absent.
  static ExchangeRing attach_shared(const std::string& name);

  ExchangeRing(ExchangeRing&&) noexcept;
  ExchangeRing& operator=(ExchangeRing&&) noexcept;
  ~ExchangeRing();

  /// Producer only. Returns the package's sequence number (1, 2, ...).
  /// Throws std::length_error if the package does not fit a slot.
  std::uint64_t publish(const WavelengthPackage& package);

  /// Consumer only. Lowest available sequence above `last_seen`, or nullopt.
  std::optional<PolledPackage> poll(std::uint64_t last_seen);

  /// Producer marks end of stream.
  void close();
  bool closed() const;

  std::uint64_t capacity() const;
  std::size_t slot_bytes() const;
  std::uint64_t write_sequence() const;
  std::uint64_t read_sequence() const;
  std::uint64_t overruns() const;
  /// Copies discarded by this consumer handle because the producer lapped them.
  std::uint64_t torn_reads() const noexcept { return torn_reads_; }

 private:
  explicit ExchangeRing(std::unique_ptr<RingMemory> memory);

  std::unique_ptr<RingMemory> memory_;
  std::uint64_t next_sequence_ = 1;
  std::uint64_t torn_reads_ = 0;
  std::vector<std::uint8_t> scratch_;
};

} // namespace pulsesync
