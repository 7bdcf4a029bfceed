#pragma once

// Frame streaming packet codec.
//
// Every packet is a fixed 48-byte little-endian header followed by the
// row-major payload:
//
//   off  size  field
//     0     4  magic "RMPA"
//     4     2  version (1)
//     6     2  flags (bit0 = saturation clamped)
//     8     8  frame counter
//    16     4  axial samples
//    20     4  lateral channels
//    24     1  dtype (1 = int16 LE, 2 = float32 LE)
//    25     3  reserved, zero
//    28     8  acquisition timestamp, ns
//    36     8  payload length in bytes
//    44     4  CRC-32 (IEEE) of bytes 0..43

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pulsesync/frame.hpp"

namespace pulsesync::wire {

inline constexpr std::array<std::uint8_t, 4> kMagic{'R', 'M', 'P', 'A'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 48;
inline constexpr std::uint16_t kFlagSaturated = 0x0001;
// Upper bound on a single payload; larger lengths are treated as corruption.
inline constexpr std::uint64_t kMaxPayloadBytes = std::uint64_t{1} << 30;

enum class DType : std::uint8_t { Int16 = 1, Float32 = 2 };

std::size_t dtype_size(DType dtype) noexcept;

struct PacketHeader {
  std::uint16_t version = kVersion;
  std::uint16_t flags = 0;
  std::uint64_t frame_counter = 0;
  std::uint32_t axial = 0;
  std::uint32_t lateral = 0;
  DType dtype = DType::Int16;
  std::uint64_t acquisition_timestamp_ns = 0;
  std::uint64_t payload_length = 0;

  friend bool operator==(const PacketHeader&, const PacketHeader&) = default;
};

struct StreamPacket {
  PacketHeader header;
  std::vector<std::uint8_t> payload;

  std::size_t sample_count() const noexcept {
    return std::size_t{header.axial} * header.lateral;
  }
  /// Payload sample i widened to double, whatever the dtype.
  double sample(std::size_t i) const noexcept;
  /// Adds every sample into `sums` (length axial*lateral).
  void accumulate_into(std::span<double> sums) const;

  friend bool operator==(const StreamPacket&, const StreamPacket&) = default;
};

/// Builds an int16 packet from a frame. Throws EncodeError when the frame
/// dims are inconsistent or exceed 32 bits.
StreamPacket make_packet(std::uint64_t counter, const RFFrame& frame, std::uint16_t extra_flags = 0);

/// Float32 packet; `values` is row-major axial x lateral.
StreamPacket make_float_packet(std::uint64_t counter, std::size_t axial, std::size_t lateral,
                               std::span<const float> values, std::uint64_t timestamp_ns = 0);

/// Recovers an RFFrame from an int16 packet. Throws std::invalid_argument for
/// other dtypes.
RFFrame frame_from_packet(const StreamPacket& packet);

std::array<std::uint8_t, kHeaderSize> encode_header(const PacketHeader& header);

std::vector<std::uint8_t> encode_packet(const StreamPacket& packet);
void append_packet(const StreamPacket& packet, std::vector<std::uint8_t>& out);

/// Convenience: header + payload for (counter, frame).
std::vector<std::uint8_t> encode_packet(std::uint64_t counter, const RFFrame& frame,
                                        std::uint16_t flags = 0);

enum class HeaderFault {
  BadMagic,
  BadVersion,
  BadCrc,
  BadDType,
  BadReserved,
  BadLength,
  Truncated,
};

std::string_view to_string(HeaderFault fault);

/// Validates a 48-byte header image.
std::variant<PacketHeader, HeaderFault> parse_header(std::span<const std::uint8_t, kHeaderSize> bytes);

struct NeedMoreBytes {};

struct DecodeError {
  std::uint64_t offset;   // stream offset of the first rejected byte
  std::uint64_t skipped;  // bytes discarded while resynchronising
  HeaderFault fault;      // first fault seen in the rejected region
};

using DecodeResult = std::variant<StreamPacket, NeedMoreBytes, DecodeError>;

/// Incremental decoder over a byte stream of arbitrary fragmentation.
///
/// A corrupt region is reported as a single DecodeError once the decoder has
/// locked onto the next valid header (or at finish()), so the sequence of
/// results depends only on the bytes, never on how they were split.
class PacketDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);

  /// Next packet or error; NeedMoreBytes when the buffered bytes are
  /// exhausted.
  DecodeResult next();

  /// Declares end of stream. Returns an error covering any trailing bytes
  /// that did not form a complete packet.
  std::optional<DecodeError> finish();

  std::uint64_t bytes_consumed() const noexcept { return base_offset_ + read_pos_; }
  std::size_t buffered() const noexcept { return buffer_.size() - read_pos_; }

 private:
  void consume(std::size_t n);
  void begin_resync(HeaderFault fault);
  void compact();

  std::vector<std::uint8_t> buffer_;
  std::size_t read_pos_ = 0;
  std::uint64_t base_offset_ = 0;
  std::optional<PacketHeader> header_;
  std::optional<std::uint64_t> resync_start_;
  HeaderFault resync_fault_ = HeaderFault::BadMagic;
};

/// Decodes a complete buffer, collecting packets and errors in stream order.
std::vector<std::variant<StreamPacket, DecodeError>> decode_all(std::span<const std::uint8_t> bytes);

std::string to_hex(std::span<const std::uint8_t> bytes);

} // namespace pulsesync::wire
