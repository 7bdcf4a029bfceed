#include "pulsesync/wire_protocol.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>
#include <zlib.h>

#include "pulsesync/errors.hpp"

namespace pulsesync::wire {
namespace {

template <typename T>
void put_le(std::uint8_t* dst, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    dst[i] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(value) >> (8 * i));
  }
}

template <typename T>
T get_le(const std::uint8_t* src) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= std::uint64_t{src[i]} << (8 * i);
  }
  return static_cast<T>(v);
}

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

bool valid_dtype(std::uint8_t code) { return code == 1 || code == 2; }

void check_dims(std::size_t axial, std::size_t lateral) {
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (axial > kMax || lateral > kMax) {
    throw EncodeError(fmt::format("frame dims {}x{} exceed 32-bit header fields", axial, lateral));
  }
  if (axial == 0 || lateral == 0) {
    throw EncodeError("frame dims must be at least 1x1");
  }
}

} // namespace

std::size_t dtype_size(DType dtype) noexcept { return dtype == DType::Int16 ? 2 : 4; }

double StreamPacket::sample(std::size_t i) const noexcept {
  if (header.dtype == DType::Int16) {
    return get_le<std::int16_t>(payload.data() + 2 * i);
  }
  return std::bit_cast<float>(get_le<std::uint32_t>(payload.data() + 4 * i));
}

void StreamPacket::accumulate_into(std::span<double> sums) const {
  const std::size_t n = sample_count();
  if (sums.size() != n) throw std::invalid_argument("accumulator size does not match packet dims");
  const std::uint8_t* p = payload.data();
  if (header.dtype == DType::Int16) {
    for (std::size_t i = 0; i < n; ++i, p += 2) sums[i] += get_le<std::int16_t>(p);
  } else {
    for (std::size_t i = 0; i < n; ++i, p += 4) sums[i] += std::bit_cast<float>(get_le<std::uint32_t>(p));
  }
}

StreamPacket make_packet(std::uint64_t counter, const RFFrame& frame, std::uint16_t extra_flags) {
  check_dims(frame.axial, frame.lateral);
  if (frame.samples.size() != frame.axial * frame.lateral) {
    throw EncodeError("frame sample count does not match its dims");
  }
  StreamPacket pkt;
  auto& h = pkt.header;
  h.flags = static_cast<std::uint16_t>(extra_flags | (frame.saturated ? kFlagSaturated : 0));
  h.frame_counter = counter;
  h.axial = static_cast<std::uint32_t>(frame.axial);
  h.lateral = static_cast<std::uint32_t>(frame.lateral);
  h.dtype = DType::Int16;
  h.acquisition_timestamp_ns = static_cast<std::uint64_t>(frame.acquisition_timestamp);
  h.payload_length = frame.samples.size() * 2;
  pkt.payload.resize(h.payload_length);
  std::uint8_t* p = pkt.payload.data();
  for (std::int16_t s : frame.samples) {
    put_le(p, static_cast<std::uint16_t>(s));
    p += 2;
  }
  return pkt;
}

StreamPacket make_float_packet(std::uint64_t counter, std::size_t axial, std::size_t lateral,
                               std::span<const float> values, std::uint64_t timestamp_ns) {
  check_dims(axial, lateral);
  if (values.size() != axial * lateral) throw EncodeError("float payload does not match dims");
  StreamPacket pkt;
  auto& h = pkt.header;
  h.frame_counter = counter;
  h.axial = static_cast<std::uint32_t>(axial);
  h.lateral = static_cast<std::uint32_t>(lateral);
  h.dtype = DType::Float32;
  h.acquisition_timestamp_ns = timestamp_ns;
  h.payload_length = values.size() * 4;
  pkt.payload.resize(h.payload_length);
  std::uint8_t* p = pkt.payload.data();
  for (float v : values) {
    put_le(p, std::bit_cast<std::uint32_t>(v));
    p += 4;
  }
  return pkt;
}

RFFrame frame_from_packet(const StreamPacket& packet) {
  if (packet.header.dtype != DType::Int16) {
    throw std::invalid_argument("frame_from_packet requires an int16 payload");
  }
  RFFrame f(packet.header.axial, packet.header.lateral);
  f.acquisition_timestamp = static_cast<Nanos>(packet.header.acquisition_timestamp_ns);
  f.saturated = (packet.header.flags & kFlagSaturated) != 0;
  for (std::size_t i = 0; i < f.samples.size(); ++i) {
    f.samples[i] = get_le<std::int16_t>(packet.payload.data() + 2 * i);
  }
  return f;
}

std::array<std::uint8_t, kHeaderSize> encode_header(const PacketHeader& h) {
  std::array<std::uint8_t, kHeaderSize> out{};
  std::uint8_t* p = out.data();
  std::copy(kMagic.begin(), kMagic.end(), p);
  put_le(p + 4, h.version);
  put_le(p + 6, h.flags);
  put_le(p + 8, h.frame_counter);
  put_le(p + 16, h.axial);
  put_le(p + 20, h.lateral);
  p[24] = static_cast<std::uint8_t>(h.dtype);
  // 25..27 reserved zero
  put_le(p + 28, h.acquisition_timestamp_ns);
  put_le(p + 36, h.payload_length);
  put_le(p + 44, crc32_of(p, 44));
  return out;
}

void append_packet(const StreamPacket& packet, std::vector<std::uint8_t>& out) {
  if (packet.payload.size() != packet.header.payload_length) {
    throw EncodeError("payload size does not match header payload length");
  }
  const auto header = encode_header(packet.header);
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), packet.payload.begin(), packet.payload.end());
}

std::vector<std::uint8_t> encode_packet(const StreamPacket& packet) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + packet.payload.size());
  append_packet(packet, out);
  return out;
}

std::vector<std::uint8_t> encode_packet(std::uint64_t counter, const RFFrame& frame,
                                        std::uint16_t flags) {
  return encode_packet(make_packet(counter, frame, flags));
}

std::string_view to_string(HeaderFault fault) {
  switch (fault) {
    case HeaderFault::BadMagic: return "bad magic";
    case HeaderFault::BadVersion: return "unsupported version";
    case HeaderFault::BadCrc: return "header CRC mismatch";
    case HeaderFault::BadDType: return "unknown dtype";
    case HeaderFault::BadReserved: return "reserved bytes not zero";
    case HeaderFault::BadLength: return "payload length inconsistent with dims";
    case HeaderFault::Truncated: return "truncated packet";
  }
  return "unknown";
}

std::variant<PacketHeader, HeaderFault> parse_header(std::span<const std::uint8_t, kHeaderSize> bytes) {
  const std::uint8_t* p = bytes.data();
  if (!std::equal(kMagic.begin(), kMagic.end(), p)) return HeaderFault::BadMagic;
  if (get_le<std::uint32_t>(p + 44) != crc32_of(p, 44)) return HeaderFault::BadCrc;
  PacketHeader h;
  h.version = get_le<std::uint16_t>(p + 4);
  if (h.version != kVersion) return HeaderFault::BadVersion;
  if (!valid_dtype(p[24])) return HeaderFault::BadDType;
  if (p[25] != 0 || p[26] != 0 || p[27] != 0) return HeaderFault::BadReserved;
  h.flags = get_le<std::uint16_t>(p + 6);
  h.frame_counter = get_le<std::uint64_t>(p + 8);
  h.axial = get_le<std::uint32_t>(p + 16);
  h.lateral = get_le<std::uint32_t>(p + 20);
  h.dtype = static_cast<DType>(p[24]);
  h.acquisition_timestamp_ns = get_le<std::uint64_t>(p + 28);
  h.payload_length = get_le<std::uint64_t>(p + 36);
  // axial*lateral fits in 64 bits since both are 32-bit.
  const std::uint64_t expected = std::uint64_t{h.axial} * h.lateral * dtype_size(h.dtype);
  if (h.axial == 0 || h.lateral == 0 || h.payload_length != expected ||
      h.payload_length > kMaxPayloadBytes) {
    return HeaderFault::BadLength;
  }
  return h;
}

void PacketDecoder::feed(std::span<const std::uint8_t> bytes) {
  compact();
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

void PacketDecoder::compact() {
  if (read_pos_ > 0 && (read_pos_ >= buffer_.size() / 2 || read_pos_ > (1u << 20))) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(read_pos_));
    base_offset_ += read_pos_;
    read_pos_ = 0;
  }
}

void PacketDecoder::consume(std::size_t n) { read_pos_ += n; }

void PacketDecoder::begin_resync(HeaderFault fault) {
  if (!resync_start_) {
    resync_start_ = bytes_consumed();
    resync_fault_ = fault;
  }
}

DecodeResult PacketDecoder::next() {
  for (;;) {
    const std::uint8_t* data = buffer_.data() + read_pos_;
    const std::size_t avail = buffered();

    if (header_) {
      if (avail < header_->payload_length) return NeedMoreBytes{};
      StreamPacket pkt;
      pkt.header = *header_;
      pkt.payload.assign(data, data + header_->payload_length);
      consume(header_->payload_length);
      header_.reset();
      return pkt;
    }

    // Locate the magic. Only a full 4-byte mismatch is a fault; a partial
    // match at the tail waits for more bytes.
    std::size_t match = 0;
    while (match < avail) {
      const std::size_t cmp = std::min<std::size_t>(kMagic.size(), avail - match);
      if (std::equal(data + match, data + match + cmp, kMagic.begin())) break;
      ++match;
    }
    if (match > 0) {
      begin_resync(HeaderFault::BadMagic);
      consume(match);
      continue;
    }
    if (avail < kHeaderSize) return NeedMoreBytes{};

    const auto parsed = parse_header(std::span<const std::uint8_t, kHeaderSize>(data, kHeaderSize));
    if (const auto* fault = std::get_if<HeaderFault>(&parsed)) {
      begin_resync(*fault);
      consume(1);
      continue;
    }
    if (resync_start_) {
      // Report the rejected region before handing out the packet behind it.
      DecodeError err{*resync_start_, bytes_consumed() - *resync_start_, resync_fault_};
      resync_start_.reset();
      return err;
    }
    header_ = std::get<PacketHeader>(parsed);
    consume(kHeaderSize);
  }
}

std::optional<DecodeError> PacketDecoder::finish() {
  const std::uint64_t end = bytes_consumed() + buffered();
  std::optional<DecodeError> err;
  if (resync_start_) {
    err = DecodeError{*resync_start_, end - *resync_start_, resync_fault_};
  } else if (header_ || buffered() > 0) {
    const std::uint64_t start = header_ ? bytes_consumed() - kHeaderSize : bytes_consumed();
    err = DecodeError{start, end - start, HeaderFault::Truncated};
  }
  buffer_.clear();
  base_offset_ = end;
  read_pos_ = 0;
  header_.reset();
  resync_start_.reset();
  return err;
}

std::vector<std::variant<StreamPacket, DecodeError>> decode_all(std::span<const std::uint8_t> bytes) {
  std::vector<std::variant<StreamPacket, DecodeError>> out;
  PacketDecoder dec;
  dec.feed(bytes);
  for (;;) {
    auto r = dec.next();
    if (std::holds_alternative<NeedMoreBytes>(r)) break;
    if (auto* p = std::get_if<StreamPacket>(&r)) {
      out.emplace_back(std::move(*p));
    } else {
      out.emplace_back(std::get<DecodeError>(r));
    }
  }
  if (auto err = dec.finish()) out.emplace_back(*err);
  return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) out += fmt::format("{:02x}", b);
  return out;
}

} // namespace pulsesync::wire
