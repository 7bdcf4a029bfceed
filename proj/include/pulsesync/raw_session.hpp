#pragma once

// Raw frame persistence. A session directory holds
//   manifest.json  sequence, dims, counter offset, config hash
//   frames.rmpa    every accepted packet, wire bytes verbatim, in arrival order

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pulsesync/frame.hpp"
#include "pulsesync/trigger_core.hpp"
#include "pulsesync/wire_protocol.hpp"

namespace pulsesync {

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kFrameLogFile = "frames.rmpa";

struct SessionManifest {
  WavelengthSequence sequence{{700.0}, Layout::Cyclic, 1};
  std::uint64_t first_effective_count = kFirstEffectiveCount;
  std::size_t axial = 0;
  std::size_t lateral = 0;
  std::string config_hash;

  std::string to_json() const;
  static SessionManifest from_json(const std::string& text);  // throws ConfigError
};

struct RawFrameRecord {
  std::uint64_t counter = 0;
  std::uint32_t wavelength_index = 0;
  std::uint64_t package_index = 0;
  std::uint32_t slot_index = 0;
  RFFrame frame;
};

RawFrameRecord make_record(const wire::StreamPacket& packet, const WavelengthSequence& seq,
                           std::uint64_t first_effective = kFirstEffectiveCount);

/// Append-only packet log. Every failed write throws StorageError.
class RawSessionWriter {
 public:
  RawSessionWriter(const std::filesystem::path& dir, SessionManifest manifest);
  RawSessionWriter(const RawSessionWriter&) = delete;
  RawSessionWriter& operator=(const RawSessionWriter&) = delete;
  ~RawSessionWriter();

  /// Records the session dims once the first frame is known.
  void set_dims(std::size_t axial, std::size_t lateral);
  void append(const wire::StreamPacket& packet);
  void close();

  std::uint64_t records() const noexcept { return records_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  void write_manifest();

  std::filesystem::path dir_;
  SessionManifest manifest_;
  std::FILE* log_ = nullptr;
  std::vector<std::uint8_t> scratch_;
  std::uint64_t records_ = 0;
};

SessionManifest read_manifest(const std::filesystem::path& dir);

struct SessionScan {
  std::uint64_t packets = 0;
  std::vector<wire::DecodeError> errors;
};

/// Streams every packet of the session log through `visit`, in file order.
SessionScan for_each_packet(const std::filesystem::path& dir,
                            const std::function<void(const wire::StreamPacket&)>& visit);

std::vector<wire::StreamPacket> read_packets(const std::filesystem::path& dir);

} // namespace pulsesync
