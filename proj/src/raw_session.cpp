#include "pulsesync/raw_session.hpp"

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "pulsesync/errors.hpp"

namespace pulsesync {

using nlohmann::json;

std::string SessionManifest::to_json() const {
  json j;
  j["format"] = "pulsesync-session";
  j["version"] = 1;
  j["wavelengths_nm"] = sequence.wavelengths();
  j["layout"] = std::string(to_string(sequence.layout()));
  j["frames_per_wavelength"] = sequence.frames_per_wavelength();
  j["first_effective_count"] = first_effective_count;
  j["axial"] = axial;
  j["lateral"] = lateral;
  j["config_hash"] = config_hash;
  return j.dump(2) + "\n";
}

SessionManifest SessionManifest::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    SessionManifest m;
    m.sequence = WavelengthSequence(j.at("wavelengths_nm").get<std::vector<double>>(),
                                    parse_layout(j.at("layout").get<std::string>()),
                                    j.at("frames_per_wavelength").get<std::uint32_t>());
    m.first_effective_count = j.at("first_effective_count").get<std::uint64_t>();
    m.axial = j.at("axial").get<std::size_t>();
    m.lateral = j.at("lateral").get<std::size_t>();
    m.config_hash = j.value("config_hash", "");
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("malformed session manifest: {}", e.what()));
  }
}

RawFrameRecord make_record(const wire::StreamPacket& packet, const WavelengthSequence& seq,
                           std::uint64_t first_effective) {
  RawFrameRecord r;
  r.counter = packet.header.frame_counter;
  const auto slot = assign_wavelength(seq, r.counter, 0, first_effective);
  r.wavelength_index = slot.wavelength_index;
  r.package_index = slot.package_index;
  r.slot_index = slot.slot_index;
  r.frame = wire::frame_from_packet(packet);
  return r;
}

RawSessionWriter::RawSessionWriter(const std::filesystem::path& dir, SessionManifest manifest)
    : dir_(dir), manifest_(std::move(manifest)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw StorageError(fmt::format("cannot create session dir {}: {}", dir_.string(), ec.message()));
  write_manifest();
  const auto log_path = dir_ / kFrameLogFile;
  log_ = std::fopen(log_path.c_str(), "wb");  // a new session replaces any old one
  if (log_ == nullptr) {
    throw StorageError(fmt::format("cannot open {}: {}", log_path.string(), std::strerror(errno)));
  }
}

RawSessionWriter::~RawSessionWriter() {
  if (log_ != nullptr) std::fclose(log_);
}

void RawSessionWriter::write_manifest() {
  const auto path = dir_ / kManifestFile;
  std::ofstream out(path, std::ios::trunc);
  out << manifest_.to_json();
  out.flush();
  if (!out) throw StorageError(fmt::format("cannot write {}", path.string()));
}

void RawSessionWriter::set_dims(std::size_t axial, std::size_t lateral) {
  if (manifest_.axial == axial && manifest_.lateral == lateral) return;
  manifest_.axial = axial;
  manifest_.lateral = lateral;
  write_manifest();
}

void RawSessionWriter::append(const wire::StreamPacket& packet) {
  if (log_ == nullptr) throw StorageError("session log already closed");
  scratch_.clear();
  wire::append_packet(packet, scratch_);
  if (std::fwrite(scratch_.data(), 1, scratch_.size(), log_) != scratch_.size() || std::fflush(log_) != 0) {
    throw StorageError(fmt::format("write to {} failed: {}", (dir_ / kFrameLogFile).string(),
                                   std::strerror(errno)));
  }
  ++records_;
}

void RawSessionWriter::close() {
  if (log_ == nullptr) return;
  const int rc = std::fclose(log_);
  log_ = nullptr;
  if (rc != 0) throw StorageError(fmt::format("closing session log failed: {}", std::strerror(errno)));
}

SessionManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestFile);
  if (!in) throw ConfigError(fmt::format("no session manifest in {}", dir.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return SessionManifest::from_json(ss.str());
}

SessionScan for_each_packet(const std::filesystem::path& dir,
                            const std::function<void(const wire::StreamPacket&)>& visit) {
  const auto path = dir / kFrameLogFile;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("no frame log at {}", path.string()));
  SessionScan scan;
  wire::PacketDecoder dec;
  std::vector<std::uint8_t> chunk(1 << 20);
  const auto drain = [&] {
    for (;;) {
      auto r = dec.next();
      if (std::holds_alternative<wire::NeedMoreBytes>(r)) return;
      if (auto* p = std::get_if<wire::StreamPacket>(&r)) {
        ++scan.packets;
        visit(*p);
      } else {
        scan.errors.push_back(std::get<wire::DecodeError>(r));
      }
    }
  };
  while (in) {
    in.read(reinterpret_cast<char*>(chunk.data()), static_cast<std::streamsize>(chunk.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got == 0) break;
    dec.feed(std::span(chunk.data(), got));
    drain();
  }
  if (auto err = dec.finish()) scan.errors.push_back(*err);
  return scan;
}

std::vector<wire::StreamPacket> read_packets(const std::filesystem::path& dir) {
  std::vector<wire::StreamPacket> out;
  for_each_packet(dir, [&](const wire::StreamPacket& p) { out.push_back(p); });
  return out;
}

} // namespace pulsesync
