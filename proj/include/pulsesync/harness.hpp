#pragma once

// End-to-end orchestration shared by the CLI and the acceptance suite.
//
// Output directory layout:
//   session/            raw session (manifest + packet log)
//   spectra.csv         live consumer output, one row per wavelength per package
//   shift_spectra.csv   shift analysis output
//   verdict.txt         validation verdict
//   *_report.csv        per-component run reports

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include "pulsesync/byte_channel.hpp"
#include "pulsesync/client_consumer.hpp"
#include "pulsesync/laser_daq_sim.hpp"
#include "pulsesync/scenario.hpp"
#include "pulsesync/stream_server.hpp"

namespace pulsesync {

inline constexpr const char* kSessionDir = "session";
inline constexpr const char* kSpectraCsv = "spectra.csv";
inline constexpr const char* kShiftCsv = "shift_spectra.csv";
inline constexpr const char* kVerdictFile = "verdict.txt";

/// Laser + counter emulator + DAQ host streaming to `channel`.
DaqRunReport simulate_into(const ScenarioConfig& config, ByteChannel& channel);

/// Connects to a live server and streams one simulated run.
DaqRunReport simulate_to(const ScenarioConfig& config, const Endpoint& server);

struct LoopbackOptions {
  /// Persist raw frames under out_dir/session; false keeps nothing on disk.
  bool persist = true;
  /// Write the live spectrum CSV (out_dir/spectra.csv).
  bool write_spectra = true;
  /// Over real TCP on 127.0.0.1 rather than an in-memory channel.
  bool tcp = true;
};

struct LoopbackReport {
  DaqRunReport daq;
  ServerReport server;
  ConsumerReport consumer;
  std::uint64_t ring_overruns = 0;
};

/// Runs DAQ, server, ring and consumer in one process; every component on
/// its own thread. Writes the run reports into out_dir.
LoopbackReport run_loopback(const ScenarioConfig& config, const std::filesystem::path& out_dir,
                            const LoopbackOptions& options = {});

struct ServeReport {
  ServerReport server;
  std::uint64_t ring_overruns = 0;
  std::uint64_t published = 0;
};

/// Stream server publishing into `ring`, persisting to out_dir/session.
ServeReport run_serve(const ScenarioConfig& config, const Endpoint& listen, const std::filesystem::path& out_dir,
                      ExchangeRing& ring, std::stop_token stop = {});

struct Verdict {
  ShiftAnalysis analysis;
  std::vector<double> reference;
  std::optional<std::int64_t> argmin;
  bool argmin_ok = false;
  /// Max |ratio(+2) - ratio(-2)| over wavelengths valid in both.
  std::optional<double> pm2_max_diff;
  /// False when the layout makes +2 and -2 distinct phases.
  bool pm2_applicable = false;
  bool pm2_ok = false;

  bool pass() const noexcept { return argmin_ok && (!pm2_applicable || pm2_ok); }
  std::string to_text() const;
};

inline constexpr double kEquivalenceTolerance = 1e-12;

struct ValidateOptions {
  std::vector<std::int64_t> shifts{-2, -1, 0, 1, 2};
  /// Demultiplexing offset; the default is the manifest's.
  std::optional<std::uint64_t> first_effective;
};

/// Shift analysis of a recorded session plus the two verdict checks.
Verdict validate_session(const std::filesystem::path& session_dir, const ScenarioConfig& config,
                         const ValidateOptions& options = {});

/// validate_session, writing shift_spectra.csv and verdict.txt into out_dir.
Verdict validate_to(const std::filesystem::path& session_dir, const ScenarioConfig& config,
                    const ValidateOptions& options, const std::filesystem::path& out_dir);

struct ReplayReport {
  std::uint64_t packets = 0;
  std::uint64_t decode_errors = 0;
};

/// Re-sends a recorded session's packets to a live server. With `rate_hz`
/// > 0 packets are paced at that rate.
ReplayReport replay_session(const std::filesystem::path& session_dir, ByteChannel& channel, double rate_hz = 0.0);

void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace pulsesync
