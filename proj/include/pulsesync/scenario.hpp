#pragma once

// Scenario files: INI-style key/value text describing one run.
//
//   [sequence]  wavelengths_nm, layout, frames_per_wavelength, first_effective_count
//   [laser]     rep_rate_hz, prep_flashlamp_pulses, qswitch_delay_us,
//               total_effective_pulses | packages, energy_jitter, wavelength_energies
//   [phantom]   axial, lateral, noise_sigma, base_amplitude, axial_spread, lateral_spread
//   [target.<name>]  axial, lateral, spectrum
//   [pathology] frame_drop_probability, start_delay_mean_us, start_delay_jitter_us,
//               busy_bursts ("start:length, ...")
//   [daq]       record_duration_us, delay_per_axial_sample_us, pairing_window_us,
//               counter_timeout_ms, realtime
//   [energies]  values
//   [geometry]  axial_radius, lateral_radius, metric (max_abs | mean)
//   [network]   server (HOST:PORT)
//   [ring]      capacity, shm_name
//   [server]    inactivity_timeout_ms, accept_timeout_ms
//   [validate]  shifts
//   [run]       seed, output_dir
//
// Every key is optional; omitted keys take the defaults below.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pulsesync/byte_channel.hpp"
#include "pulsesync/client_consumer.hpp"
#include "pulsesync/laser_daq_sim.hpp"

namespace pulsesync {

struct ScenarioConfig {
  LaserConfig laser;
  PhantomModel phantom = PhantomModel::two_wire();
  DaqPathology pathology;
  DaqTiming timing;
  Nanos pairing_window = PulseCounter::kDefaultPairingWindow;
  std::chrono::milliseconds counter_timeout = kDefaultCounterTimeout;
  std::uint64_t first_effective_count = kFirstEffectiveCount;
  EnergyTable energies{{1.0, 1.0, 1.0, 1.0}};
  PhantomGeometry geometry;
  Endpoint server{"127.0.0.1", 7345};
  std::uint64_t ring_capacity = 8;
  std::string ring_shm_name;
  std::chrono::milliseconds inactivity_timeout{2000};
  std::chrono::milliseconds accept_timeout{30000};
  std::vector<std::int64_t> shifts{-2, -1, 0, 1, 2};
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "pulsesync-out";
  /// CRC-32 of the source text, hex.
  std::string config_hash;

  const WavelengthSequence& sequence() const noexcept { return laser.sequence; }

  /// Ratio of the configured blue and black spectra.
  std::vector<double> reference_ratio() const;

  /// Cross-field checks; throws ConfigError.
  void validate() const;

  /// Ring slot size for one package at these dims.
  std::size_t ring_slot_bytes() const;
};

/// Throws ConfigError on syntax or value errors.
ScenarioConfig parse_scenario(const std::string& text);
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Geometry windows centred on the phantom's blue and black targets.
PhantomGeometry geometry_for(const PhantomModel& phantom, std::size_t axial_radius, std::size_t lateral_radius,
                             PeakMetric metric = PeakMetric::MaxAbs);

std::vector<std::int64_t> parse_int_list(std::string_view text);
std::vector<double> parse_double_list(std::string_view text);

} // namespace pulsesync
