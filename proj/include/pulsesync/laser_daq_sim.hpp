#pragma once

// Software stand-ins for the fast-tuning laser, the two-wire phantom and the
// non-real-time DAQ host.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pulsesync/counter_link.hpp"
#include "pulsesync/frame.hpp"
#include "pulsesync/trigger_core.hpp"
#include "pulsesync/wire_protocol.hpp"

namespace pulsesync {

struct LaserConfig {
  double rep_rate_hz = 20.0;
  std::uint32_t prep_flashlamp_pulses = 5;
  Nanos qswitch_delay = 200 * kMicrosecond;
  WavelengthSequence sequence{{700.0, 740.0, 760.0, 780.0}, Layout::Cyclic, 50};
  /// Effective pulses fired, dummy included.
  std::uint64_t total_effective_pulses = 1 + 200;
  /// Relative pulse energy per wavelength; empty means all 1.
  std::vector<double> wavelength_energies;
  /// Per-pulse energy multiplier is 1 + uniform(-jitter, +jitter).
  double energy_jitter = 0.05;
  Nanos start_time = 0;

  Nanos period() const;
  double mean_energy(std::uint32_t wavelength_index) const;
  void validate() const;  // throws ConfigError
};

/// The laser's programmed order for one package, expanded frame by frame:
/// entry p is the wavelength index fired at programmed position p.
std::vector<std::uint32_t> expand_program(const WavelengthSequence& seq);

/// Wavelength index fired by effective pulse `pulse_number` (1-based; pulse 1
/// is the dummy and has none).
std::optional<std::uint32_t> fired_wavelength(const WavelengthSequence& seq,
                                              std::uint64_t pulse_number);

struct PhantomTarget {
  std::string name;
  std::size_t axial_position = 0;
  std::size_t lateral_position = 0;
  std::vector<double> spectrum;  // relative absorption, one per wavelength
};

struct PhantomModel {
  std::vector<PhantomTarget> targets;
  std::size_t axial = 512;
  std::size_t lateral = 128;
  double noise_sigma = 0.02;  // relative to base_amplitude
  double base_amplitude = 10000.0;
  double axial_spread = 3.0;    // Gaussian sigma, samples
  double lateral_spread = 1.5;  // Gaussian sigma, channels

  /// Blue/black wires at default positions with the default spectra.
  static PhantomModel two_wire();

  const PhantomTarget& target(std::string_view name) const;
  void validate(std::size_t wavelength_count) const;
  bool has_validation_targets() const;
};

struct BusyBurst {
  std::uint64_t start_pulse = 0;  // effective pulse number
  std::uint64_t length_pulses = 0;

  bool covers(std::uint64_t pulse) const noexcept {
    return pulse >= start_pulse && pulse < start_pulse + length_pulses;
  }
};

struct DaqPathology {
  double frame_drop_probability = 0.0;
  Nanos start_delay_mean = 100 * kMicrosecond;
  Nanos start_delay_jitter = 50 * kMicrosecond;  // uniform half-width
  std::vector<BusyBurst> busy_bursts;

  static DaqPathology none();
  void validate() const;
};

struct DaqTiming {
  /// Time from acquisition start until the host asks the counter.
  Nanos record_duration = 2 * kMillisecond;
  /// Start-delay deviation per axial sample of content shift; 0 disables.
  Nanos delay_per_axial_sample = 25 * kMicrosecond;
  bool realtime = false;
};

/// Deterministic trigger sequence: prep flashlamps alone, then flashlamp +
/// Q-switch pairs. Timestamps strictly increase.
std::vector<TriggerEvent> generate_trigger_schedule(const LaserConfig& config);

/// Forward model: one Gaussian blob per target, peak amplitude
/// energy * spectrum[w] * base_amplitude, plus Gaussian noise. Samples are
/// rounded and saturate at the int16 range, setting RFFrame::saturated.
RFFrame synthesize_frame(const PhantomModel& phantom, std::uint32_t wavelength_index,
                         double pulse_energy, std::uint64_t rng_seed, int axial_offset = 0);

class PacketSink {
 public:
  virtual ~PacketSink() = default;
  virtual void send(const wire::StreamPacket& packet) = 0;
};

/// Encodes packets onto a byte channel.
class ChannelPacketSink final : public PacketSink {
 public:
  explicit ChannelPacketSink(ByteChannel& channel) : channel_(channel) {}
  void send(const wire::StreamPacket& packet) override;

 private:
  ByteChannel& channel_;
  std::vector<std::uint8_t> scratch_;
};

class CollectingSink final : public PacketSink {
 public:
  void send(const wire::StreamPacket& packet) override { packets.push_back(packet); }
  std::vector<wire::StreamPacket> packets;
};

struct EmittedFrame {
  std::uint64_t counter = 0;
  std::uint64_t pulse_number = 0;
  std::uint32_t true_wavelength_index = 0;
  double pulse_energy = 0.0;
};

struct DaqRunReport {
  std::uint64_t triggers = 0;           // flashlamp triggers seen by the DAQ
  std::uint64_t emitted = 0;
  std::uint64_t dropped = 0;            // effective pulses whose frame was lost
  std::uint64_t suppressed_dummy = 0;   // counter == 1
  std::uint64_t suppressed_prep = 0;    // counter == 0
  std::uint64_t saturated = 0;
  std::uint64_t final_count = 0;
  Nanos virtual_duration = 0;
  std::vector<EmittedFrame> frames;
  std::vector<std::uint64_t> dropped_pulses;

  std::string to_csv() const;
};

/// Drives the laser feed into `counter`, runs the DAQ host loop against
/// `link`, and emits one packet per effective frame into `sink`.
/// Throws ConnectivityError when the counter link stops answering.
DaqRunReport run_daq(const LaserConfig& config, const PhantomModel& phantom,
                     const DaqPathology& pathology, const DaqTiming& timing, std::uint64_t seed,
                     CounterService& counter, CounterLink& link, PacketSink& sink);

} // namespace pulsesync
