#include "pulsesync/laser_daq_sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "pulsesync/errors.hpp"

namespace pulsesync {
namespace {

enum class Stream : std::uint64_t { Energy = 1, Drop = 2, Delay = 3, Noise = 4 };

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

// Maps virtual timestamps onto the wall clock when pacing in real time.
class Pacer {
 public:
  explicit Pacer(bool realtime, Nanos origin)
      : realtime_(realtime), origin_(origin), wall_start_(std::chrono::steady_clock::now()) {}

  void wait_until(Nanos t) const {
    if (!realtime_) return;
    std::this_thread::sleep_until(wall_start_ + std::chrono::nanoseconds(t - origin_));
  }

 private:
  bool realtime_;
  Nanos origin_;
  std::chrono::steady_clock::time_point wall_start_;
};

// Delivers scheduled triggers to the counter in timestamp order.
class LaserFeed {
 public:
  LaserFeed(const std::vector<TriggerEvent>& schedule, CounterService& counter, const Pacer& pacer)
      : schedule_(schedule), counter_(counter), pacer_(pacer) {}

  void advance_to(Nanos t) {
    while (next_ < schedule_.size() && schedule_[next_].timestamp <= t) {
      pacer_.wait_until(schedule_[next_].timestamp);
      counter_.ingest(schedule_[next_]);
      ++next_;
    }
  }

 private:
  const std::vector<TriggerEvent>& schedule_;
  CounterService& counter_;
  const Pacer& pacer_;
  std::size_t next_ = 0;
};

} // namespace

Nanos LaserConfig::period() const {
  return static_cast<Nanos>(std::llround(1e9 / rep_rate_hz));
}

double LaserConfig::mean_energy(std::uint32_t wavelength_index) const {
  return wavelength_energies.empty() ? 1.0 : wavelength_energies.at(wavelength_index);
}

void LaserConfig::validate() const {
  if (!(rep_rate_hz > 0.0) || !std::isfinite(rep_rate_hz)) {
    throw ConfigError("laser repetition rate must be positive");
  }
  if (qswitch_delay < 0 || qswitch_delay >= period()) {
    throw ConfigError("Q-switch delay must lie within one pulse period");
  }
  if (total_effective_pulses == 0) throw ConfigError("total effective pulses must be positive");
  if (!wavelength_energies.empty()) {
    if (wavelength_energies.size() != sequence.size()) {
      throw ConfigError("wavelength energies must have one entry per wavelength");
    }
    for (double e : wavelength_energies) {
      if (!(e > 0.0)) throw ConfigError("wavelength energies must be positive");
    }
  }
  if (energy_jitter < 0.0 || energy_jitter >= 1.0) {
    throw ConfigError("energy jitter must be in [0, 1)");
  }
}

std::vector<std::uint32_t> expand_program(const WavelengthSequence& seq) {
  std::vector<std::uint32_t> program;
  program.reserve(seq.frames_per_package());
  const auto w = static_cast<std::uint32_t>(seq.size());
  const auto n = seq.frames_per_wavelength();
  if (seq.layout() == Layout::Cyclic) {
    for (std::uint32_t rep = 0; rep < n; ++rep)
      for (std::uint32_t i = 0; i < w; ++i) program.push_back(i);
  } else {
    for (std::uint32_t i = 0; i < w; ++i)
      for (std::uint32_t rep = 0; rep < n; ++rep) program.push_back(i);
  }
  return program;
}

std::optional<std::uint32_t> fired_wavelength(const WavelengthSequence& seq, std::uint64_t pulse_number) {
  if (pulse_number < 2) return std::nullopt;
  const std::uint64_t pos = (pulse_number - 2) % seq.frames_per_package();
  if (seq.layout() == Layout::Cyclic) return static_cast<std::uint32_t>(pos % seq.size());
  return static_cast<std::uint32_t>(pos / seq.frames_per_wavelength());
}

PhantomModel PhantomModel::two_wire() {
  PhantomModel m;
  m.targets.push_back({"blue", 180, 40, {1.00, 0.80, 0.62, 0.50}});
  m.targets.push_back({"black", 320, 88, {1.0, 1.0, 1.0, 1.0}});
  return m;
}

const PhantomTarget& PhantomModel::target(std::string_view name) const {
  for (const auto& t : targets) {
    if (t.name == name) return t;
  }
  throw ConfigError(fmt::format("phantom has no target named '{}'", name));
}

bool PhantomModel::has_validation_targets() const {
  const auto has = [&](std::string_view n) {
    return std::any_of(targets.begin(), targets.end(), [&](const auto& t) { return t.name == n; });
  };
  return has("blue") && has("black");
}

void PhantomModel::validate(std::size_t wavelength_count) const {
  if (axial == 0 || lateral == 0) throw ConfigError("phantom frame dims must be at least 1x1");
  if (noise_sigma < 0.0) throw ConfigError("noise sigma must be non-negative");
  if (!(base_amplitude > 0.0)) throw ConfigError("base amplitude must be positive");
  if (!(axial_spread > 0.0) || !(lateral_spread > 0.0)) {
    throw ConfigError("point spread must be positive");
  }
  for (const auto& t : targets) {
    if (t.spectrum.size() != wavelength_count) {
      throw ConfigError(fmt::format("target '{}' spectrum has {} values, expected {}", t.name,
                                    t.spectrum.size(), wavelength_count));
    }
    for (double v : t.spectrum) {
      if (!(v > 0.0)) throw ConfigError(fmt::format("target '{}' spectrum values must be > 0", t.name));
    }
    if (t.axial_position >= axial || t.lateral_position >= lateral) {
      throw ConfigError(fmt::format("target '{}' lies outside the frame", t.name));
    }
  }
}

DaqPathology DaqPathology::none() {
  DaqPathology p;
  p.start_delay_jitter = 0;
  return p;
}

void DaqPathology::validate() const {
  if (!(frame_drop_probability >= 0.0 && frame_drop_probability <= 1.0)) {
    throw ConfigError("frame drop probability must be in [0, 1]");
  }
  if (start_delay_jitter < 0) throw ConfigError("start delay jitter must be non-negative");
  if (start_delay_mean - start_delay_jitter < 0) {
    throw ConfigError("start delay mean minus jitter must be non-negative");
  }
}

std::vector<TriggerEvent> generate_trigger_schedule(const LaserConfig& config) {
  config.validate();
  const Nanos period = config.period();
  std::vector<TriggerEvent> events;
  events.reserve(config.prep_flashlamp_pulses + 2 * config.total_effective_pulses);
  Nanos t = config.start_time;
  for (std::uint32_t i = 0; i < config.prep_flashlamp_pulses; ++i, t += period) {
    events.push_back({TriggerKind::Flashlamp, t});
  }
  for (std::uint64_t i = 0; i < config.total_effective_pulses; ++i, t += period) {
    events.push_back({TriggerKind::Flashlamp, t});
    events.push_back({TriggerKind::QSwitch, t + config.qswitch_delay});
  }
  return events;
}

RFFrame synthesize_frame(const PhantomModel& phantom, std::uint32_t wavelength_index,
                         double pulse_energy, std::uint64_t rng_seed, int axial_offset) {
  if (!(pulse_energy > 0.0)) throw std::invalid_argument("pulse energy must be positive");
  const std::size_t A = phantom.axial;
  const std::size_t L = phantom.lateral;
  std::vector<double> field(A * L, 0.0);

  for (const auto& t : phantom.targets) {
    if (wavelength_index >= t.spectrum.size()) {
      throw std::out_of_range("wavelength index outside target spectrum");
    }
    const double amp = pulse_energy * t.spectrum[wavelength_index] * phantom.base_amplitude;
    const auto ca = static_cast<long>(t.axial_position) + axial_offset;
    const auto cl = static_cast<long>(t.lateral_position);
    const long ra = static_cast<long>(std::ceil(4.0 * phantom.axial_spread));
    const long rl = static_cast<long>(std::ceil(4.0 * phantom.lateral_spread));
    for (long a = std::max(0L, ca - ra); a <= std::min(static_cast<long>(A) - 1, ca + ra); ++a) {
      const double da = static_cast<double>(a - ca) / phantom.axial_spread;
      for (long l = std::max(0L, cl - rl); l <= std::min(static_cast<long>(L) - 1, cl + rl); ++l) {
        const double dl = static_cast<double>(l - cl) / phantom.lateral_spread;
        field[static_cast<std::size_t>(a) * L + static_cast<std::size_t>(l)] +=
            amp * std::exp(-0.5 * (da * da + dl * dl));
      }
    }
  }

  if (phantom.noise_sigma > 0.0) {
    auto rng = make_rng(rng_seed, Stream::Noise);
    std::normal_distribution<double> noise(0.0, phantom.noise_sigma * phantom.base_amplitude);
    for (double& v : field) v += noise(rng);
  }

  RFFrame frame(A, L);
  constexpr double lo = std::numeric_limits<std::int16_t>::min();
  constexpr double hi = std::numeric_limits<std::int16_t>::max();
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double r = std::nearbyint(field[i]);
    if (r > hi || r < lo) frame.saturated = true;
    frame.samples[i] = static_cast<std::int16_t>(std::clamp(r, lo, hi));
  }
  return frame;
}

void ChannelPacketSink::send(const wire::StreamPacket& packet) {
  scratch_.clear();
  wire::append_packet(packet, scratch_);
  channel_.write_all(scratch_);
}

std::string DaqRunReport::to_csv() const {
  std::string out = "metric,value\n";
  out += fmt::format("triggers,{}\n", triggers);
  out += fmt::format("emitted,{}\n", emitted);
  out += fmt::format("dropped,{}\n", dropped);
  out += fmt::format("suppressed_dummy,{}\n", suppressed_dummy);
  out += fmt::format("suppressed_prep,{}\n", suppressed_prep);
  out += fmt::format("saturated,{}\n", saturated);
  out += fmt::format("final_count,{}\n", final_count);
  out += fmt::format("virtual_seconds,{:.6f}\n", static_cast<double>(virtual_duration) / kSecond);
  return out;
}

DaqRunReport run_daq(const LaserConfig& config, const PhantomModel& phantom,
                     const DaqPathology& pathology, const DaqTiming& timing, std::uint64_t seed,
                     CounterService& counter, CounterLink& link, PacketSink& sink) {
  config.validate();
  phantom.validate(config.sequence.size());
  pathology.validate();
  const Nanos period = config.period();
  if (pathology.start_delay_mean + pathology.start_delay_jitter + timing.record_duration >= period ||
      pathology.start_delay_mean - pathology.start_delay_jitter + timing.record_duration <= config.qswitch_delay) {
    throw ConfigError("DAQ query time must fall after the Q-switch and before the next pulse");
  }

  const auto schedule = generate_trigger_schedule(config);
  const Pacer pacer(timing.realtime, config.start_time);
  LaserFeed feed(schedule, counter, pacer);

  auto energy_rng = make_rng(seed, Stream::Energy);
  auto drop_rng = make_rng(seed, Stream::Drop);
  auto delay_rng = make_rng(seed, Stream::Delay);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  DaqRunReport report;
  std::uint64_t pulse_number = 0;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const TriggerEvent& ev = schedule[i];
    if (ev.kind != TriggerKind::Flashlamp) continue;
    ++report.triggers;
    const bool lasing = i + 1 < schedule.size() && schedule[i + 1].kind == TriggerKind::QSwitch;
    if (lasing) ++pulse_number;

    // Every trigger consumes the same draws so runs stay comparable across
    // pathology settings.
    const double delay_draw = jitter(delay_rng);
    const double energy_draw = jitter(energy_rng);
    const double drop_draw = unit(drop_rng);

    const Nanos start_delay = pathology.start_delay_mean +
        static_cast<Nanos>(std::llround(delay_draw * static_cast<double>(pathology.start_delay_jitter)));
    const Nanos query_time = ev.timestamp + start_delay + timing.record_duration;
    feed.advance_to(query_time);
    pacer.wait_until(query_time);

    if (lasing) {
      const bool busy = std::any_of(pathology.busy_bursts.begin(), pathology.busy_bursts.end(),
                                    [&](const BusyBurst& b) { return b.covers(pulse_number); });
      if (busy || drop_draw < pathology.frame_drop_probability) {
        ++report.dropped;
        report.dropped_pulses.push_back(pulse_number);
        continue;
      }
    }

    const std::uint64_t count = link.query_count();
    if (!is_effective_frame(count)) {
      ++(count == 0 ? report.suppressed_prep : report.suppressed_dummy);
      continue;
    }

    // Ground truth comes from the laser's own program, not from the counter.
    const auto fired = fired_wavelength(config.sequence, pulse_number);
    if (!fired) throw std::logic_error("effective count reported for a non-programmed pulse");
    const double energy = config.mean_energy(*fired) * (1.0 + config.energy_jitter * energy_draw);
    int axial_offset = 0;
    if (timing.delay_per_axial_sample > 0) {
      axial_offset = static_cast<int>(std::lround(
          static_cast<double>(start_delay - pathology.start_delay_mean) /
          static_cast<double>(timing.delay_per_axial_sample)));
    }
    RFFrame frame = synthesize_frame(phantom, *fired, energy, seed ^ (pulse_number * 0x9E3779B97F4A7C15ull),
                                     axial_offset);
    frame.acquisition_timestamp = ev.timestamp + start_delay;
    if (frame.saturated) ++report.saturated;

    sink.send(wire::make_packet(count, frame));
    ++report.emitted;
    report.frames.push_back({count, pulse_number, *fired, energy});
  }
  if (!schedule.empty()) {
    feed.advance_to(schedule.back().timestamp);
    report.virtual_duration = schedule.back().timestamp - config.start_time;
  }
  report.final_count = counter.count();
  return report;
}

} // namespace pulsesync
