#pragma once

// Pulse counting state machine (the micro-controller) and the counter to
// wavelength assignment shared by every stage of the pipeline.

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace pulsesync {

using Nanos = std::int64_t;

inline constexpr Nanos kMicrosecond = 1'000;
inline constexpr Nanos kMillisecond = 1'000'000;
inline constexpr Nanos kSecond = 1'000'000'000;

enum class TriggerKind : std::uint8_t { Flashlamp, QSwitch };

std::string_view to_string(TriggerKind kind);

struct TriggerEvent {
  TriggerKind kind;
  Nanos timestamp;

  friend bool operator==(const TriggerEvent&, const TriggerEvent&) = default;
};

/// Counts effective laser pulses. A pulse is effective when a Q-switch edge
/// follows a pending flashlamp edge within the pairing window.
///
/// A later flashlamp replaces an unconsumed earlier one, and a Q-switch with
/// no pending flashlamp is dropped without counting.
class PulseCounter {
 public:
  static constexpr Nanos kDefaultPairingWindow = 500 * kMicrosecond;

  explicit PulseCounter(Nanos pairing_window = kDefaultPairingWindow);

  /// Throws MonotonicityError when `event` is older than the last event.
  void ingest(const TriggerEvent& event);

  std::uint64_t count() const noexcept { return count_; }
  std::optional<Nanos> pending_flashlamp() const noexcept { return pending_flashlamp_; }
  Nanos pairing_window() const noexcept { return pairing_window_; }

  /// Zeroes the count and forgets any pending flashlamp.
  void reset() noexcept;

 private:
  std::uint64_t count_ = 0;
  std::optional<Nanos> pending_flashlamp_;
  std::optional<Nanos> last_timestamp_;
  Nanos pairing_window_;
};

/// Counter values below this are not streamed: 0 means no pulse yet and 1 is
/// the fast-tuning dummy pulse.
inline constexpr std::uint64_t kFirstEffectiveCount = 2;

constexpr bool is_effective_frame(std::uint64_t count,
                                  std::uint64_t first_effective = kFirstEffectiveCount) noexcept {
  return count >= first_effective;
}

enum class Layout : std::uint8_t { Block, Cyclic };

std::string_view to_string(Layout layout);
Layout parse_layout(std::string_view text);

/// Programmed wavelength order. Validated on construction.
class WavelengthSequence {
 public:
  WavelengthSequence(std::vector<double> wavelengths_nm, Layout layout,
                     std::uint32_t frames_per_wavelength);

  const std::vector<double>& wavelengths() const noexcept { return wavelengths_; }
  std::size_t size() const noexcept { return wavelengths_.size(); }
  Layout layout() const noexcept { return layout_; }
  std::uint32_t frames_per_wavelength() const noexcept { return frames_per_wavelength_; }
  std::uint64_t frames_per_package() const noexcept {
    return std::uint64_t{frames_per_wavelength_} * wavelengths_.size();
  }

  friend bool operator==(const WavelengthSequence&, const WavelengthSequence&) = default;

 private:
  std::vector<double> wavelengths_;
  Layout layout_;
  std::uint32_t frames_per_wavelength_;
};

struct SlotAssignment {
  std::uint32_t wavelength_index;
  std::uint64_t package_index;
  std::uint32_t slot_index;

  friend bool operator==(const SlotAssignment&, const SlotAssignment&) = default;
};

/// Zero-based effective frame index for `count`, or nullopt when the shift
/// pushes it below zero.
std::optional<std::uint64_t> effective_frame_index(
    std::uint64_t count, std::int64_t shift,
    std::uint64_t first_effective = kFirstEffectiveCount) noexcept;

/// Layout position of a single frame index k.
SlotAssignment assign_frame_index(const WavelengthSequence& seq, std::uint64_t k) noexcept;

/// Maps a counter value to its place in the programmed sequence.
///
/// k = count - first_effective + shift. Cyclic interleaves one frame per
/// wavelength; Block takes N consecutive frames per wavelength. Throws
/// ShiftUnderflowError when k < 0. The shift is applied here rather than to
/// the counter so one recorded stream can be re-analysed under any shift.
SlotAssignment assign_wavelength(const WavelengthSequence& seq, std::uint64_t count,
                                 std::int64_t shift = 0,
                                 std::uint64_t first_effective = kFirstEffectiveCount);

} // namespace pulsesync
