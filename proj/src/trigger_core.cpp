#include "pulsesync/trigger_core.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include <fmt/format.h>

#include "pulsesync/errors.hpp"

namespace pulsesync {

std::string_view to_string(TriggerKind kind) {
  return kind == TriggerKind::Flashlamp ? "flashlamp" : "qswitch";
}

PulseCounter::PulseCounter(Nanos pairing_window) : pairing_window_(pairing_window) {
  if (pairing_window < 0) {
    throw ConfigError("pairing window must be non-negative");
  }
}

void PulseCounter::ingest(const TriggerEvent& event) {
  if (last_timestamp_ && event.timestamp < *last_timestamp_) {
    throw MonotonicityError(fmt::format("trigger at {} ns precedes previous trigger at {} ns",
                                        event.timestamp, *last_timestamp_));
  }
  last_timestamp_ = event.timestamp;

  if (event.kind == TriggerKind::Flashlamp) {
    pending_flashlamp_ = event.timestamp;
    return;
  }
  // Q-switch: pairs with the pending flashlamp or is dropped.
  if (pending_flashlamp_ && event.timestamp - *pending_flashlamp_ <= pairing_window_) {
    ++count_;
  }
  pending_flashlamp_.reset();
}

void PulseCounter::reset() noexcept {
  count_ = 0;
  pending_flashlamp_.reset();
}

std::string_view to_string(Layout layout) {
  return layout == Layout::Block ? "block" : "cyclic";
}

Layout parse_layout(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "block") return Layout::Block;
  if (lower == "cyclic") return Layout::Cyclic;
  throw ConfigError(fmt::format("unknown layout '{}' (expected block or cyclic)", text));
}

WavelengthSequence::WavelengthSequence(std::vector<double> wavelengths_nm, Layout layout,
                                       std::uint32_t frames_per_wavelength)
    : wavelengths_(std::move(wavelengths_nm)),
      layout_(layout),
      frames_per_wavelength_(frames_per_wavelength) {
  if (wavelengths_.empty()) {
    throw ConfigError("wavelength sequence must contain at least one wavelength");
  }
  if (frames_per_wavelength_ == 0) {
    throw ConfigError("frames per wavelength must be positive");
  }
  for (std::size_t i = 0; i < wavelengths_.size(); ++i) {
    for (std::size_t j = i + 1; j < wavelengths_.size(); ++j) {
      if (wavelengths_[i] == wavelengths_[j]) {
        throw ConfigError(fmt::format("wavelength {} nm appears twice in sequence", wavelengths_[i]));
      }
    }
  }
}

std::optional<std::uint64_t> effective_frame_index(std::uint64_t count, std::int64_t shift,
                                                   std::uint64_t first_effective) noexcept {
  // count is far below 2^63 in any realistic session; compare in signed space.
  const auto k = static_cast<std::int64_t>(count) - static_cast<std::int64_t>(first_effective) + shift;
  if (k < 0) return std::nullopt;
  return static_cast<std::uint64_t>(k);
}

SlotAssignment assign_frame_index(const WavelengthSequence& seq, std::uint64_t k) noexcept {
  const std::uint64_t w = seq.size();
  const std::uint64_t n = seq.frames_per_wavelength();
  SlotAssignment out{};
  out.package_index = k / (n * w);
  if (seq.layout() == Layout::Cyclic) {
    out.wavelength_index = static_cast<std::uint32_t>(k % w);
    out.slot_index = static_cast<std::uint32_t>((k / w) % n);
  } else {
    out.wavelength_index = static_cast<std::uint32_t>((k / n) % w);
    out.slot_index = static_cast<std::uint32_t>(k % n);
  }
  return out;
}

SlotAssignment assign_wavelength(const WavelengthSequence& seq, std::uint64_t count,
                                 std::int64_t shift, std::uint64_t first_effective) {
  const auto k = effective_frame_index(count, shift, first_effective);
  if (!k) {
    throw ShiftUnderflowError(fmt::format(
        "counter {} with shift {} falls before the first effective frame", count, shift));
  }
  return assign_frame_index(seq, *k);
}

} // namespace pulsesync
