#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pulsesync/trigger_core.hpp"

namespace pulsesync {

/// One RF channel-data capture, axial samples x lateral channels, row-major
/// (axial outer).
struct RFFrame {
  std::size_t axial = 0;
  std::size_t lateral = 0;
  std::vector<std::int16_t> samples;
  Nanos acquisition_timestamp = 0;
  bool saturated = false;

  RFFrame() = default;
  RFFrame(std::size_t axial_samples, std::size_t lateral_channels)
      : axial(axial_samples), lateral(lateral_channels), samples(axial_samples * lateral_channels) {}

  std::int16_t& at(std::size_t a, std::size_t l) { return samples[a * lateral + l]; }
  std::int16_t at(std::size_t a, std::size_t l) const { return samples[a * lateral + l]; }

  bool dims_consistent() const noexcept {
    return axial >= 1 && lateral >= 1 && samples.size() == axial * lateral;
  }

  friend bool operator==(const RFFrame&, const RFFrame&) = default;
};

} // namespace pulsesync
