#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace pulsesync {

enum PackageFlags : std::uint32_t {
  kPackageFinalFlush = 1u << 0,    // flushed at end of stream, range not fully passed
  kPackageTimeoutFlush = 1u << 1,  // flushed after the inactivity timeout
};

struct MissingSlot {
  std::uint32_t wavelength_index;
  std::uint32_t slot_index;

  friend bool operator==(const MissingSlot&, const MissingSlot&) = default;
};

/// Averaged Axial x Lateral x Wavelength tensor for one package of the
/// programmed sequence, with per-wavelength frame bookkeeping.
struct WavelengthPackage {
  std::uint64_t package_index = 0;
  std::size_t axial = 0;
  std::size_t lateral = 0;
  std::vector<double> wavelengths_nm;
  /// Row-major axial x lateral x wavelength; the wavelength index varies fastest.
  std::vector<double> tensor;
  std::vector<std::uint32_t> frames_used;
  std::uint32_t frames_expected = 0;  // N, per wavelength
  std::vector<MissingSlot> missing_frames;
  std::vector<std::uint32_t> incomplete_wavelengths;
  std::uint64_t min_counter = 0;
  std::uint64_t max_counter = 0;
  std::uint32_t flags = 0;

  std::size_t wavelength_count() const noexcept { return wavelengths_nm.size(); }
  std::size_t index(std::size_t a, std::size_t l, std::size_t w) const noexcept {
    return (a * lateral + l) * wavelengths_nm.size() + w;
  }
  double at(std::size_t a, std::size_t l, std::size_t w) const { return tensor[index(a, l, w)]; }
  double& at(std::size_t a, std::size_t l, std::size_t w) { return tensor[index(a, l, w)]; }

  /// Copy of one wavelength plane, axial x lateral.
  std::vector<double> slice(std::size_t w) const;

  friend bool operator==(const WavelengthPackage&, const WavelengthPackage&) = default;
};

/// Flat binary image used by the exchange ring.
std::vector<std::uint8_t> serialize_package(const WavelengthPackage& pkg);
std::size_t serialized_package_size(const WavelengthPackage& pkg) noexcept;
/// Writes into `out`, which must hold serialized_package_size(pkg) bytes.
void serialize_package_into(const WavelengthPackage& pkg, std::span<std::uint8_t> out);
/// Throws std::invalid_argument on a malformed image.
WavelengthPackage deserialize_package(std::span<const std::uint8_t> bytes);

/// Upper bound on the serialized size of any package with these dims.
std::size_t max_serialized_package_size(std::size_t axial, std::size_t lateral,
                                        std::size_t wavelengths, std::size_t frames_per_wavelength);

} // namespace pulsesync
