#pragma once

// Client side: energy compensation, blue/black ratio spectra and the
// counter-shift analysis used to validate wavelength assignment.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stop_token>
#include <string>
#include <vector>

#include "pulsesync/exchange_ring.hpp"
#include "pulsesync/package.hpp"
#include "pulsesync/trigger_core.hpp"

namespace pulsesync {

/// Pre-measured relative pulse energy per wavelength.
struct EnergyTable {
  std::vector<double> energies;

  static EnergyTable unity(std::size_t wavelengths) { return {std::vector<double>(wavelengths, 1.0)}; }
  void validate(std::size_t wavelengths) const;  // throws ConfigError
};

/// Divides each wavelength plane by its energy. Bookkeeping is untouched.
WavelengthPackage compensate(const WavelengthPackage& package, const EnergyTable& table);

enum class PeakMetric { MaxAbs, WindowMean };

struct TargetWindow {
  std::size_t axial = 0;
  std::size_t lateral = 0;
  std::size_t axial_radius = 8;
  std::size_t lateral_radius = 4;
};

struct PhantomGeometry {
  TargetWindow blue;
  TargetWindow black;
  PeakMetric metric = PeakMetric::MaxAbs;

  /// Throws ConfigError when a window leaves the frame or the two overlap.
  void validate(std::size_t axial, std::size_t lateral) const;
};

enum SpectrumFlags : std::uint32_t {
  kSpectrumMissing = 1u << 0,    // no frames for this wavelength
  kSpectrumZeroBlack = 1u << 1,  // black peak is zero, ratio undefined
};

struct SpectrumResult {
  std::int64_t shift = 0;
  std::uint64_t package_index = 0;
  std::vector<double> wavelengths_nm;
  std::vector<double> ratio;  // NaN where flagged
  std::vector<double> peak_blue;
  std::vector<double> peak_black;
  std::vector<std::uint32_t> frames_used;
  std::vector<std::uint32_t> flags;
  std::uint32_t package_flags = 0;
  std::optional<double> rmse_vs_reference;

  std::size_t valid_count() const;
};

SpectrumResult extract_spectrum(const WavelengthPackage& package, const PhantomGeometry& geometry,
                                std::int64_t shift = 0);

/// Root-mean-square difference over unflagged wavelengths; nullopt if none.
std::optional<double> ratio_rmse(const SpectrumResult& result, const std::vector<double>& reference);

/// Spectrum CSV: shift,packageIndex,wavelength_nm,ratio,peakBlue,peakBlack,framesUsed,flags
inline constexpr const char* kSpectrumCsvHeader =
    "shift,packageIndex,wavelength_nm,ratio,peakBlue,peakBlack,framesUsed,flags";
void write_spectrum_rows(std::ostream& out, const SpectrumResult& result);

struct ShiftAnalysisOptions {
  std::vector<std::int64_t> shifts{-2, -1, 0, 1, 2};
  std::uint64_t first_effective = kFirstEffectiveCount;
  /// Use only frames that lie in the domain of every shift, so all shifts
  /// average the same frames.
  bool common_domain = true;
};

struct ShiftAnalysis {
  std::vector<SpectrumResult> results;  // ordered by shift
  std::uint64_t frames = 0;
  std::uint64_t excluded_frames = 0;

  const SpectrumResult* for_shift(std::int64_t shift) const;
  std::optional<std::int64_t> argmin_rmse() const;
};

/// Re-demultiplexes the persisted session under each shift, averages every
/// frame of each wavelength across the whole session, compensates and
/// extracts the ratio spectrum. Throws ConfigError for an empty session.
ShiftAnalysis shift_analysis(const std::filesystem::path& session_dir, const WavelengthSequence& seq,
                             const PhantomGeometry& geometry, const EnergyTable& table,
                             const std::vector<double>& reference, const ShiftAnalysisOptions& options = {});

struct ConsumerOptions {
  std::chrono::milliseconds poll_interval{2};
  /// Stop after this long with nothing new and the ring not closed; zero waits forever.
  std::chrono::milliseconds idle_timeout{0};
};

struct ConsumerReport {
  std::uint64_t packages = 0;
  std::uint64_t rows = 0;
  std::uint64_t gaps = 0;          // sequences lost to overruns
  std::uint64_t gap_events = 0;    // polls that reported a gap
  std::uint64_t last_sequence = 0;
  std::uint64_t torn_reads = 0;

  std::string to_csv() const;
};

/// Polls until the ring is closed and drained, `stop` is requested, or the
/// idle timeout elapses. Writes the CSV header first.
ConsumerReport run_consumer(ExchangeRing& ring, const EnergyTable& table, const PhantomGeometry& geometry,
                            std::ostream& csv, const ConsumerOptions& options = {}, std::stop_token stop = {});

} // namespace pulsesync
