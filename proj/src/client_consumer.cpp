#include "pulsesync/client_consumer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "pulsesync/errors.hpp"
#include "pulsesync/raw_session.hpp"

namespace pulsesync {
namespace {

struct WindowBounds {
  std::size_t a0, a1, l0, l1;  // inclusive
};

WindowBounds bounds(const TargetWindow& w) {
  return {w.axial - std::min(w.axial, w.axial_radius), w.axial + w.axial_radius,
          w.lateral - std::min(w.lateral, w.lateral_radius), w.lateral + w.lateral_radius};
}

double window_peak(const WavelengthPackage& p, const TargetWindow& win, std::size_t w, PeakMetric metric) {
  const auto b = bounds(win);
  double best = 0.0;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t a = b.a0; a <= b.a1; ++a) {
    for (std::size_t l = b.l0; l <= b.l1; ++l) {
      const double v = p.at(a, l, w);
      best = std::max(best, std::abs(v));
      sum += v;
      ++n;
    }
  }
  return metric == PeakMetric::MaxAbs ? best : sum / static_cast<double>(n);
}

} // namespace

void EnergyTable::validate(std::size_t wavelengths) const {
  if (energies.size() != wavelengths) {
    throw ConfigError(fmt::format("energy table has {} entries, sequence has {} wavelengths", energies.size(),
                                  wavelengths));
  }
  for (double e : energies) {
    if (!(e > 0.0) || !std::isfinite(e)) throw ConfigError("energy table values must be positive");
  }
}

WavelengthPackage compensate(const WavelengthPackage& package, const EnergyTable& table) {
  const std::size_t W = package.wavelength_count();
  table.validate(W);
  WavelengthPackage out = package;
  for (std::size_t i = 0; i < out.tensor.size(); ++i) out.tensor[i] /= table.energies[i % W];
  return out;
}

void PhantomGeometry::validate(std::size_t axial, std::size_t lateral) const {
  for (const auto* w : {&blue, &black}) {
    if (w->axial < w->axial_radius || w->lateral < w->lateral_radius || w->axial + w->axial_radius >= axial ||
        w->lateral + w->lateral_radius >= lateral) {
      throw ConfigError(fmt::format("target window at ({}, {}) leaves the {}x{} frame", w->axial, w->lateral,
                                    axial, lateral));
    }
  }
  const auto b = bounds(blue);
  const auto k = bounds(black);
  const bool overlap = b.a0 <= k.a1 && k.a0 <= b.a1 && b.l0 <= k.l1 && k.l0 <= b.l1;
  if (overlap) throw ConfigError("blue and black target windows overlap");
}

std::size_t SpectrumResult::valid_count() const {
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), 0u));
}

SpectrumResult extract_spectrum(const WavelengthPackage& package, const PhantomGeometry& geometry,
                                std::int64_t shift) {
  geometry.validate(package.axial, package.lateral);
  const std::size_t W = package.wavelength_count();
  SpectrumResult r;
  r.shift = shift;
  r.package_index = package.package_index;
  r.wavelengths_nm = package.wavelengths_nm;
  r.frames_used = package.frames_used;
  r.package_flags = package.flags;
  r.ratio.assign(W, std::numeric_limits<double>::quiet_NaN());
  r.peak_blue.assign(W, 0.0);
  r.peak_black.assign(W, 0.0);
  r.flags.assign(W, 0);
  for (std::size_t w = 0; w < W; ++w) {
    if (package.frames_used[w] == 0) {
      r.flags[w] |= kSpectrumMissing;
      continue;
    }
    r.peak_blue[w] = window_peak(package, geometry.blue, w, geometry.metric);
    r.peak_black[w] = window_peak(package, geometry.black, w, geometry.metric);
    if (r.peak_black[w] == 0.0) {
      r.flags[w] |= kSpectrumZeroBlack;
      continue;
    }
    r.ratio[w] = r.peak_blue[w] / r.peak_black[w];
  }
  return r;
}

std::optional<double> ratio_rmse(const SpectrumResult& result, const std::vector<double>& reference) {
  if (reference.size() != result.ratio.size()) {
    throw ConfigError("reference spectrum length does not match the result");
  }
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t w = 0; w < reference.size(); ++w) {
    if (result.flags[w] != 0) continue;
    const double d = result.ratio[w] - reference[w];
    acc += d * d;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return std::sqrt(acc / static_cast<double>(n));
}

void write_spectrum_rows(std::ostream& out, const SpectrumResult& r) {
  for (std::size_t w = 0; w < r.ratio.size(); ++w) {
    fmt::print(out, "{},{},{},{:.17g},{:.17g},{:.17g},{},{}\n", r.shift, r.package_index, r.wavelengths_nm[w],
               r.ratio[w], r.peak_blue[w], r.peak_black[w], r.frames_used[w], r.flags[w]);
  }
}

const SpectrumResult* ShiftAnalysis::for_shift(std::int64_t shift) const {
  for (const auto& r : results) {
    if (r.shift == shift) return &r;
  }
  return nullptr;
}

std::optional<std::int64_t> ShiftAnalysis::argmin_rmse() const {
  std::optional<std::int64_t> best;
  double best_rmse = std::numeric_limits<double>::infinity();
  for (const auto& r : results) {
    if (r.rmse_vs_reference && *r.rmse_vs_reference < best_rmse) {
      best_rmse = *r.rmse_vs_reference;
      best = r.shift;
    }
  }
  return best;
}

ShiftAnalysis shift_analysis(const std::filesystem::path& session_dir, const WavelengthSequence& seq,
                             const PhantomGeometry& geometry, const EnergyTable& table,
                             const std::vector<double>& reference, const ShiftAnalysisOptions& options) {
  if (options.shifts.empty()) throw ConfigError("shift analysis needs at least one shift");
  std::vector<std::int64_t> shifts = options.shifts;
  std::sort(shifts.begin(), shifts.end());
  shifts.erase(std::unique(shifts.begin(), shifts.end()), shifts.end());
  const std::size_t W = seq.size();
  const std::int64_t min_shift = shifts.front();

  ShiftAnalysis analysis;
  std::optional<std::pair<std::size_t, std::size_t>> dims;
  std::vector<std::vector<std::vector<double>>> sums(shifts.size(), std::vector<std::vector<double>>(W));
  std::vector<std::vector<std::uint32_t>> counts(shifts.size(), std::vector<std::uint32_t>(W, 0));

  for_each_packet(session_dir, [&](const wire::StreamPacket& p) {
    ++analysis.frames;
    const std::pair<std::size_t, std::size_t> d{p.header.axial, p.header.lateral};
    if (!dims) {
      dims = d;
      for (auto& per_shift : sums)
        for (auto& plane : per_shift) plane.assign(d.first * d.second, 0.0);
    }
    const std::uint64_t c = p.header.frame_counter;
    if (d != *dims || (options.common_domain && !effective_frame_index(c, min_shift, options.first_effective))) {
      analysis.excluded_frames += options.common_domain ? 1 : shifts.size();
      return;
    }
    for (std::size_t si = 0; si < shifts.size(); ++si) {
      const auto k = effective_frame_index(c, shifts[si], options.first_effective);
      if (!k) {
        ++analysis.excluded_frames;
        continue;
      }
      const auto w = assign_frame_index(seq, *k).wavelength_index;
      p.accumulate_into(sums[si][w]);
      ++counts[si][w];
    }
  });
  if (analysis.frames == 0) {
    throw ConfigError(fmt::format("session {} contains no frames", session_dir.string()));
  }

  for (std::size_t si = 0; si < shifts.size(); ++si) {
    WavelengthPackage agg;
    agg.axial = dims->first;
    agg.lateral = dims->second;
    agg.wavelengths_nm = seq.wavelengths();
    agg.frames_used = counts[si];
    agg.tensor.assign(agg.axial * agg.lateral * W, 0.0);
    for (std::size_t w = 0; w < W; ++w) {
      if (counts[si][w] == 0) {
        agg.incomplete_wavelengths.push_back(static_cast<std::uint32_t>(w));
        continue;
      }
      const double n = counts[si][w];
      for (std::size_t i = 0; i < sums[si][w].size(); ++i) agg.tensor[i * W + w] = sums[si][w][i] / n;
    }
    auto result = extract_spectrum(compensate(agg, table), geometry, shifts[si]);
    result.rmse_vs_reference = ratio_rmse(result, reference);
    analysis.results.push_back(std::move(result));
  }
  return analysis;
}

std::string ConsumerReport::to_csv() const {
  std::string out = "metric,value\n";
  out += fmt::format("packages,{}\n", packages);
  out += fmt::format("rows,{}\n", rows);
  out += fmt::format("gaps,{}\n", gaps);
  out += fmt::format("gap_events,{}\n", gap_events);
  out += fmt::format("last_sequence,{}\n", last_sequence);
  out += fmt::format("torn_reads,{}\n", torn_reads);
  return out;
}

ConsumerReport run_consumer(ExchangeRing& ring, const EnergyTable& table, const PhantomGeometry& geometry,
                            std::ostream& csv, const ConsumerOptions& options, std::stop_token stop) {
  ConsumerReport report;
  csv << kSpectrumCsvHeader << '\n';
  csv.flush();
  auto idle_since = std::chrono::steady_clock::now();
  while (!stop.stop_requested()) {
    // Read `closed` before polling so a package published just before the
    // close is still drained.
    const bool was_closed = ring.closed();
    auto polled = ring.poll(report.last_sequence);
    if (!polled) {
      if (was_closed) break;
      if (options.idle_timeout.count() > 0 &&
          std::chrono::steady_clock::now() - idle_since >= options.idle_timeout) {
        break;
      }
      std::this_thread::sleep_for(options.poll_interval);
      continue;
    }
    idle_since = std::chrono::steady_clock::now();
    if (polled->gap > 0) {
      report.gaps += polled->gap;
      ++report.gap_events;
    }
    const auto spectrum = extract_spectrum(compensate(polled->package, table), geometry);
    write_spectrum_rows(csv, spectrum);
    csv.flush();
    report.rows += spectrum.ratio.size();
    ++report.packages;
    report.last_sequence = polled->sequence;
  }
  report.torn_reads = ring.torn_reads();
  return report;
}

} // namespace pulsesync
