#include "pulsesync/harness.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pulsesync/counter_link.hpp"
#include "pulsesync/errors.hpp"
#include "pulsesync/raw_session.hpp"

namespace pulsesync {
namespace {

ServerOptions server_options(const ScenarioConfig& config, const Endpoint& listen,
                             const std::filesystem::path& raw_dir) {
  ServerOptions o;
  o.listen = listen;
  o.sequence = config.sequence();
  o.first_effective_count = config.first_effective_count;
  o.raw_dir = raw_dir;
  o.config_hash = config.config_hash;
  o.inactivity_timeout = config.inactivity_timeout;
  o.accept_timeout = config.accept_timeout;
  return o;
}

// Runs `body` and stores any exception for the joining thread.
template <typename F>
void capture(std::exception_ptr& slot, F&& body) {
  try {
    body();
  } catch (...) {
    slot = std::current_exception();
  }
}

} // namespace

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.flush();
  if (!out) throw StorageError(fmt::format("cannot write {}", path.string()));
}

DaqRunReport simulate_into(const ScenarioConfig& config, ByteChannel& channel) {
  CounterEmulator emulator(config.pairing_window, config.counter_timeout);
  ChannelPacketSink sink(channel);
  auto report = run_daq(config.laser, config.phantom, config.pathology, config.timing, config.seed,
                        emulator.service(), emulator.link(), sink);
  channel.close();
  return report;
}

DaqRunReport simulate_to(const ScenarioConfig& config, const Endpoint& server) {
  auto conn = tcp_connect(server);
  return simulate_into(config, *conn);
}

LoopbackReport run_loopback(const ScenarioConfig& config, const std::filesystem::path& out_dir,
                            const LoopbackOptions& options) {
  std::filesystem::create_directories(out_dir);
  const auto raw_dir = options.persist ? out_dir / kSessionDir : std::filesystem::path{};
  auto ring = ExchangeRing::create(config.ring_capacity, config.ring_slot_bytes());

  LoopbackReport report;
  std::ofstream csv_file;
  std::ostream null_stream(nullptr);
  std::ostream* csv = &null_stream;
  if (options.write_spectra) {
    csv_file.open(out_dir / kSpectraCsv, std::ios::trunc);
    if (!csv_file) throw StorageError(fmt::format("cannot write {}", (out_dir / kSpectraCsv).string()));
    csv = &csv_file;
  }

  std::exception_ptr consumer_error;
  std::jthread consumer([&] {
    capture(consumer_error, [&] { report.consumer = run_consumer(ring, config.energies, config.geometry, *csv); });
  });

  StreamServer server(server_options(config, {"127.0.0.1", 0}, raw_dir),
                      [&](const WavelengthPackage& p) { ring.publish(p); });

  std::exception_ptr server_error;
  std::exception_ptr daq_error;
  if (options.tcp) {
    std::jthread serving([&] { capture(server_error, [&] { report.server = server.run(); }); });
    capture(daq_error, [&] {
      auto conn = tcp_connect(server.endpoint());
      try {
        report.daq = simulate_into(config, *conn);
      } catch (...) {
        conn->close();
        throw;
      }
    });
  } else {
    auto [daq_end, server_end] = make_memory_channel_pair();
    std::jthread serving([&, end = server_end.get()] {
      capture(server_error, [&] { report.server = server.run_channel(*end); });
    });
    capture(daq_error, [&] {
      try {
        report.daq = simulate_into(config, *daq_end);
      } catch (...) {
        daq_end->close();
        throw;
      }
    });
  }
  // Both serving threads have joined here; the consumer drains and exits.
  ring.close();
  consumer.join();
  report.ring_overruns = ring.overruns();

  for (const auto& e : {daq_error, server_error, consumer_error}) {
    if (e) std::rethrow_exception(e);
  }
  write_text_file(out_dir / "daq_report.csv", report.daq.to_csv());
  write_text_file(out_dir / "server_report.csv", report.server.to_csv());
  write_text_file(out_dir / "consumer_report.csv",
                  report.consumer.to_csv() + fmt::format("ring_overruns,{}\n", report.ring_overruns));
  return report;
}

ServeReport run_serve(const ScenarioConfig& config, const Endpoint& listen, const std::filesystem::path& out_dir,
                      ExchangeRing& ring, std::stop_token stop) {
  std::filesystem::create_directories(out_dir);
  ServeReport report;
  StreamServer server(server_options(config, listen, out_dir / kSessionDir), [&](const WavelengthPackage& p) {
    ring.publish(p);
    ++report.published;
  });
  spdlog::info("listening on {}", server.endpoint().to_string());
  try {
    report.server = server.run(stop);
  } catch (...) {
    ring.close();
    throw;
  }
  ring.close();
  report.ring_overruns = ring.overruns();
  write_text_file(out_dir / "server_report.csv",
                  report.server.to_csv() + fmt::format("ring_overruns,{}\n", report.ring_overruns));
  return report;
}

std::string Verdict::to_text() const {
  std::string out = fmt::format("verdict,{}\n", pass() ? "PASS" : "FAIL");
  out += fmt::format("argmin_shift,{}\n", argmin ? fmt::format("{}", *argmin) : std::string("none"));
  out += fmt::format("argmin_at_zero,{}\n", argmin_ok ? "yes" : "no");
  for (const auto& r : analysis.results) {
    out += fmt::format("rmse_shift_{},{}\n", r.shift,
                       r.rmse_vs_reference ? fmt::format("{:.9g}", *r.rmse_vs_reference) : std::string("nan"));
  }
  if (pm2_applicable) {
    out += fmt::format("pm2_max_abs_diff,{}\n", pm2_max_diff ? fmt::format("{:.3g}", *pm2_max_diff) : "nan");
    out += fmt::format("pm2_tolerance,{:.0e}\n", kEquivalenceTolerance);
    out += fmt::format("pm2_equivalent,{}\n", pm2_ok ? "yes" : "no");
  } else {
    out += "pm2_equivalent,not_applicable\n";
  }
  out += fmt::format("frames,{}\n", analysis.frames);
  out += fmt::format("excluded_frames,{}\n", analysis.excluded_frames);
  return out;
}

Verdict validate_session(const std::filesystem::path& session_dir, const ScenarioConfig& config,
                         const ValidateOptions& options) {
  const auto manifest = read_manifest(session_dir);
  const auto& seq = manifest.sequence;
  if (seq.size() != config.sequence().size()) {
    throw ConfigError(fmt::format("session has {} wavelengths, scenario has {}", seq.size(),
                                  config.sequence().size()));
  }
  ShiftAnalysisOptions sa;
  sa.shifts = options.shifts;
  sa.first_effective = options.first_effective.value_or(manifest.first_effective_count);

  Verdict v;
  v.reference = config.reference_ratio();
  v.analysis = shift_analysis(session_dir, seq, config.geometry, config.energies, v.reference, sa);
  v.argmin = v.analysis.argmin_rmse();
  v.argmin_ok = v.argmin == std::int64_t{0};

  const auto* plus = v.analysis.for_shift(2);
  const auto* minus = v.analysis.for_shift(-2);
  // +2 and -2 select the same phase only when W divides 4 in cyclic order.
  v.pm2_applicable = plus && minus && seq.layout() == Layout::Cyclic && 4 % seq.size() == 0;
  if (v.pm2_applicable) {
    double worst = 0.0;
    std::size_t compared = 0;
    for (std::size_t w = 0; w < seq.size(); ++w) {
      if (plus->flags[w] != 0 || minus->flags[w] != 0) continue;
      worst = std::max(worst, std::abs(plus->ratio[w] - minus->ratio[w]));
      ++compared;
    }
    if (compared > 0) v.pm2_max_diff = worst;
    v.pm2_ok = v.pm2_max_diff && *v.pm2_max_diff <= kEquivalenceTolerance;
  }
  return v;
}

Verdict validate_to(const std::filesystem::path& session_dir, const ScenarioConfig& config,
                    const ValidateOptions& options, const std::filesystem::path& out_dir) {
  auto v = validate_session(session_dir, config, options);
  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir / kShiftCsv, std::ios::trunc);
  csv << kSpectrumCsvHeader << '\n';
  for (const auto& r : v.analysis.results) write_spectrum_rows(csv, r);
  csv.flush();
  if (!csv) throw StorageError(fmt::format("cannot write {}", (out_dir / kShiftCsv).string()));
  write_text_file(out_dir / kVerdictFile, v.to_text());
  return v;
}

ReplayReport replay_session(const std::filesystem::path& session_dir, ByteChannel& channel, double rate_hz) {
  ReplayReport report;
  std::vector<std::uint8_t> buf;
  const auto start = std::chrono::steady_clock::now();
  const auto scan = for_each_packet(session_dir, [&](const wire::StreamPacket& p) {
    if (rate_hz > 0.0) {
      std::this_thread::sleep_until(start + std::chrono::nanoseconds(static_cast<std::int64_t>(
                                                std::llround(static_cast<double>(report.packets) * 1e9 / rate_hz))));
    }
    buf.clear();
    wire::append_packet(p, buf);
    channel.write_all(std::span<const std::uint8_t>(buf));
    ++report.packets;
  });
  channel.close();
  report.decode_errors = scan.errors.size();
  return report;
}

} // namespace pulsesync
