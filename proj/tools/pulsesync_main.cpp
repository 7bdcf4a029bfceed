// pulsesync: simulate | serve | consume | validate | replay
//
// Exit codes: 0 ok, 1 validation failed, 2 usage or configuration error,
// 3 runtime failure (connectivity, storage).

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stop_token>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "pulsesync/errors.hpp"
#include "pulsesync/harness.hpp"
#include "pulsesync/log.hpp"
#include "pulsesync/raw_session.hpp"
#include "pulsesync/scenario.hpp"

namespace fs = std::filesystem;
using namespace pulsesync;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAssertion = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::stop_source g_stop;

extern "C" void on_signal(int) { g_stop.request_stop(); }

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool realtime = false;
};

ScenarioConfig load(const Common& c) {
  auto cfg = c.config.empty() ? parse_scenario("") : load_scenario(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.realtime) cfg.timing.realtime = true;
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Scenario file (INI); defaults apply when omitted")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Override the scenario seed");
  app->add_option("--out", c.out, "Output directory");
  app->add_flag("--realtime", c.realtime, "Pace the laser at wall-clock rate");
}

void print_daq(const DaqRunReport& r) {
  fmt::print("daq: emitted={} dropped={} dummy_suppressed={} prep_suppressed={} final_count={} virtual_s={:.3f}\n",
             r.emitted, r.dropped, r.suppressed_dummy, r.suppressed_prep, r.final_count,
             static_cast<double>(r.virtual_duration) / kSecond);
}

void print_server(const ServerReport& r) {
  fmt::print("server: packets={} packages={} partial={} missing_frames={} rejects={} decode_errors={} pps={:.1f}\n",
             r.packets, r.packages, r.partial_packages, r.missing_frames, r.rejects(), r.decode_errors,
             r.throughput());
}

int cmd_simulate(const Common& c, const std::string& connect, bool loopback, bool validate_after) {
  const auto cfg = load(c);
  if (loopback) {
    const auto report = run_loopback(cfg, cfg.output_dir);
    print_daq(report.daq);
    print_server(report.server);
    fmt::print("consumer: packages={} rows={} gaps={} ring_overruns={}\n", report.consumer.packages,
               report.consumer.rows, report.consumer.gaps, report.ring_overruns);
    if (!validate_after) return kExitOk;
    ValidateOptions vo;
    vo.shifts = cfg.shifts;
    const auto v = validate_to(cfg.output_dir / kSessionDir, cfg, vo, cfg.output_dir);
    fmt::print("{}", v.to_text());
    return v.pass() ? kExitOk : kExitAssertion;
  }
  const auto endpoint = connect.empty() ? cfg.server : Endpoint::parse(connect);
  const auto report = simulate_to(cfg, endpoint);
  fs::create_directories(cfg.output_dir);
  write_text_file(cfg.output_dir / "daq_report.csv", report.to_csv());
  print_daq(report);
  return kExitOk;
}

std::string ring_name(const ScenarioConfig& cfg, const std::string& override_name) {
  if (!override_name.empty()) return override_name;
  return cfg.ring_shm_name.empty() ? std::string("pulsesync-ring") : cfg.ring_shm_name;
}

int cmd_serve(const Common& c, const std::string& listen, const std::string& ring_override,
              std::chrono::milliseconds linger) {
  const auto cfg = load(c);
  const auto endpoint = listen.empty() ? cfg.server : Endpoint::parse(listen);
  auto ring = ExchangeRing::create_shared(ring_name(cfg, ring_override), cfg.ring_capacity, cfg.ring_slot_bytes());
  const auto report = run_serve(cfg, endpoint, cfg.output_dir, ring, g_stop.get_token());
  print_server(report.server);
  fmt::print("ring: published={} overruns={}\n", report.published, report.ring_overruns);
  // Keep the segment alive until an attached consumer has drained it.
  const auto deadline = std::chrono::steady_clock::now() + linger;
  while (ring.read_sequence() < ring.write_sequence() && std::chrono::steady_clock::now() < deadline &&
         !g_stop.stop_requested()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return kExitOk;
}

int cmd_consume(const Common& c, const std::string& ring_override, std::chrono::milliseconds attach_timeout) {
  const auto cfg = load(c);
  const auto name = ring_name(cfg, ring_override);
  const auto deadline = std::chrono::steady_clock::now() + attach_timeout;
  std::optional<ExchangeRing> ring;
  while (!ring) {
    try {
      ring.emplace(ExchangeRing::attach_shared(name));
    } catch (const ConnectivityError&) {
      if (std::chrono::steady_clock::now() >= deadline || g_stop.stop_requested()) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  }
  fs::create_directories(cfg.output_dir);
  std::ofstream csv(cfg.output_dir / kSpectraCsv, std::ios::trunc);
  if (!csv) throw StorageError(fmt::format("cannot write {}", (cfg.output_dir / kSpectraCsv).string()));
  const auto report = run_consumer(*ring, cfg.energies, cfg.geometry, csv, {}, g_stop.get_token());
  write_text_file(cfg.output_dir / "consumer_report.csv", report.to_csv());
  fmt::print("consumer: packages={} rows={} gaps={} torn_reads={}\n", report.packages, report.rows, report.gaps,
             report.torn_reads);
  return kExitOk;
}

int cmd_validate(const Common& c, const std::string& session, const std::vector<std::int64_t>& shifts,
                 std::optional<std::uint64_t> first_effective) {
  const auto cfg = load(c);
  const fs::path session_dir = session.empty() ? cfg.output_dir / kSessionDir : fs::path(session);
  ValidateOptions vo;
  vo.shifts = shifts.empty() ? cfg.shifts : shifts;
  vo.first_effective = first_effective;
  const auto v = validate_to(session_dir, cfg, vo, cfg.output_dir);
  fmt::print("{}", v.to_text());
  if (!v.pass()) {
    fmt::print(std::cerr, "validation failed: argmin shift {} (want 0), +2/-2 max diff {}\n",
               v.argmin ? fmt::format("{}", *v.argmin) : "none",
               v.pm2_max_diff ? fmt::format("{:.3g}", *v.pm2_max_diff) : "n/a");
    return kExitAssertion;
  }
  return kExitOk;
}

int cmd_replay(const Common& c, const std::string& session, const std::string& connect, double rate_hz) {
  const auto cfg = load(c);
  const fs::path session_dir = session.empty() ? cfg.output_dir / kSessionDir : fs::path(session);
  read_manifest(session_dir);
  auto conn = tcp_connect(connect.empty() ? cfg.server : Endpoint::parse(connect));
  const double rate = rate_hz > 0 ? rate_hz : (c.realtime ? cfg.laser.rep_rate_hz : 0.0);
  const auto r = replay_session(session_dir, *conn, rate);
  fmt::print("replay: packets={} decode_errors={}\n", r.packets, r.decode_errors);
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  init_logging();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  CLI::App app{"Counter-synchronised multi-wavelength acquisition pipeline"};
  app.require_subcommand(1);

  Common common;
  std::string connect, listen, session, ring_override;
  bool loopback = false;
  bool validate_after = false;
  std::vector<std::int64_t> shifts;
  std::optional<std::uint64_t> first_effective;
  double rate_hz = 0.0;
  int linger_ms = 2000;
  int attach_ms = 10000;

  auto* simulate = app.add_subcommand("simulate", "Run laser, counter and DAQ against a server");
  add_common(simulate, common);
  simulate->add_option("--connect", connect, "Server HOST:PORT");
  simulate->add_flag("--loopback", loopback, "Run server, ring and consumer in this process");
  simulate->add_flag("--validate", validate_after, "With --loopback: run the shift validation afterwards");

  auto* serve = app.add_subcommand("serve", "Receive one session, assemble packages, publish to the ring");
  add_common(serve, common);
  serve->add_option("--listen", listen, "Listen HOST:PORT");
  serve->add_option("--ring", ring_override, "Shared-memory ring name");
  serve->add_option("--linger-ms", linger_ms, "Wait for the consumer to drain before exiting")->capture_default_str();

  auto* consume = app.add_subcommand("consume", "Poll the ring and write ratio spectra");
  add_common(consume, common);
  consume->add_option("--ring", ring_override, "Shared-memory ring name");
  consume->add_option("--attach-timeout-ms", attach_ms, "How long to wait for the ring")->capture_default_str();

  auto* validate = app.add_subcommand("validate", "Shift analysis and verdict over a recorded session");
  add_common(validate, common);
  validate->add_option("--session", session, "Session directory (default OUT/session)");
  validate->add_option("--shifts", shifts, "Comma-separated shifts")->delimiter(',');
  validate->add_option("--first-effective", first_effective, "Override the demultiplexing offset");

  auto* replay = app.add_subcommand("replay", "Re-send a recorded session to a server");
  add_common(replay, common);
  replay->add_option("--session", session, "Session directory (default OUT/session)");
  replay->add_option("--connect", connect, "Server HOST:PORT");
  replay->add_option("--rate", rate_hz, "Packets per second; 0 sends as fast as possible");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(common, connect, loopback, validate_after);
    if (*serve) return cmd_serve(common, listen, ring_override, std::chrono::milliseconds(linger_ms));
    if (*consume) return cmd_consume(common, ring_override, std::chrono::milliseconds(attach_ms));
    if (*validate) return cmd_validate(common, session, shifts, first_effective);
    if (*replay) return cmd_replay(common, session, connect, rate_hz);
  } catch (const ConfigError& e) {
    fmt::print(std::cerr, "config error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
