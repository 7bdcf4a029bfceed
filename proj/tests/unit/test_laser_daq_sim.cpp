#include <doctest.h>

#include <algorithm>
#include <set>

#include "oracles.hpp"
#include "pulsesync/counter_link.hpp"
#include "pulsesync/errors.hpp"
#include "pulsesync/laser_daq_sim.hpp"

using namespace pulsesync;

namespace {

PhantomModel small_phantom(double noise = 0.0) {
  PhantomModel m;
  m.axial = 64;
  m.lateral = 16;
  m.noise_sigma = noise;
  m.targets.push_back({"blue", 20, 4, {1.00, 0.80, 0.60, 0.50}});
  m.targets.push_back({"black", 44, 11, {1.0, 1.0, 1.0, 1.0}});
  return m;
}

LaserConfig laser(std::uint32_t prep, std::uint64_t total, std::uint32_t N = 2) {
  LaserConfig c;
  c.prep_flashlamp_pulses = prep;
  c.total_effective_pulses = total;
  c.sequence = WavelengthSequence({700, 740, 760, 780}, Layout::Cyclic, N);
  return c;
}

struct Run {
  DaqRunReport report;
  std::vector<wire::StreamPacket> packets;
};

Run simulate(const LaserConfig& cfg, const DaqPathology& pathology, std::uint64_t seed = 1,
             const PhantomModel& phantom = small_phantom()) {
  CounterEmulator emu;
  CollectingSink sink;
  Run r;
  r.report = run_daq(cfg, phantom, pathology, DaqTiming{}, seed, emu.service(), emu.link(), sink);
  r.packets = std::move(sink.packets);
  return r;
}

std::vector<std::uint64_t> counters(const Run& r) {
  std::vector<std::uint64_t> out;
  for (const auto& p : r.packets) out.push_back(p.header.frame_counter);
  return out;
}

} // namespace

TEST_CASE("trigger schedule: prep flashlamps then pulse pairs") {
  const auto cfg = laser(2, 3);
  const auto s = generate_trigger_schedule(cfg);
  REQUIRE(s.size() == 2 + 2 * 3);
  CHECK(s[0] == TriggerEvent{TriggerKind::Flashlamp, 0});
  CHECK(s[1] == TriggerEvent{TriggerKind::Flashlamp, 50 * kMillisecond});
  for (std::size_t i = 0; i < 3; ++i) {
    const Nanos t = static_cast<Nanos>(2 + i) * 50 * kMillisecond;
    CHECK(s[2 + 2 * i] == TriggerEvent{TriggerKind::Flashlamp, t});
    CHECK(s[3 + 2 * i] == TriggerEvent{TriggerKind::QSwitch, t + 200 * kMicrosecond});
  }
  for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i].timestamp > s[i - 1].timestamp);

  const auto single = generate_trigger_schedule(laser(0, 1));
  REQUIRE(single.size() == 2);
  CHECK(single[0].kind == TriggerKind::Flashlamp);
  CHECK(single[1].kind == TriggerKind::QSwitch);
}

TEST_CASE("trigger schedule replayed through the counter counts every effective pulse") {
  for (std::uint64_t total : {1u, 2u, 17u, 201u}) {
    PulseCounter c;
    for (const auto& e : generate_trigger_schedule(laser(5, total))) c.ingest(e);
    CHECK(c.count() == total);
  }
}

TEST_CASE("laser config validation") {
  auto c = laser(0, 1);
  c.rep_rate_hz = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = laser(0, 1);
  c.qswitch_delay = 50 * kMillisecond;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = laser(0, 0);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = laser(0, 1);
  c.wavelength_energies = {1.0, 1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("fired wavelength follows the programmed order") {
  const WavelengthSequence seq({700, 740, 760, 780}, Layout::Block, 3);
  const auto program = expand_program(seq);
  REQUIRE(program.size() == 12);
  CHECK_FALSE(fired_wavelength(seq, 0));
  CHECK_FALSE(fired_wavelength(seq, 1));
  for (std::uint64_t pulse = 2; pulse < 200; ++pulse) {
    REQUIRE(fired_wavelength(seq, pulse) == program[(pulse - 2) % program.size()]);
  }
}

TEST_CASE("synthesized frame: noiseless peak equals spectrum times base amplitude") {
  const auto ph = small_phantom();
  const auto f = synthesize_frame(ph, 2, 1.0, 42);
  CHECK(f.dims_consistent());
  CHECK(f.at(20, 4) == 6000);
  CHECK(f.at(44, 11) == 10000);
  CHECK(f.at(0, 0) == 0);
  CHECK_FALSE(f.saturated);
  const auto shifted = synthesize_frame(ph, 2, 1.0, 42, 3);
  CHECK(shifted.at(23, 4) == 6000);
}

TEST_CASE("synthesized frame: deterministic for a seed") {
  const auto ph = small_phantom(0.02);
  CHECK(synthesize_frame(ph, 1, 1.03, 99) == synthesize_frame(ph, 1, 1.03, 99));
  CHECK_FALSE(synthesize_frame(ph, 1, 1.03, 99) == synthesize_frame(ph, 1, 1.03, 100));
}

TEST_CASE("synthesized frame: blue/black ratio does not depend on pulse energy") {
  const auto ph = small_phantom();
  for (std::uint32_t w = 0; w < 4; ++w) {
    const auto a = synthesize_frame(ph, w, 1.0, 1);
    const auto b = synthesize_frame(ph, w, 0.731, 1);
    const double ra = static_cast<double>(a.at(20, 4)) / a.at(44, 11);
    const double rb = static_cast<double>(b.at(20, 4)) / b.at(44, 11);
    // integer rounding of a 7310-count peak bounds the difference
    CHECK(ra == doctest::Approx(rb).epsilon(2.0 / 7310));
    CHECK(ra == doctest::Approx(ph.targets[0].spectrum[w]).epsilon(1e-4));
  }
}

TEST_CASE("synthesized frame: overflow saturates and flags") {
  auto ph = small_phantom();
  ph.base_amplitude = 40000;
  const auto f = synthesize_frame(ph, 0, 1.0, 1);
  CHECK(f.saturated);
  CHECK(f.at(20, 4) == 32767);
  CHECK_THROWS(synthesize_frame(ph, 0, 0.0, 1));
  CHECK_THROWS(synthesize_frame(ph, 4, 1.0, 1));
}

TEST_CASE("run daq: pathology-free run streams every frame after the dummy") {
  const auto r = simulate(laser(3, 10), DaqPathology::none());
  CHECK(r.report.emitted == 9);
  CHECK(r.report.suppressed_dummy == 1);
  CHECK(r.report.suppressed_prep == 3);
  CHECK(r.report.dropped == 0);
  CHECK(r.report.final_count == 10);
  std::vector<std::uint64_t> want;
  for (std::uint64_t c = 2; c <= 10; ++c) want.push_back(c);
  CHECK(counters(r) == want);
}

TEST_CASE("run daq: everything dropped") {
  auto p = DaqPathology::none();
  p.frame_drop_probability = 1.0;
  const auto r = simulate(laser(3, 10), p);
  CHECK(r.packets.empty());
  CHECK(r.report.dropped == 10);
  CHECK(r.report.final_count == 10);
}

TEST_CASE("run daq: busy burst removes frames but never shifts later counts") {
  const auto cfg = laser(2, 20);
  const auto clean = simulate(cfg, DaqPathology::none());
  auto p = DaqPathology::none();
  p.busy_bursts.push_back({5, 3});
  const auto busy = simulate(cfg, p);

  const auto a = counters(clean);
  const auto b = counters(busy);
  std::vector<std::uint64_t> missing;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(missing));
  CHECK(missing == std::vector<std::uint64_t>{5, 6, 7});
  CHECK(b[0] == 2);
  CHECK(b[3] == 8);
  // surviving frames are byte-identical to the gapless run
  for (const auto& pkt : busy.packets) {
    const auto it = std::find_if(clean.packets.begin(), clean.packets.end(), [&](const auto& q) {
      return q.header.frame_counter == pkt.header.frame_counter;
    });
    REQUIRE(it != clean.packets.end());
    CHECK(*it == pkt);
  }
}

TEST_CASE("run daq: simulator ground truth equals counter-based assignment, with drops") {
  for (const auto layout : {Layout::Cyclic, Layout::Block}) {
    auto cfg = laser(4, 150, 5);
    cfg.sequence = WavelengthSequence({700, 740, 760, 780}, layout, 5);
    DaqPathology p;
    p.frame_drop_probability = 0.2;
    p.busy_bursts.push_back({30, 7});
    const auto r = simulate(cfg, p, 17, small_phantom(0.02));
    CHECK(r.report.emitted + r.report.dropped + r.report.suppressed_dummy == cfg.total_effective_pulses);
    CHECK(r.report.dropped >= 7);
    for (const auto& f : r.report.frames) {
      REQUIRE(f.counter == f.pulse_number);
      REQUIRE(f.true_wavelength_index == assign_wavelength(cfg.sequence, f.counter).wavelength_index);
    }
  }
}

TEST_CASE("run daq: dead counter aborts with a connectivity error") {
  CounterEmulator emu;
  emu.disconnect();
  CollectingSink sink;
  CHECK_THROWS_AS(run_daq(laser(0, 3), small_phantom(), DaqPathology::none(), DaqTiming{}, 1, emu.service(),
                          emu.link(), sink),
                  ConnectivityError);
}

TEST_CASE("run daq: deterministic for a seed") {
  DaqPathology p;
  p.frame_drop_probability = 0.1;
  const auto a = simulate(laser(1, 40), p, 5, small_phantom(0.02));
  const auto b = simulate(laser(1, 40), p, 5, small_phantom(0.02));
  CHECK(a.packets == b.packets);
}

TEST_CASE("run daq: timing that puts the counter query before the q-switch is rejected") {
  DaqTiming t;
  t.record_duration = 0;
  CounterEmulator emu;
  CollectingSink sink;
  CHECK_THROWS_AS(run_daq(laser(0, 3), small_phantom(), DaqPathology::none(), t, 1, emu.service(), emu.link(), sink),
                  ConfigError);
}
