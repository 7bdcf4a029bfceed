#include <doctest.h>

#include <fstream>

#include "oracles.hpp"
#include "pulsesync/errors.hpp"
#include "pulsesync/raw_session.hpp"

using namespace pulsesync;

namespace {

wire::StreamPacket packet(std::uint64_t counter, std::int16_t v) {
  RFFrame f(2, 2);
  f.samples = {v, static_cast<std::int16_t>(v + 1), static_cast<std::int16_t>(v + 2), static_cast<std::int16_t>(v + 3)};
  f.acquisition_timestamp = static_cast<Nanos>(counter) * 50 * kMillisecond;
  return wire::make_packet(counter, f);
}

SessionManifest manifest() {
  SessionManifest m;
  m.sequence = WavelengthSequence({700, 740, 760, 780}, Layout::Block, 3);
  m.config_hash = "abc123";
  return m;
}

} // namespace

TEST_CASE("manifest json round-trip") {
  auto m = manifest();
  m.axial = 512;
  m.lateral = 128;
  m.first_effective_count = 3;
  const auto back = SessionManifest::from_json(m.to_json());
  CHECK(back.sequence == m.sequence);
  CHECK(back.axial == 512);
  CHECK(back.lateral == 128);
  CHECK(back.first_effective_count == 3);
  CHECK(back.config_hash == "abc123");
  CHECK_THROWS_AS(SessionManifest::from_json("{"), ConfigError);
  CHECK_THROWS_AS(SessionManifest::from_json(R"({"layout":"block"})"), ConfigError);
}

TEST_CASE("writer and reader round-trip packets in order") {
  testutil::TempDir dir("raw");
  {
    RawSessionWriter w(dir.path(), manifest());
    w.set_dims(2, 2);
    for (std::uint64_t c = 2; c < 12; ++c) w.append(packet(c, static_cast<std::int16_t>(c * 10)));
    CHECK(w.records() == 10);
    w.close();
  }
  const auto m = read_manifest(dir.path());
  CHECK(m.axial == 2);
  CHECK(m.sequence == manifest().sequence);
  const auto packets = read_packets(dir.path());
  REQUIRE(packets.size() == 10);
  for (std::size_t i = 0; i < packets.size(); ++i) CHECK(packets[i] == packet(i + 2, static_cast<std::int16_t>((i + 2) * 10)));
}

TEST_CASE("a new writer replaces the previous session log") {
  testutil::TempDir dir("raw");
  {
    RawSessionWriter w(dir.path(), manifest());
    w.append(packet(2, 1));
    w.append(packet(3, 1));
  }
  {
    RawSessionWriter w(dir.path(), manifest());
    w.append(packet(7, 1));
  }
  const auto packets = read_packets(dir.path());
  REQUIRE(packets.size() == 1);
  CHECK(packets[0].header.frame_counter == 7);
}

TEST_CASE("records carry the counter-derived slot") {
  const auto r = make_record(packet(6, 0), manifest().sequence);
  CHECK(r.counter == 6);
  CHECK(r.wavelength_index == 1);
  CHECK(r.package_index == 0);
  CHECK(r.slot_index == 1);
  CHECK(r.frame.at(1, 1) == 3);
}

TEST_CASE("a damaged log yields the intact packets and reports the damage") {
  testutil::TempDir dir("raw");
  {
    RawSessionWriter w(dir.path(), manifest());
    for (std::uint64_t c = 2; c < 6; ++c) w.append(packet(c, 5));
  }
  const auto log = dir.path() / kFrameLogFile;
  std::fstream f(log, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(wire::kHeaderSize + 8 + 9));  // counter of the second packet
  f.put('\x7f');
  f.close();
  std::filesystem::resize_file(log, std::filesystem::file_size(log) - 1);

  std::vector<std::uint64_t> counters;
  const auto scan = for_each_packet(dir.path(), [&](const wire::StreamPacket& p) {
    counters.push_back(p.header.frame_counter);
  });
  CHECK(counters == std::vector<std::uint64_t>{2, 4});
  REQUIRE(scan.errors.size() == 2);
  CHECK(scan.errors[0].fault == wire::HeaderFault::BadCrc);
  CHECK(scan.errors[1].fault == wire::HeaderFault::Truncated);
}

TEST_CASE("write failure surfaces as a storage error") {
  if (!std::filesystem::exists("/dev/full")) return;
  testutil::TempDir dir("raw");
  std::filesystem::create_symlink("/dev/full", dir.path() / kFrameLogFile);
  RawSessionWriter w(dir.path(), manifest());
  CHECK_THROWS_AS(w.append(packet(2, 1)), StorageError);
}

TEST_CASE("missing session is a config error") {
  testutil::TempDir dir("raw");
  CHECK_THROWS_AS(read_manifest(dir.path()), ConfigError);
  CHECK_THROWS_AS(read_packets(dir.path()), ConfigError);
}
