#include <doctest.h>

#include <random>
#include <stdexcept>

#include "pulsesync/package.hpp"

using namespace pulsesync;

namespace {

WavelengthPackage random_package(std::mt19937_64& rng, std::size_t A, std::size_t L, std::size_t W,
                                 std::uint32_t N) {
  WavelengthPackage p;
  p.package_index = rng() % 1000;
  p.axial = A;
  p.lateral = L;
  for (std::size_t w = 0; w < W; ++w) p.wavelengths_nm.push_back(700.0 + 13.5 * static_cast<double>(w));
  std::normal_distribution<double> v(0.0, 1000.0);
  p.tensor.resize(A * L * W);
  for (auto& x : p.tensor) x = v(rng);
  p.frames_expected = N;
  for (std::size_t w = 0; w < W; ++w) {
    const auto used = static_cast<std::uint32_t>(rng() % (N + 1));
    p.frames_used.push_back(used);
    for (std::uint32_t s = used; s < N; ++s) p.missing_frames.push_back({static_cast<std::uint32_t>(w), s});
    if (used < N) p.incomplete_wavelengths.push_back(static_cast<std::uint32_t>(w));
  }
  p.min_counter = rng() % 100;
  p.max_counter = p.min_counter + rng() % 100;
  p.flags = static_cast<std::uint32_t>(rng() % 4);
  return p;
}

} // namespace

TEST_CASE("tensor indexing puts the wavelength fastest") {
  WavelengthPackage p;
  p.axial = 2;
  p.lateral = 3;
  p.wavelengths_nm = {700, 740};
  p.tensor.assign(12, 0.0);
  p.at(1, 2, 1) = 5.0;
  CHECK(p.tensor[11] == 5.0);
  p.at(0, 1, 0) = 3.0;
  CHECK(p.tensor[2] == 3.0);
  const auto plane = p.slice(1);
  REQUIRE(plane.size() == 6);
  CHECK(plane[5] == 5.0);
  CHECK(plane[1] == 0.0);
}

TEST_CASE("serialization round-trips and stays within the size bound") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 200; ++i) {
    const std::size_t A = 1 + rng() % 9, L = 1 + rng() % 9, W = 1 + rng() % 6;
    const auto N = static_cast<std::uint32_t>(1 + rng() % 7);
    const auto p = random_package(rng, A, L, W, N);
    const auto bytes = serialize_package(p);
    REQUIRE(bytes.size() == serialized_package_size(p));
    REQUIRE(bytes.size() <= max_serialized_package_size(A, L, W, N));
    REQUIRE(deserialize_package(bytes) == p);
  }
}

TEST_CASE("malformed images are rejected") {
  std::mt19937_64 rng(5);
  const auto bytes = serialize_package(random_package(rng, 3, 4, 2, 3));
  CHECK_THROWS_AS(deserialize_package(std::span(bytes).first(bytes.size() - 1)), std::invalid_argument);
  CHECK_THROWS_AS(deserialize_package(std::span(bytes).first(10)), std::invalid_argument);
  auto bad = bytes;
  bad[0] ^= 1;
  CHECK_THROWS_AS(deserialize_package(bad), std::invalid_argument);
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(deserialize_package(longer), std::invalid_argument);
}
