#include "pulsesync/scenario.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <zlib.h>

#include "pulsesync/errors.hpp"
#include "pulsesync/package.hpp"

namespace pulsesync {
namespace {

namespace pt = boost::property_tree;

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find(sep, start);
    const auto piece = trim(text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    if (!piece.empty()) out.push_back(piece);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

// Typed lookup with a readable error naming the key.
template <typename T>
T get(const pt::ptree& tree, const std::string& key, T fallback) {
  const auto node = tree.get_optional<std::string>(key);
  if (!node) return fallback;
  std::istringstream in(trim(*node));
  T value{};
  if constexpr (std::is_same_v<T, bool>) {
    std::string s;
    in >> s;
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(fmt::format("key '{}': expected a boolean, got '{}'", key, *node));
  } else {
    in >> value;
    if (in.fail() || !in.eof()) {
      throw ConfigError(fmt::format("key '{}': cannot parse '{}'", key, *node));
    }
    if constexpr (std::is_unsigned_v<T>) {
      if (trim(*node).starts_with('-')) throw ConfigError(fmt::format("key '{}' must be non-negative", key));
    }
    return value;
  }
}

Nanos micros(const pt::ptree& tree, const std::string& key, Nanos fallback) {
  return static_cast<Nanos>(std::llround(get<double>(tree, key, static_cast<double>(fallback) / kMicrosecond) *
                                         kMicrosecond));
}

} // namespace

std::vector<std::int64_t> parse_int_list(std::string_view text) {
  std::vector<std::int64_t> out;
  for (const auto& piece : split(text, ',')) {
    std::string_view p = piece;
    if (p.starts_with('+')) p.remove_prefix(1);
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), v);
    if (ec != std::errc{} || ptr != p.data() + p.size()) {
      throw ConfigError(fmt::format("'{}' is not an integer", piece));
    }
    out.push_back(v);
  }
  return out;
}

std::vector<double> parse_double_list(std::string_view text) {
  std::vector<double> out;
  for (const auto& piece : split(text, ',')) {
    std::istringstream in(piece);
    double v = 0;
    in >> v;
    if (in.fail() || !in.eof()) throw ConfigError(fmt::format("'{}' is not a number", piece));
    out.push_back(v);
  }
  return out;
}

std::vector<double> ScenarioConfig::reference_ratio() const {
  const auto& blue = phantom.target("blue").spectrum;
  const auto& black = phantom.target("black").spectrum;
  std::vector<double> out(blue.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = blue[i] / black[i];
  return out;
}

void ScenarioConfig::validate() const {
  laser.validate();
  phantom.validate(sequence().size());
  if (!phantom.has_validation_targets()) {
    throw ConfigError("phantom must define targets named 'blue' and 'black'");
  }
  pathology.validate();
  energies.validate(sequence().size());
  geometry.validate(phantom.axial, phantom.lateral);
  if (ring_capacity == 0) throw ConfigError("ring capacity must be positive");
  if (first_effective_count == 0) throw ConfigError("first effective count must be at least 1");
  if (shifts.empty()) throw ConfigError("at least one shift is required");
}

std::size_t ScenarioConfig::ring_slot_bytes() const {
  return max_serialized_package_size(phantom.axial, phantom.lateral, sequence().size(),
                                     sequence().frames_per_wavelength());
}

PhantomGeometry geometry_for(const PhantomModel& phantom, std::size_t axial_radius, std::size_t lateral_radius,
                             PeakMetric metric) {
  PhantomGeometry g;
  const auto& blue = phantom.target("blue");
  const auto& black = phantom.target("black");
  g.blue = {blue.axial_position, blue.lateral_position, axial_radius, lateral_radius};
  g.black = {black.axial_position, black.lateral_position, axial_radius, lateral_radius};
  g.metric = metric;
  return g;
}

ScenarioConfig parse_scenario(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("scenario syntax error: {}", e.what()));
  }

  ScenarioConfig c;
  c.config_hash = fmt::format("{:08x}", static_cast<std::uint32_t>(::crc32(
      0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size()))));

  // sequence
  const auto wl = tree.get_optional<std::string>("sequence.wavelengths_nm");
  const auto layout = tree.get_optional<std::string>("sequence.layout");
  const auto n = get<std::uint32_t>(tree, "sequence.frames_per_wavelength", 50);
  c.laser.sequence = WavelengthSequence(wl ? parse_double_list(*wl) : std::vector<double>{700, 740, 760, 780},
                                        layout ? parse_layout(trim(*layout)) : Layout::Cyclic, n);
  c.first_effective_count = get<std::uint64_t>(tree, "sequence.first_effective_count", kFirstEffectiveCount);
  const std::size_t W = c.sequence().size();

  // laser
  c.laser.rep_rate_hz = get<double>(tree, "laser.rep_rate_hz", c.laser.rep_rate_hz);
  c.laser.prep_flashlamp_pulses = get<std::uint32_t>(tree, "laser.prep_flashlamp_pulses", c.laser.prep_flashlamp_pulses);
  c.laser.qswitch_delay = micros(tree, "laser.qswitch_delay_us", c.laser.qswitch_delay);
  const auto packages = get<std::uint64_t>(tree, "laser.packages", 1);
  c.laser.total_effective_pulses =
      get<std::uint64_t>(tree, "laser.total_effective_pulses", 1 + packages * c.sequence().frames_per_package());
  c.laser.energy_jitter = get<double>(tree, "laser.energy_jitter", c.laser.energy_jitter);
  if (auto e = tree.get_optional<std::string>("laser.wavelength_energies")) {
    c.laser.wavelength_energies = parse_double_list(*e);
  }

  // phantom
  auto& ph = c.phantom;
  ph.axial = get<std::size_t>(tree, "phantom.axial", ph.axial);
  ph.lateral = get<std::size_t>(tree, "phantom.lateral", ph.lateral);
  ph.noise_sigma = get<double>(tree, "phantom.noise_sigma", ph.noise_sigma);
  ph.base_amplitude = get<double>(tree, "phantom.base_amplitude", ph.base_amplitude);
  ph.axial_spread = get<double>(tree, "phantom.axial_spread", ph.axial_spread);
  ph.lateral_spread = get<double>(tree, "phantom.lateral_spread", ph.lateral_spread);
  bool custom_targets = false;
  for (const auto& [section, body] : tree) {
    if (!section.starts_with("target.")) continue;
    if (!custom_targets) {
      ph.targets.clear();
      custom_targets = true;
    }
    PhantomTarget t;
    t.name = section.substr(7);
    t.axial_position = get<std::size_t>(body, "axial", 0);
    t.lateral_position = get<std::size_t>(body, "lateral", 0);
    const auto spec = body.get_optional<std::string>("spectrum");
    if (!spec) throw ConfigError(fmt::format("[{}] needs a spectrum", section));
    t.spectrum = parse_double_list(*spec);
    ph.targets.push_back(std::move(t));
  }
  if (!custom_targets && W != 4) {
    throw ConfigError("default phantom spectra cover 4 wavelengths; define [target.blue] and [target.black]");
  }

  // pathology
  auto& pa = c.pathology;
  pa.frame_drop_probability = get<double>(tree, "pathology.frame_drop_probability", pa.frame_drop_probability);
  pa.start_delay_mean = micros(tree, "pathology.start_delay_mean_us", pa.start_delay_mean);
  pa.start_delay_jitter = micros(tree, "pathology.start_delay_jitter_us", pa.start_delay_jitter);
  if (auto bursts = tree.get_optional<std::string>("pathology.busy_bursts")) {
    for (const auto& piece : split(*bursts, ',')) {
      const auto parts = parse_int_list(fmt::format("{}", fmt::join(split(piece, ':'), ",")));
      if (parts.size() != 2 || parts[0] < 0 || parts[1] < 0) {
        throw ConfigError(fmt::format("busy burst '{}' is not start:length", piece));
      }
      pa.busy_bursts.push_back({static_cast<std::uint64_t>(parts[0]), static_cast<std::uint64_t>(parts[1])});
    }
  }

  // daq
  c.timing.record_duration = micros(tree, "daq.record_duration_us", c.timing.record_duration);
  c.timing.delay_per_axial_sample = micros(tree, "daq.delay_per_axial_sample_us", c.timing.delay_per_axial_sample);
  c.timing.realtime = get<bool>(tree, "daq.realtime", false);
  c.pairing_window = micros(tree, "daq.pairing_window_us", c.pairing_window);
  c.counter_timeout = std::chrono::milliseconds(get<std::int64_t>(tree, "daq.counter_timeout_ms", 100));

  // energies: default to the laser's configured per-wavelength means
  if (auto e = tree.get_optional<std::string>("energies.values")) {
    c.energies.energies = parse_double_list(*e);
  } else if (!c.laser.wavelength_energies.empty()) {
    c.energies.energies = c.laser.wavelength_energies;
  } else {
    c.energies = EnergyTable::unity(W);
  }

  // geometry
  const auto metric = trim(tree.get<std::string>("geometry.metric", "max_abs"));
  if (metric != "max_abs" && metric != "mean") {
    throw ConfigError(fmt::format("geometry.metric '{}' must be max_abs or mean", metric));
  }
  if (ph.has_validation_targets()) {
    c.geometry = geometry_for(ph, get<std::size_t>(tree, "geometry.axial_radius", 8),
                              get<std::size_t>(tree, "geometry.lateral_radius", 4),
                              metric == "mean" ? PeakMetric::WindowMean : PeakMetric::MaxAbs);
  }

  if (auto s = tree.get_optional<std::string>("network.server")) c.server = Endpoint::parse(trim(*s));
  c.ring_capacity = get<std::uint64_t>(tree, "ring.capacity", c.ring_capacity);
  c.ring_shm_name = trim(tree.get<std::string>("ring.shm_name", ""));
  c.inactivity_timeout = std::chrono::milliseconds(get<std::int64_t>(tree, "server.inactivity_timeout_ms", 2000));
  c.accept_timeout = std::chrono::milliseconds(get<std::int64_t>(tree, "server.accept_timeout_ms", 30000));
  if (auto s = tree.get_optional<std::string>("validate.shifts")) c.shifts = parse_int_list(*s);
  c.seed = get<std::uint64_t>(tree, "run.seed", c.seed);
  if (auto o = tree.get_optional<std::string>("run.output_dir")) c.output_dir = trim(*o);

  c.validate();
  return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read scenario file {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

} // namespace pulsesync
