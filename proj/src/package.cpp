#include "pulsesync/package.hpp"

#include <cstring>
#include <stdexcept>

namespace pulsesync {
namespace {

constexpr std::uint64_t kPackageMagic = 0x31474b5041505350ull;  // "PSPAPKG1"
constexpr std::size_t kFixedFields = 13;

class Writer {
 public:
  explicit Writer(std::span<std::uint8_t> out) : out_(out) {}
  template <typename T>
  void put(const T& v) {
    std::memcpy(out_.data() + pos_, &v, sizeof(T));
    pos_ += sizeof(T);
  }
  template <typename T>
  void put_array(const std::vector<T>& v) {
    if (!v.empty()) std::memcpy(out_.data() + pos_, v.data(), v.size() * sizeof(T));
    pos_ += v.size() * sizeof(T);
  }

 private:
  std::span<std::uint8_t> out_;
  std::size_t pos_ = 0;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  template <typename T>
  std::vector<T> get_array(std::uint64_t n) {
    if (n > in_.size() / sizeof(T)) throw std::invalid_argument("package image truncated");
    need(n * sizeof(T));
    std::vector<T> v(n);
    if (n) std::memcpy(v.data(), in_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return v;
  }
  bool exhausted() const noexcept { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw std::invalid_argument("package image truncated");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

} // namespace

std::vector<double> WavelengthPackage::slice(std::size_t w) const {
  std::vector<double> out(axial * lateral);
  const std::size_t W = wavelengths_nm.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = tensor[i * W + w];
  return out;
}

std::size_t serialized_package_size(const WavelengthPackage& p) noexcept {
  return kFixedFields * sizeof(std::uint64_t) + p.wavelengths_nm.size() * sizeof(double) +
         p.tensor.size() * sizeof(double) + p.frames_used.size() * sizeof(std::uint32_t) +
         p.missing_frames.size() * sizeof(MissingSlot) +
         p.incomplete_wavelengths.size() * sizeof(std::uint32_t);
}

std::size_t max_serialized_package_size(std::size_t axial, std::size_t lateral, std::size_t wavelengths,
                                        std::size_t frames_per_wavelength) {
  return kFixedFields * sizeof(std::uint64_t) + wavelengths * sizeof(double) +
         axial * lateral * wavelengths * sizeof(double) + wavelengths * sizeof(std::uint32_t) +
         wavelengths * frames_per_wavelength * sizeof(MissingSlot) + wavelengths * sizeof(std::uint32_t);
}

void serialize_package_into(const WavelengthPackage& p, std::span<std::uint8_t> out) {
  if (out.size() < serialized_package_size(p)) throw std::length_error("package buffer too small");
  Writer w(out);
  w.put(kPackageMagic);
  w.put<std::uint64_t>(p.package_index);
  w.put<std::uint64_t>(p.axial);
  w.put<std::uint64_t>(p.lateral);
  w.put<std::uint64_t>(p.wavelengths_nm.size());
  w.put<std::uint64_t>(p.tensor.size());
  w.put<std::uint64_t>(p.frames_used.size());
  w.put<std::uint64_t>(p.missing_frames.size());
  w.put<std::uint64_t>(p.incomplete_wavelengths.size());
  w.put<std::uint64_t>(p.frames_expected);
  w.put<std::uint64_t>(p.min_counter);
  w.put<std::uint64_t>(p.max_counter);
  w.put<std::uint64_t>(p.flags);
  w.put_array(p.wavelengths_nm);
  w.put_array(p.tensor);
  w.put_array(p.frames_used);
  w.put_array(p.missing_frames);
  w.put_array(p.incomplete_wavelengths);
}

std::vector<std::uint8_t> serialize_package(const WavelengthPackage& p) {
  std::vector<std::uint8_t> out(serialized_package_size(p));
  serialize_package_into(p, out);
  return out;
}

WavelengthPackage deserialize_package(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.get<std::uint64_t>() != kPackageMagic) throw std::invalid_argument("not a package image");
  WavelengthPackage p;
  p.package_index = r.get<std::uint64_t>();
  p.axial = r.get<std::uint64_t>();
  p.lateral = r.get<std::uint64_t>();
  const auto n_wl = r.get<std::uint64_t>();
  const auto n_tensor = r.get<std::uint64_t>();
  const auto n_used = r.get<std::uint64_t>();
  const auto n_missing = r.get<std::uint64_t>();
  const auto n_incomplete = r.get<std::uint64_t>();
  p.frames_expected = static_cast<std::uint32_t>(r.get<std::uint64_t>());
  p.min_counter = r.get<std::uint64_t>();
  p.max_counter = r.get<std::uint64_t>();
  p.flags = static_cast<std::uint32_t>(r.get<std::uint64_t>());
  p.wavelengths_nm = r.get_array<double>(n_wl);
  p.tensor = r.get_array<double>(n_tensor);
  p.frames_used = r.get_array<std::uint32_t>(n_used);
  p.missing_frames = r.get_array<MissingSlot>(n_missing);
  p.incomplete_wavelengths = r.get_array<std::uint32_t>(n_incomplete);
  if (!r.exhausted() || p.tensor.size() != p.axial * p.lateral * n_wl) {
    throw std::invalid_argument("package image inconsistent");
  }
  return p;
}

} // namespace pulsesync
