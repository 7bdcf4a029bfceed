#include "pulsesync/exchange_ring.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include <fmt/format.h>
#include <zlib.h>

#include "pulsesync/errors.hpp"

namespace pulsesync {
namespace {

constexpr std::uint64_t kRingMagic = 0x3130474e49525350ull;  // "PSRING01"
constexpr std::size_t kHeaderBytes = 4096;
constexpr std::size_t kSlotHeaderBytes = 64;

constexpr std::size_t kOffMagic = 0;
constexpr std::size_t kOffCapacity = 8;
constexpr std::size_t kOffSlotBytes = 16;
constexpr std::size_t kOffWriteSeq = 64;
constexpr std::size_t kOffReadSeq = 128;
constexpr std::size_t kOffOverruns = 192;
constexpr std::size_t kOffClosed = 256;

constexpr std::size_t kSlotState = 0;
constexpr std::size_t kSlotLength = 8;
constexpr std::size_t kSlotCrc = 16;

constexpr std::uint64_t kWriting = std::uint64_t{1} << 63;
constexpr std::uint64_t kConsumed = std::uint64_t{1} << 62;
constexpr std::uint64_t kSeqMask = kConsumed - 1;

constexpr std::size_t round_up(std::size_t v, std::size_t a) { return (v + a - 1) / a * a; }

std::size_t stride_for(std::size_t slot_bytes) { return kSlotHeaderBytes + round_up(slot_bytes, 64); }

std::size_t region_size(std::uint64_t capacity, std::size_t slot_bytes) {
  return kHeaderBytes + capacity * stride_for(slot_bytes);
}

std::string shm_path(const std::string& name) { return name.starts_with('/') ? name : "/" + name; }

} // namespace

class RingMemory {
 public:
  virtual ~RingMemory() = default;
  std::uint8_t* base() const noexcept { return base_; }

  std::atomic_ref<std::uint64_t> word(std::size_t offset) const {
    return std::atomic_ref<std::uint64_t>(*reinterpret_cast<std::uint64_t*>(base_ + offset));
  }
  std::atomic_ref<std::uint32_t> word32(std::size_t offset) const {
    return std::atomic_ref<std::uint32_t>(*reinterpret_cast<std::uint32_t*>(base_ + offset));
  }

  std::uint64_t capacity() const { return word(kOffCapacity).load(std::memory_order_relaxed); }
  std::size_t slot_bytes() const { return word(kOffSlotBytes).load(std::memory_order_relaxed); }
  std::size_t slot_offset(std::uint64_t seq) const {
    return kHeaderBytes + (seq % capacity()) * stride_for(slot_bytes());
  }

  void initialise(std::uint64_t capacity, std::size_t slot_bytes) {
    word(kOffCapacity).store(capacity, std::memory_order_relaxed);
    word(kOffSlotBytes).store(slot_bytes, std::memory_order_relaxed);
    word(kOffMagic).store(kRingMagic, std::memory_order_release);
  }

 protected:
  std::uint8_t* base_ = nullptr;
};

namespace {

class HeapRingMemory final : public RingMemory {
 public:
  explicit HeapRingMemory(std::size_t bytes) {
    base_ = static_cast<std::uint8_t*>(std::aligned_alloc(64, round_up(bytes, 64)));
    if (base_ == nullptr) throw std::bad_alloc();
    std::memset(base_, 0, bytes);
  }
  ~HeapRingMemory() override { std::free(base_); }
};

class SharedRingMemory final : public RingMemory {
 public:
  SharedRingMemory(std::string path, std::size_t bytes, bool owner)
      : path_(std::move(path)), bytes_(bytes), owner_(owner) {}

  static std::unique_ptr<SharedRingMemory> create(const std::string& path, std::size_t bytes) {
    ::shm_unlink(path.c_str());
    const int fd = ::shm_open(path.c_str(), O_CREAT | O_EXCL | O_RDWR, 0600);
    if (fd < 0) throw ConnectivityError(fmt::format("shm_open({}): {}", path, std::strerror(errno)));
    if (::ftruncate(fd, static_cast<off_t>(bytes)) != 0) {
      const int err = errno;
      ::close(fd);
      ::shm_unlink(path.c_str());
      throw ConnectivityError(fmt::format("ftruncate({}): {}", path, std::strerror(err)));
    }
    auto mem = std::make_unique<SharedRingMemory>(path, bytes, true);
    mem->map(fd);
    return mem;
  }

  static std::unique_ptr<SharedRingMemory> attach(const std::string& path) {
    const int fd = ::shm_open(path.c_str(), O_RDWR, 0);
    if (fd < 0) throw ConnectivityError(fmt::format("no shared ring '{}': {}", path, std::strerror(errno)));
    struct stat st {};
    if (::fstat(fd, &st) != 0 || static_cast<std::size_t>(st.st_size) < kHeaderBytes) {
      ::close(fd);
      throw ConnectivityError(fmt::format("shared ring '{}' is not initialised", path));
    }
    auto mem = std::make_unique<SharedRingMemory>(path, static_cast<std::size_t>(st.st_size), false);
    mem->map(fd);
    if (mem->word(kOffMagic).load(std::memory_order_acquire) != kRingMagic ||
        region_size(mem->capacity(), mem->slot_bytes()) > mem->bytes_) {
      throw ConnectivityError(fmt::format("shared ring '{}' has a bad header", path));
    }
    return mem;
  }

  ~SharedRingMemory() override {
    if (base_ != nullptr) ::munmap(base_, bytes_);
    if (owner_) ::shm_unlink(path_.c_str());
  }

 private:
  void map(int fd) {
    void* p = ::mmap(nullptr, bytes_, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
    ::close(fd);
    if (p == MAP_FAILED) throw ConnectivityError(fmt::format("mmap({}): {}", path_, std::strerror(errno)));
    base_ = static_cast<std::uint8_t*>(p);
  }

  std::string path_;
  std::size_t bytes_;
  bool owner_;
};

void check_geometry(std::uint64_t capacity, std::size_t slot_bytes) {
  if (capacity == 0) throw ConfigError("ring capacity must be positive");
  if (slot_bytes == 0) throw ConfigError("ring slot size must be positive");
}

} // namespace

ExchangeRing::ExchangeRing(std::unique_ptr<RingMemory> memory) : memory_(std::move(memory)) {
  next_sequence_ = memory_->word(kOffWriteSeq).load(std::memory_order_acquire) + 1;
}

ExchangeRing::ExchangeRing(ExchangeRing&&) noexcept = default;
ExchangeRing& ExchangeRing::operator=(ExchangeRing&&) noexcept = default;
ExchangeRing::~ExchangeRing() = default;

ExchangeRing ExchangeRing::create(std::uint64_t capacity, std::size_t slot_bytes) {
  check_geometry(capacity, slot_bytes);
  auto mem = std::make_unique<HeapRingMemory>(region_size(capacity, slot_bytes));
  mem->initialise(capacity, slot_bytes);
  return ExchangeRing(std::move(mem));
}

ExchangeRing ExchangeRing::create_shared(const std::string& name, std::uint64_t capacity, std::size_t slot_bytes) {
  check_geometry(capacity, slot_bytes);
  auto mem = SharedRingMemory::create(shm_path(name), region_size(capacity, slot_bytes));
  mem->initialise(capacity, slot_bytes);
  return ExchangeRing(std::move(mem));
}

ExchangeRing ExchangeRing::attach_shared(const std::string& name) {
  return ExchangeRing(SharedRingMemory::attach(shm_path(name)));
}

std::uint64_t ExchangeRing::publish(const WavelengthPackage& package) {
  auto& m = *memory_;
  const std::size_t size = serialized_package_size(package);
  if (size > m.slot_bytes()) {
    throw std::length_error(fmt::format("package of {} bytes exceeds ring slot of {} bytes", size, m.slot_bytes()));
  }
  const std::uint64_t seq = next_sequence_++;
  const std::size_t slot = m.slot_offset(seq);
  std::uint8_t* payload = m.base() + slot + kSlotHeaderBytes;

  const std::uint64_t previous = m.word(slot + kSlotState).exchange(seq | kWriting, std::memory_order_acq_rel);
  if (previous != 0 && (previous & kConsumed) == 0) {
    m.word(kOffOverruns).fetch_add(1, std::memory_order_acq_rel);
  }
  serialize_package_into(package, std::span(payload, size));
  m.word(slot + kSlotLength).store(size, std::memory_order_relaxed);
  m.word32(slot + kSlotCrc).store(static_cast<std::uint32_t>(::crc32(0L, payload, static_cast<uInt>(size))),
                                  std::memory_order_relaxed);
  m.word(slot + kSlotState).store(seq, std::memory_order_release);
  m.word(kOffWriteSeq).store(seq, std::memory_order_release);
  return seq;
}

std::optional<PolledPackage> ExchangeRing::poll(std::uint64_t last_seen) {
  auto& m = *memory_;
  const std::uint64_t capacity = m.capacity();
  std::uint64_t floor = last_seen + 1;
  for (;;) {
    const std::uint64_t written = m.word(kOffWriteSeq).load(std::memory_order_acquire);
    if (written < floor) return std::nullopt;
    const std::uint64_t oldest = written >= capacity ? written - capacity + 1 : 1;
    const std::uint64_t want = std::max(floor, oldest);
    const std::size_t slot = m.slot_offset(want);
    auto state = m.word(slot + kSlotState);
    const std::uint64_t observed = state.load(std::memory_order_acquire);

    if (observed != want) {
      // Lapped by the producer (or consumed by an earlier handle): skip it.
      if ((observed & kSeqMask) > want || observed == (want | kConsumed)) floor = want + 1;
      continue;
    }

    const std::size_t length = std::min<std::size_t>(m.word(slot + kSlotLength).load(std::memory_order_relaxed),
                                                      m.slot_bytes());
    const std::uint32_t crc = m.word32(slot + kSlotCrc).load(std::memory_order_relaxed);
    scratch_.resize(length);
    std::memcpy(scratch_.data(), m.base() + slot + kSlotHeaderBytes, length);

    std::uint64_t expected = want;
    if (!state.compare_exchange_strong(expected, want | kConsumed, std::memory_order_acq_rel,
                                       std::memory_order_acquire)) {
      ++torn_reads_;
      floor = want + 1;
      continue;
    }
    m.word(kOffReadSeq).store(want, std::memory_order_release);
    if (static_cast<std::uint32_t>(::crc32(0L, scratch_.data(), static_cast<uInt>(length))) != crc) {
      ++torn_reads_;
      floor = want + 1;
      continue;
    }
    PolledPackage out;
    try {
      out.package = deserialize_package(scratch_);
    } catch (const std::invalid_argument&) {
      ++torn_reads_;
      floor = want + 1;
      continue;
    }
    out.sequence = want;
    out.gap = want - last_seen - 1;
    return out;
  }
}

void ExchangeRing::close() { memory_->word(kOffClosed).store(1, std::memory_order_release); }
bool ExchangeRing::closed() const { return memory_->word(kOffClosed).load(std::memory_order_acquire) != 0; }
std::uint64_t ExchangeRing::capacity() const { return memory_->capacity(); }
std::size_t ExchangeRing::slot_bytes() const { return memory_->slot_bytes(); }
std::uint64_t ExchangeRing::write_sequence() const {
  return memory_->word(kOffWriteSeq).load(std::memory_order_acquire);
}
std::uint64_t ExchangeRing::read_sequence() const {
  return memory_->word(kOffReadSeq).load(std::memory_order_acquire);
}
std::uint64_t ExchangeRing::overruns() const {
  return memory_->word(kOffOverruns).load(std::memory_order_acquire);
}

} // namespace pulsesync
