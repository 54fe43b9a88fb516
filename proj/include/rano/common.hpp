#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rano {

/// Error type thrown for contract violations and unrecoverable input problems.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a. Used for content hashes of cache keys, config hashes and
// weight-determinism checks. Not cryptographic.
constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = kFnvOffset) {
  return fnv1a(s.data(), s.size(), h);
}

uint64_t hash_file(const std::filesystem::path& p);

/// splitmix64 finalizer; decorrelates derived seeds.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Deterministic seed derivation: study seed -> axis -> option -> fold -> epoch
/// all flow through labeled derivations so no two streams collide.
inline uint64_t derive_seed(uint64_t base, std::string_view label, uint64_t index = 0) {
  return mix64(fnv1a(label, mix64(base)) ^ mix64(index + 0x51ed2701));
}

std::string to_hex(uint64_t v);

namespace log {

enum class Level { info, warn, error };

using Sink = std::function<void(Level, const std::string&)>;

/// Replace the process-wide sink (default writes to stderr). Returns previous.
Sink set_sink(Sink sink);

void emit(Level level, const std::string& msg);
void info(const std::string& msg);
void warn(const std::string& msg);
void error(const std::string& msg);

}  // namespace log

}  // namespace rano
