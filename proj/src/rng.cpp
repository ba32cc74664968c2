#include "irn/rng.hpp"

#include <cmath>

namespace irn {
namespace {

constexpr uint64_t kGamma = 0x9e3779b97f4a7c15ull;

// SplitMix64 finalizer; full-period bijection on u64.
uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= (uint8_t)c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

RngStream::RngStream(uint64_t seed, uint64_t component, std::string_view purpose)
    : key_(mix64(mix64(seed + kGamma) ^ (component * 0xda942042e4dd58b5ull)) ^
           fnv1a(purpose)) {}

uint64_t RngStream::next_u64() { return mix64(key_ + (++ctr_) * kGamma); }

double RngStream::next_double() {
  return (double)(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_normal() {
  if (have_cached_) {
    have_cached_ = false;
    return cached_;
  }
  // Box-Muller; u1 shifted away from 0 so the log is finite.
  double u1 = next_double();
  double u2 = next_double();
  u1 = u1 > 0x1.0p-53 ? u1 : 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586476925286766559 * u2;
  cached_ = r * std::sin(a);
  have_cached_ = true;
  return r * std::cos(a);
}

RngStream RngStream::split(uint64_t salt, std::string_view purpose) const {
  return RngStream(mix64(key_ ^ (salt * kGamma)) ^ fnv1a(purpose));
}

}  // namespace irn
