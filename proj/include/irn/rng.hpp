#pragma once

#include <cstdint>
#include <string_view>

namespace irn {

// Counter-based splittable generator. Every stream is identified by
// (seed, component, purpose); draws are a pure function of the stream key
// and a draw counter, so parallel workers with disjoint keys can never
// collide and replay is exact regardless of scheduling.
class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t component, std::string_view purpose);

  uint64_t next_u64();
  double next_double();  // uniform on [0, 1)
  double next_normal();  // standard normal, Box-Muller

  // Derive a child stream; `salt` distinguishes siblings (e.g. epoch index).
  RngStream split(uint64_t salt, std::string_view purpose) const;

 private:
  RngStream(uint64_t key) : key_(key) {}

  uint64_t key_;
  uint64_t ctr_ = 0;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace irn
