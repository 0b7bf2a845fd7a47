#pragma once

#include <cmath>
#include <cstdint>

namespace crld {

// splitmix64 finalizer; full-avalanche 64-bit mix.
inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Counter-based random stream. The stream identity is the tuple
// (seed, epoch, index, lane); equal tuples always yield identical draws,
// so per-sample streams are independent of worker count and evaluation
// order. `lane` separates multiple consumers of the same sample (e.g. the
// two view branches of a training step).
class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t epoch, uint64_t index, uint64_t lane = 0) {
    uint64_t h = 0x243f6a8885a308d3ull ^ seed;
    h = mix64(h + 0x9e3779b97f4a7c15ull);
    h = mix64(h ^ (epoch + 0x9e3779b97f4a7c15ull));
    h = mix64(h ^ (index + 0x632be59bd9b4e019ull));
    h = mix64(h ^ (lane + 0xc2b2ae3d27d4eb4full));
    state_ = h;
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix64(state_);
  }

  // Uniform double in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n); n > 0.
  uint32_t next_below(uint32_t n) {
    return static_cast<uint32_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller; two uniforms per pair of draws.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - next_double();  // (0, 1]
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace crld
