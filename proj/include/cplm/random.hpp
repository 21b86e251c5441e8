#pragma once

#include <cstdint>
#include <random>

namespace cplm {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform [0, 1) doubles from a 64-bit Mersenne twister. The bits-to-double
// map is spelled out so streams are identical across standard libraries.
class UniformStream {
 public:
  explicit UniformStream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  // Independent stream for sub-object `index` (e.g. one per factor matrix).
  static UniformStream split(std::uint64_t seed, std::uint64_t index) {
    return UniformStream(splitmix64(seed) ^ splitmix64(0xa5a5a5a5ULL + index));
  }

  double next() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double next(double lo, double hi) { return lo + (hi - lo) * next(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cplm
