#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "attrmogen/core/errors.hpp"

namespace attrmogen {

// Deterministic RNG used everywhere. mt19937_64 has a standard-mandated
// sequence; the distribution transforms below are hand-rolled so that draws
// are identical across standard library implementations.
class Rng {
 public:
  Rng() : engine_(0) {}
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1], used where log() must not see zero.
  double uniform_pos() {
    return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (no cached spare; the generator state is
  // exactly the engine state).
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  // Unbiased integer in [0, n).
  int64_t uniform_int(int64_t n) {
    require(n > 0, ErrorClass::parameter, "uniform_int needs n > 0");
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return static_cast<int64_t>(r % un);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream; splitmix64 over (state hash, tag) keeps
  // derived seeds decorrelated from the parent sequence.
  static uint64_t derive_seed(uint64_t seed, uint64_t tag) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    require(!is.fail(), ErrorClass::io, "bad rng state string");
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace attrmogen
