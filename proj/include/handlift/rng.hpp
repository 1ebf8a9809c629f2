#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace handlift {

// Counter-based generator used for every random draw in the project.
//
// A stream is identified by (seed, name, index). Its n-th 64-bit output is
//
//     splitmix64_mix(key + (n + 1) * 0x9E3779B97F4A7C15)
//
// where key = splitmix64_mix(splitmix64_mix(seed ^ fnv1a64(name)) + index).
// Streams are therefore random-access and independent of call order in other
// streams, which is what makes datasets and runs reproducible bit-for-bit.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

  std::uint64_t next_u64();
  // Same values as out.size() successive next_u64() calls.
  void fill(std::span<std::uint64_t> out);

  // 53-bit uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; consumes two draws per call.
  double normal();

  bool bernoulli(double p_true);

  // Uniform integer in [0, n), rejection-sampled (no modulo bias).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);
std::uint64_t fnv1a64(std::string_view s);

}  // namespace handlift
