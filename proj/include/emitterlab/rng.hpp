#pragma once

#include <cstdint>
#include <random>

namespace emitterlab {

/// Seeded random source with platform-independent variate transforms.
///
/// The standard library's distributions are implementation-defined, so the
/// uniform, exponential and normal draws are derived here directly from the
/// 64-bit Mersenne Twister output. Identical seeds give bit-identical streams
/// on every conforming compiler.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Seed for an independent sub-stream, derived with splitmix64.
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  /// Exponential waiting time with the given rate (mean 1/rate).
  double exponential(double rate);

  double normal();

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace emitterlab
