#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <string>

namespace advss {

/// Explicitly passed random stream.
///
/// Wraps a 64-bit Mersenne Twister so the full state can be written to a
/// checkpoint and restored bit-exactly. Floating-point draws use the top 53
/// bits of each word, which keeps sequences identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent stream for (seed, stream) via splitmix64 mixing.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi], rejection sampled (no modulo bias).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Tensor of i.i.d. U[0,1) entries, filled in row-major order.
  torch::Tensor uniform_tensor(torch::IntArrayRef shape,
                               torch::ScalarType dtype = torch::kFloat32);

  std::string state() const;
  void restore(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace advss
