#include "advss/rng.hpp"

#include <limits>
#include <sstream>
#include <stdexcept>

namespace advss {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(engine_());  // full 64-bit range
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return lo + static_cast<std::int64_t>(draw % span);
}

torch::Tensor Rng::uniform_tensor(torch::IntArrayRef shape, torch::ScalarType dtype) {
  auto out = torch::empty(shape, torch::TensorOptions().dtype(torch::kFloat64));
  double* data = out.data_ptr<double>();
  const auto n = out.numel();
  if (dtype == torch::kFloat64) {
    for (std::int64_t i = 0; i < n; ++i) data[i] = uniform();
    return out;
  }
  // 24-bit draws are exact in float32, so the result stays strictly below 1.
  for (std::int64_t i = 0; i < n; ++i)
    data[i] = static_cast<double>(engine_() >> 40) * 0x1.0p-24;
  return out.to(dtype);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  std::mt19937_64 engine;
  is >> engine;
  if (is.fail()) throw std::runtime_error("Rng::restore: malformed generator state");
  engine_ = engine;
}

}  // namespace advss
