#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace posefree {

// Seeded random source with a serializable state. Draws are defined in terms
// of raw 64-bit engine output so sequences do not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  std::vector<double> normal_vector(std::size_t n, double stddev = 1.0);
  // Derives an independent stream; advances this generator by one draw.
  Rng split();

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace posefree
