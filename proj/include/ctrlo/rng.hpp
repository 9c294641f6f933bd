#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

namespace ctrlo {

/// SplitMix64 counter RNG with a Box-Muller normal source. The stream is a
/// pure function of the seed, identical on every platform and build, which
/// is what the reproducibility guarantees of the training harness rest on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  /// Standard normal via Box-Muller, one cached spare per pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stddev * normal();
    return m;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Mixes a purpose tag and indices into a seed so that independent streams
/// (data, slot noise, eval set, ...) never overlap.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0,
                              std::uint64_t b = 0) {
  Rng h(seed ^ (tag * 0xA24BAED4963EE407ull));
  h.next_u64();
  std::uint64_t s = h.next_u64() ^ (a * 0x9FB21C651E98DF25ull);
  Rng h2(s);
  h2.next_u64();
  return h2.next_u64() ^ (b * 0xD6E8FEB86659FD93ull);
}

/// Stable tags for the independent streams used across the codebase.
namespace seed_tag {
constexpr std::uint64_t params = 1;
constexpr std::uint64_t train_scene = 2;
constexpr std::uint64_t slot_noise = 3;
constexpr std::uint64_t eval_scene = 4;
constexpr std::uint64_t codebook = 5;
constexpr std::uint64_t baseline = 6;
constexpr std::uint64_t eval_noise = 7;
}  // namespace seed_tag

}  // namespace ctrlo
